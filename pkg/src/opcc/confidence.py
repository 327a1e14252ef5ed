"""Turning ensemble value estimates into predictions with confidence values.

For a comparison query, each ensemble member Monte-Carlo-estimates the two
policy values, giving M pairs (V_i, V-hat_i). Three scores map those pairs to
a binary prediction ("is the first value smaller?") and a confidence in
[0, 1]:

* EV (ensemble voting): majority vote of V_i < V-hat_i; confidence is the
  agreeing fraction, rescaled from [0.5, 1] to [0, 1].
* PCI (paired interval): t-statistic of the per-member differences; the
  confidence is the largest interval level that excludes zero, i.e.
  2 * F_t(|t|; M-1) - 1.
* U-PCI (unpaired interval): compares the two means with the sum of their
  standard errors; the largest level at which the two intervals stay
  disjoint, again via the t CDF with M-1 degrees of freedom.

Ties (a 50/50 vote, or a zero mean difference) resolve to prediction 0 with
confidence 0, so ambiguous queries abstain first under any threshold sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dynamics import Ensemble, rollout_values_batch
from .mdp import Policy
from .queries import PolicyComparisonQuery
from .tdist import t_cdf

__all__ = [
    "ValuePairs",
    "QueryAnswer",
    "METHODS",
    "estimate_value_pairs",
    "confidence_ev",
    "confidence_pci",
    "confidence_upci",
    "answer_from_pairs",
]

METHODS = ("ev", "pci", "u-pci")


@dataclass(frozen=True)
class ValuePairs:
    """Per-member value estimates for the two sides of one query."""

    v: np.ndarray
    v_hat: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=float)
        v_hat = np.asarray(self.v_hat, dtype=float)
        if v.shape != v_hat.shape or v.ndim != 1 or len(v) < 1:
            raise ValueError("value pairs must be two equal-length 1-D arrays")
        if not (np.isfinite(v).all() and np.isfinite(v_hat).all()):
            raise ValueError("value estimates must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v_hat", v_hat)

    def __len__(self) -> int:
        return len(self.v)


@dataclass(frozen=True)
class QueryAnswer:
    prediction: int
    confidence: float
    method: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def estimate_value_pairs(ensemble: Ensemble, query: PolicyComparisonQuery,
                         policies: Mapping[str, Policy], gamma: float,
                         n_rollouts_per_member: int, mode: str, seed: int) -> ValuePairs:
    """Monte-Carlo value-estimate pairs, one per ensemble member.

    V_i averages ``n_rollouts_per_member`` model rollouts of the first
    policy from the first state through member i (likewise V-hat_i for the
    second side). Member i draws from a generator seeded ``seed + i``.
    """
    if n_rollouts_per_member < 1:
        raise ValueError("n_rollouts_per_member must be >= 1")
    pol_a = policies[query.policy_a_id]
    pol_b = policies[query.policy_b_id]
    v = np.empty(len(ensemble))
    v_hat = np.empty(len(ensemble))
    for i, member in enumerate(ensemble.members):
        rng = np.random.default_rng(seed + i)
        v[i] = rollout_values_batch(member, pol_a, query.s, query.horizon, gamma,
                                    mode, rng, n_rollouts_per_member,
                                    ensemble.termination_fn).mean()
        v_hat[i] = rollout_values_batch(member, pol_b, query.s_hat, query.horizon, gamma,
                                        mode, rng, n_rollouts_per_member,
                                        ensemble.termination_fn).mean()
    return ValuePairs(v, v_hat)


def confidence_ev(pairs: ValuePairs) -> QueryAnswer:
    """Majority vote over I[V_i < V-hat_i], agreement rescaled to [0, 1]."""
    m = len(pairs)
    k = int((pairs.v < pairs.v_hat).sum())
    if 2 * k == m:
        return QueryAnswer(0, 0.0, "ev")
    prediction = int(2 * k > m)
    frac = max(k, m - k) / m
    return QueryAnswer(prediction, 2.0 * (frac - 0.5), "ev")


def confidence_pci(pairs: ValuePairs) -> QueryAnswer:
    """Paired t-interval on the per-member differences V_i - V-hat_i."""
    m = len(pairs)
    if m < 2:
        raise ValueError("PCI needs at least 2 value pairs")
    d = pairs.v - pairs.v_hat
    d_mean = float(d.mean())
    d_std = float(d.std(ddof=1))
    prediction = int(d_mean < 0.0)
    if d_std == 0.0:
        return QueryAnswer(prediction, 0.0 if d_mean == 0.0 else 1.0, "pci")
    stat = abs(d_mean) * math.sqrt(m) / d_std
    return QueryAnswer(prediction, 2.0 * t_cdf(stat, m - 1) - 1.0, "pci")


def confidence_upci(pairs: ValuePairs) -> QueryAnswer:
    """Unpaired intervals: largest level at which the two stay disjoint."""
    m = len(pairs)
    if m < 2:
        raise ValueError("U-PCI needs at least 2 value pairs")
    mean_a = float(pairs.v.mean())
    mean_b = float(pairs.v_hat.mean())
    se_a = float(pairs.v.std(ddof=1)) / math.sqrt(m)
    se_b = float(pairs.v_hat.std(ddof=1)) / math.sqrt(m)
    prediction = int(mean_a < mean_b)
    se_sum = se_a + se_b
    if se_sum == 0.0:
        return QueryAnswer(prediction, 0.0 if mean_a == mean_b else 1.0, "u-pci")
    stat = abs(mean_a - mean_b) / se_sum
    return QueryAnswer(prediction, 2.0 * t_cdf(stat, m - 1) - 1.0, "u-pci")


_DISPATCH = {"ev": confidence_ev, "pci": confidence_pci, "u-pci": confidence_upci}


def answer_from_pairs(pairs: ValuePairs, method: str) -> QueryAnswer:
    try:
        fn = _DISPATCH[method]
    except KeyError:
        raise ValueError(f"unknown confidence method {method!r}; known: {METHODS}") from None
    return fn(pairs)
