"""Policy-comparison query sets: scripted policy families, candidate
generation, ground-truth labeling, gap filtering, and selection.

A comparison query packages two (state, policy) sides and a horizon; its
ground-truth label is 1 exactly when the first side's value is smaller.
Candidates whose value gap falls below a threshold are discarded as too
ambiguous to score, and the survivors are subsampled per horizon.

Policy families are scripted controllers of strictly ordered quality
(verified by Monte-Carlo evaluation at construction): right-biased walkers
with decreasing bias on the chain, and goal-seeking proportional controllers
with decreasing gain and increasing action noise on the point mazes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .envs import ChainWorld, PointMaze
from .mdp import Policy, ValueQuery, policy_value_dp, policy_value_mc_batched, rollout_return

__all__ = [
    "PolicyComparisonQuery",
    "CandidateQuery",
    "QuerySet",
    "PolicyOrderingError",
    "EmptyQuerySetError",
    "make_policy_family",
    "generate_candidates",
    "label_filter_select",
    "max_return",
    "save_query_set",
    "load_query_set",
]


class PolicyOrderingError(RuntimeError):
    """Scripted policy family failed its return-ordering check."""


class EmptyQuerySetError(RuntimeError):
    """Every candidate was filtered out by the gap threshold."""


@dataclass(frozen=True)
class CandidateQuery:
    s: np.ndarray
    policy_a_id: str
    s_hat: np.ndarray
    policy_b_id: str
    horizon: int


@dataclass(frozen=True)
class PolicyComparisonQuery:
    s: np.ndarray
    policy_a_id: str
    s_hat: np.ndarray
    policy_b_id: str
    horizon: int
    value_a: float
    value_b: float
    label: int

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.label != int(self.value_a < self.value_b):
            raise ValueError("label must equal I[value_a < value_b]")


@dataclass(frozen=True)
class QuerySet:
    queries: tuple[PolicyComparisonQuery, ...]
    horizons: tuple[int, ...]
    gap_threshold: float
    env_id: str
    seed: int
    gamma: float
    n_rollouts: int
    n_policies: int

    def __post_init__(self) -> None:
        for q in self.queries:
            if q.horizon not in self.horizons:
                raise ValueError(f"query horizon {q.horizon} not in {self.horizons}")
            if abs(q.value_a - q.value_b) < self.gap_threshold:
                raise ValueError("query violates the gap threshold")

    def __len__(self) -> int:
        return len(self.queries)


def max_return(env, horizon: int, gamma: float) -> float:
    """Largest achievable discounted return over ``horizon`` steps."""
    r_max = float(env.reward_table.max()) if isinstance(env, ChainWorld) else 1.0
    if gamma == 1.0:
        return r_max * horizon
    return r_max * (1.0 - gamma ** horizon) / (1.0 - gamma)


def _chain_bias_policy(bias: float) -> Policy:
    probs = np.array([1.0 - bias, bias])

    def decide(state, t, rng):
        return np.array([1.0 if rng.random() < bias else 0.0])

    def decide_batch(states, t, rng):
        return (rng.random(states.shape[0]) < bias).astype(float)[:, None]

    return Policy(decide=decide, id=f"chain-bias{bias:.3f}",
                  action_probs=lambda s, t: probs, decide_batch=decide_batch)


def _maze_pd_policy(env: PointMaze, gain: float, noise: float) -> Policy:
    goal = env.goal_region.center
    kd = 0.8 * gain
    bound = env.action_bound

    def decide(state, t, rng):
        a = gain * (goal - state[:2]) - kd * state[2:]
        if noise > 0:
            a = a + noise * rng.standard_normal(2)
        return np.clip(a, -bound, bound)

    def decide_batch(states, t, rng):
        a = gain * (goal - states[:, :2]) - kd * states[:, 2:]
        if noise > 0:
            a = a + noise * rng.standard_normal(a.shape)
        return np.clip(a, -bound, bound)

    return Policy(decide=decide, id=f"pd-gain{gain:.2f}-noise{noise:.2f}",
                  decide_batch=decide_batch)


def _episodic_return(env, policy: Policy, n_episodes: int, seed: int) -> float:
    total = 0.0
    for e in range(n_episodes):
        rng = np.random.default_rng(seed + e)
        s = env.reset(rng)
        total += rollout_return(env, policy, s, env.max_steps, 1.0, rng)
    return total / n_episodes


def make_policy_family(env, n_policies: int, seed: int = 0, n_eval_episodes: int = 100,
                       verify: bool = True) -> list[Policy]:
    """Scripted policies of strictly decreasing quality (best first).

    The ordering is checked by Monte-Carlo evaluation of mean undiscounted
    episodic returns (common episode seeds across policies); a failed check
    raises :class:`PolicyOrderingError`. ``verify=False`` skips the check,
    e.g. when rebuilding a family whose ids a query file references.
    """
    if n_policies < 2:
        raise ValueError("need at least 2 policies for comparison queries")
    if isinstance(env, ChainWorld):
        biases = np.linspace(0.95, 0.55, n_policies)
        policies = [_chain_bias_policy(float(b)) for b in biases]
    elif isinstance(env, PointMaze):
        gains = np.linspace(1.0, 0.2, n_policies)
        noises = np.linspace(0.0, 0.5, n_policies)
        policies = [_maze_pd_policy(env, float(g), float(s)) for g, s in zip(gains, noises)]
    else:
        raise TypeError(f"no scripted policy family for {type(env).__name__}")

    if verify:
        returns = [_episodic_return(env, p, n_eval_episodes, seed) for p in policies]
        for a, b in zip(returns, returns[1:]):
            if not a > b:
                raise PolicyOrderingError(
                    f"mean returns not strictly decreasing: {np.round(returns, 3).tolist()}")
    return policies


def generate_candidates(env, policies: Sequence[Policy], initial_states: Sequence[np.ndarray],
                        horizons: Sequence[int], n_per_horizon: int, seed: int) -> list[CandidateQuery]:
    """Random candidate queries, half same-state and half different-state.

    Each candidate draws a distinct (unordered-uniform) pair of policies and
    uniform initial states. Deterministic given ``seed``.
    """
    if len(policies) < 2:
        raise ValueError("need at least 2 policies")
    if not initial_states:
        raise ValueError("need at least one initial state")
    if n_per_horizon < 1:
        raise ValueError("n_per_horizon must be >= 1")
    rng = np.random.default_rng(seed)
    candidates = []
    for h in horizons:
        n_same = n_per_horizon // 2
        for i in range(n_per_horizon):
            ia, ib = rng.choice(len(policies), size=2, replace=False)
            s = initial_states[rng.integers(0, len(initial_states))]
            if i < n_same:
                s_hat = s
            else:
                s_hat = initial_states[rng.integers(0, len(initial_states))]
            candidates.append(CandidateQuery(np.asarray(s, dtype=float), policies[ia].id,
                                             np.asarray(s_hat, dtype=float), policies[ib].id,
                                             int(h)))
    return candidates


def _ground_truth_value(env, policy: Policy, state: np.ndarray, horizon: int,
                        gamma: float, n_rollouts: int, seed: int, exact: bool) -> float:
    query = ValueQuery(state=state, policy=policy, horizon=horizon, gamma=gamma)
    if exact:
        return policy_value_dp(env, query)
    return policy_value_mc_batched(env, query, n_rollouts, seed)[0]


def label_filter_select(env, candidates: Sequence[CandidateQuery], policies: Mapping[str, Policy],
                        gamma: float, n_rollouts: int, gap_threshold: float | None,
                        n_select: int, seed: int, gap_frac: float = 0.1) -> QuerySet:
    """Label candidates with ground-truth values, drop small gaps, subsample.

    Values come from the exact DP oracle on tabular environments and from
    Monte-Carlo rollouts of the true environment otherwise (candidate j uses
    child seeds ``seed + 2j`` and ``seed + 2j + 1`` for its two sides).
    ``gap_threshold=None`` applies, per horizon, the fraction ``gap_frac`` of
    the maximum achievable discounted return. Survivors are uniformly
    subsampled down to ``n_select`` per horizon. Raises
    :class:`EmptyQuerySetError` when nothing survives.
    """
    if n_select < 1:
        raise ValueError("n_select must be >= 1")
    if gap_threshold is not None and gap_threshold < 0:
        raise ValueError("gap_threshold must be >= 0")
    exact = isinstance(env, ChainWorld) and all(p.action_probs is not None for p in policies.values())
    horizons = tuple(sorted({c.horizon for c in candidates}))
    thresholds = {h: (gap_threshold if gap_threshold is not None
                      else gap_frac * max_return(env, h, gamma)) for h in horizons}

    survivors: dict[int, list[PolicyComparisonQuery]] = {h: [] for h in horizons}
    for j, cand in enumerate(candidates):
        va = _ground_truth_value(env, policies[cand.policy_a_id], cand.s, cand.horizon,
                                 gamma, n_rollouts, seed + 2 * j, exact)
        vb = _ground_truth_value(env, policies[cand.policy_b_id], cand.s_hat, cand.horizon,
                                 gamma, n_rollouts, seed + 2 * j + 1, exact)
        if abs(va - vb) < thresholds[cand.horizon]:
            continue
        survivors[cand.horizon].append(PolicyComparisonQuery(
            cand.s, cand.policy_a_id, cand.s_hat, cand.policy_b_id, cand.horizon,
            va, vb, int(va < vb)))

    rng = np.random.default_rng(seed)
    selected: list[PolicyComparisonQuery] = []
    for h in horizons:
        pool = survivors[h]
        if not pool:
            continue
        keep = min(n_select, len(pool))
        idx = np.sort(rng.choice(len(pool), size=keep, replace=False))
        selected.extend(pool[i] for i in idx)
    if not selected:
        raise EmptyQuerySetError(
            f"no candidate survived the gap thresholds {thresholds}")
    return QuerySet(tuple(selected), horizons, float(min(thresholds.values())),
                    getattr(env, "id", ""), seed, gamma, n_rollouts, len(policies))


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_query_set(query_set: QuerySet, path) -> None:
    path = Path(path)
    obs_dim = len(query_set.queries[0].s)
    header = {
        "format": "opcc-queries", "version": 1,
        "env_id": query_set.env_id, "gamma": query_set.gamma,
        "horizons": list(query_set.horizons),
        "gap_threshold": query_set.gap_threshold,
        "seed": query_set.seed, "n_rollouts": query_set.n_rollouts,
        "n_policies": query_set.n_policies,
        "obs_dim": obs_dim, "n": len(query_set),
    }
    lines = [json.dumps(header)]
    for q in query_set.queries:
        lines.append(" ".join([
            _floats(q.s), q.policy_a_id, _floats(q.s_hat), q.policy_b_id,
            str(q.horizon), repr(q.value_a), repr(q.value_b), str(q.label),
        ]))
    path.write_text("\n".join(lines) + "\n")


def load_query_set(path) -> QuerySet:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "opcc-queries":
            raise ValueError(f"{path} is not a query-set file")
        d = header["obs_dim"]
        queries = []
        for _ in range(header["n"]):
            parts = fh.readline().split()
            s = np.array([float(v) for v in parts[:d]])
            policy_a = parts[d]
            s_hat = np.array([float(v) for v in parts[d + 1:2 * d + 1]])
            policy_b = parts[2 * d + 1]
            horizon = int(parts[2 * d + 2])
            value_a, value_b = float(parts[2 * d + 3]), float(parts[2 * d + 4])
            label = int(parts[2 * d + 5])
            queries.append(PolicyComparisonQuery(s, policy_a, s_hat, policy_b,
                                                 horizon, value_a, value_b, label))
    return QuerySet(tuple(queries), tuple(header["horizons"]), header["gap_threshold"],
                    header["env_id"], header["seed"], header["gamma"],
                    header["n_rollouts"], header["n_policies"])
