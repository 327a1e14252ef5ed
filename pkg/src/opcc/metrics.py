"""Selective-prediction metrics over answered queries.

Given per-query confidences c(q) and losses l(q), sweeping a threshold tau
traces the risk-coverage curve:

    coverage(tau) = (1/|Q|) * sum I[c(q) >= tau]
    risk(tau)     = sum I[c(q) >= tau] * l(q) / sum I[c(q) >= tau]

The curve is linearly interpolated between its operating points (distinct
confidence values), starts at (0, 0) and ends at (1, r_f) where r_f is the
loss at full coverage. AURCC integrates it; RPP counts confidence/loss
ordering conflicts over query pairs; CR_K measures how many of K equal
coverage bins some threshold can reach.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .confidence import QueryAnswer
from .queries import PolicyComparisonQuery

__all__ = [
    "AnsweredQuery",
    "RiskCoverageCurve",
    "ZeroCoverageError",
    "zero_one_loss",
    "evaluate_answers",
    "coverage",
    "selective_risk",
    "build_rcc",
    "aurcc",
    "rpp",
    "coverage_resolution",
]


class ZeroCoverageError(ValueError):
    """Selective risk is undefined when no query is covered."""


@dataclass(frozen=True)
class AnsweredQuery:
    confidence: float
    loss: float


def zero_one_loss(label: int, prediction: int) -> float:
    return float(label != prediction)


def evaluate_answers(queries: Sequence[PolicyComparisonQuery], answers: Sequence[QueryAnswer],
                     loss_fn: Callable[[int, int], float] = zero_one_loss) -> list[AnsweredQuery]:
    """Pair each answer's confidence with its loss against the true label."""
    if len(queries) != len(answers):
        raise ValueError("queries and answers differ in length")
    return [AnsweredQuery(a.confidence, loss_fn(q.label, a.prediction))
            for q, a in zip(queries, answers)]


def _columns(answers: Sequence[AnsweredQuery]) -> tuple[np.ndarray, np.ndarray]:
    if len(answers) == 0:
        raise ValueError("need at least one answered query")
    conf = np.array([a.confidence for a in answers])
    loss = np.array([a.loss for a in answers])
    return conf, loss


def coverage(answers: Sequence[AnsweredQuery], tau: float) -> float:
    """Fraction of queries with confidence at least ``tau``."""
    conf, _ = _columns(answers)
    return float((conf >= tau).mean())


def selective_risk(answers: Sequence[AnsweredQuery], tau: float) -> float:
    """Mean loss over the covered queries; undefined at zero coverage."""
    conf, loss = _columns(answers)
    covered = conf >= tau
    n = int(covered.sum())
    if n == 0:
        raise ZeroCoverageError(f"no query has confidence >= {tau}")
    return float(loss[covered].sum() / n)


@dataclass(frozen=True)
class RiskCoverageCurve:
    """Operating points (coverage, risk), plus the thresholds that induced
    them (the first point is the zero-coverage anchor with threshold +inf)."""

    points: np.ndarray      # [k, 2], coverage ascending
    thresholds: np.ndarray  # [k]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("curve needs at least the two endpoint rows")
        if tuple(pts[0]) != (0.0, 0.0):
            raise ValueError("curve must start at (0, 0)")
        if pts[-1, 0] != 1.0:
            raise ValueError("curve must end at coverage 1")
        if not (np.diff(pts[:, 0]) > 0).all():
            raise ValueError("coverages must be strictly increasing")

    @property
    def coverages(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def risks(self) -> np.ndarray:
        return self.points[:, 1]


def build_rcc(answers: Sequence[AnsweredQuery]) -> RiskCoverageCurve:
    """Sweep the distinct confidence values as thresholds, high to low.

    Each threshold contributes one (coverage, risk) point; a sentinel above
    the maximum confidence anchors the curve at (0, 0). Duplicate coverages
    cannot arise from distinct thresholds, but equal confidences collapse to
    a single operating point.
    """
    conf, loss = _columns(answers)
    order = np.argsort(-conf, kind="stable")
    conf_sorted = conf[order]
    loss_sorted = loss[order]
    n = len(conf_sorted)
    cum_loss = np.cumsum(loss_sorted)
    # Last index of each run of equal confidences = one operating point.
    boundaries = np.nonzero(np.diff(conf_sorted))[0]
    ends = np.append(boundaries, n - 1)
    coverages = [0.0]
    risks = [0.0]
    thresholds = [np.inf]
    for end in ends:
        k = end + 1
        coverages.append(k / n)
        risks.append(cum_loss[end] / k)
        thresholds.append(conf_sorted[end])
    return RiskCoverageCurve(np.column_stack([coverages, risks]), np.array(thresholds))


def aurcc(curve: RiskCoverageCurve) -> float:
    """Trapezoidal area under the linearly interpolated curve on [0, 1]."""
    c = curve.coverages
    r = curve.risks
    return float(0.5 * np.sum((r[1:] + r[:-1]) * np.diff(c)))


def rpp(answers: Sequence[AnsweredQuery]) -> float:
    """Fraction of ordered pairs with l(q1) < l(q2) but c(q1) < c(q2)."""
    conf, loss = _columns(answers)
    n = len(conf)
    count = 0
    block = 512
    for start in range(0, n, block):
        l1 = loss[start:start + block, None]
        c1 = conf[start:start + block, None]
        count += int(((l1 < loss[None, :]) & (c1 < conf[None, :])).sum())
    return count / (n * n)


def coverage_resolution(answers: Sequence[AnsweredQuery], k: int) -> float:
    """Fraction of K equal coverage bins reachable by some threshold.

    Bin i < K spans [(i-1)/K, i/K); the last bin is closed at 1. The
    achieved coverages are those of the distinct confidence thresholds plus
    0 (any threshold above the maximum). Bin membership is computed in
    integer arithmetic, so exact bin boundaries are classified exactly.
    """
    if k < 1:
        raise ValueError("need at least one bin")
    conf, _ = _columns(answers)
    n = len(conf)
    counts = {0}
    for tau in np.unique(conf):
        counts.add(int((conf >= tau).sum()))
    bins = {min((c * k) // n, k - 1) for c in counts}
    return len(bins) / k
