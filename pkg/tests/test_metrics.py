import math
from fractions import Fraction

import numpy as np
import pytest

from opcc.metrics import (AnsweredQuery, RiskCoverageCurve, ZeroCoverageError,
                          aurcc, build_rcc, coverage, coverage_resolution,
                          evaluate_answers, rpp, selective_risk, zero_one_loss)


# ---------------------------------------------------------------------------
# independent brute-force references (loops and explicit enumeration only)

def coverage_bf(answers, tau):
    n = 0
    for a in answers:
        if a.confidence >= tau:
            n += 1
    return n / len(answers)


def risk_bf(answers, tau):
    total, n = 0.0, 0
    for a in answers:
        if a.confidence >= tau:
            total += a.loss
            n += 1
    return total / n


def rcc_bf(answers):
    taus = sorted({a.confidence for a in answers}, reverse=True)
    points = [(0.0, 0.0)]
    for tau in taus:
        points.append((coverage_bf(answers, tau), risk_bf(answers, tau)))
    return points


def aurcc_bf(answers, step=1e-4):
    """Rectangle-sum integration of the linear interpolant at the given step."""
    points = rcc_bf(answers)
    total = 0.0
    for (c0, r0), (c1, r1) in zip(points, points[1:]):
        width = c1 - c0
        k = max(1, math.ceil(width / step))
        dx = width / k
        for j in range(k):
            mid = c0 + (j + 0.5) * dx
            frac = (mid - c0) / width
            total += (r0 + frac * (r1 - r0)) * dx
    return total


def rpp_bf(answers):
    n = len(answers)
    count = 0
    for q1 in answers:
        for q2 in answers:
            if q1.loss < q2.loss and q1.confidence < q2.confidence:
                count += 1
    return count / (n * n)


def cr_bf(answers, k):
    n = len(answers)
    achieved = {Fraction(0)}
    for tau in {a.confidence for a in answers}:
        achieved.add(Fraction(sum(1 for a in answers if a.confidence >= tau), n))
    occupied = set()
    for cov in achieved:
        for i in range(1, k + 1):
            lo, hi = Fraction(i - 1, k), Fraction(i, k)
            if (lo <= cov < hi) or (i == k and lo <= cov <= 1):
                occupied.add(i)
    return len(occupied) / k


def make(confidences, losses):
    return [AnsweredQuery(float(c), float(l)) for c, l in zip(confidences, losses)]


# ---------------------------------------------------------------------------
# direct examples

def test_coverage_examples():
    answers = make([0.2, 0.5, 0.9], [0, 0, 0])
    assert coverage(answers, 0.5) == pytest.approx(2 / 3)
    assert coverage(answers, 0.0) == 1.0
    assert coverage(answers, 0.9001) == 0.0


def test_selective_risk_examples():
    answers = make([0.9, 0.2], [1, 0])
    assert selective_risk(answers, 0.5) == 1.0
    assert selective_risk(answers, 0.1) == 0.5
    with pytest.raises(ZeroCoverageError):
        selective_risk(answers, 0.95)


def test_build_rcc_two_query_sweep():
    # Hand threshold sweep: tau=0.9 covers the correct query, tau=0.1 covers both.
    answers = make([0.9, 0.1], [0, 1])
    curve = build_rcc(answers)
    assert np.allclose(curve.points, [(0.0, 0.0), (0.5, 0.0), (1.0, 0.5)])
    assert curve.thresholds[0] == np.inf
    assert list(curve.thresholds[1:]) == [0.9, 0.1]


def test_build_rcc_tied_confidences_collapse():
    answers = make([0.4, 0.4, 0.4], [1, 0, 1])
    curve = build_rcc(answers)
    assert np.allclose(curve.points, [(0.0, 0.0), (1.0, 2 / 3)])


def test_rcc_zero_loss_everywhere():
    answers = make([0.3, 0.6, 0.8], [0, 0, 0])
    curve = build_rcc(answers)
    assert np.all(curve.risks == 0.0)
    assert aurcc(curve) == 0.0  # zero-risk predictor floors the area at 0


def test_aurcc_hand_trapezoid():
    curve = RiskCoverageCurve(np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.5]]),
                              np.array([np.inf, 0.9, 0.1]))
    assert aurcc(curve) == pytest.approx(0.125)


def test_rpp_examples():
    assert rpp(make([0.9, 0.1], [0, 1])) == 0.0
    assert rpp(make([0.1, 0.9], [0, 1])) == 0.25  # 1 conflict among 4 ordered pairs
    assert rpp(make([0.2, 0.5, 0.9], [1, 1, 1])) == 0.0


def test_coverage_resolution_examples():
    # coverages {0, 0.5, 1} with K=10 occupy bins 1, 6, and 10
    answers = make([0.9, 0.1], [0, 0])
    assert coverage_resolution(answers, 10) == pytest.approx(0.3)
    # a single distinct confidence reaches only coverages {0, 1}
    answers = make([0.7, 0.7, 0.7], [0, 0, 0])
    assert coverage_resolution(answers, 10) == pytest.approx(0.2)
    # K distinct coverages k/K in distinct bins
    answers = make(np.linspace(0.1, 1.0, 10), np.zeros(10))
    assert coverage_resolution(answers, 10) == 1.0


def test_curve_endpoint_validation():
    with pytest.raises(ValueError):
        RiskCoverageCurve(np.array([[0.1, 0.0], [1.0, 0.5]]), np.array([np.inf, 0.0]))
    with pytest.raises(ValueError):
        RiskCoverageCurve(np.array([[0.0, 0.0], [0.9, 0.5]]), np.array([np.inf, 0.0]))


def test_empty_answers_rejected():
    with pytest.raises(ValueError):
        coverage([], 0.5)


# ---------------------------------------------------------------------------
# oracle equivalence and invariants on random instances

def random_instances(n_instances, max_q=50, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        n = int(rng.integers(1, max_q + 1))
        conf = rng.random(n)
        if rng.random() < 0.3:  # exercise ties
            conf = np.round(conf, 1)
        loss = (rng.random(n) < rng.random()).astype(float)
        yield make(conf, loss)


def test_metrics_match_bruteforce_oracles():
    for answers in random_instances(200, seed=42):
        taus = sorted({a.confidence for a in answers})
        for tau in taus:
            assert abs(coverage(answers, tau) - coverage_bf(answers, tau)) <= 1e-9
            assert abs(selective_risk(answers, tau) - risk_bf(answers, tau)) <= 1e-9
        curve = build_rcc(answers)
        expected = np.array(rcc_bf(answers))
        assert curve.points.shape == expected.shape
        assert np.max(np.abs(curve.points - expected)) <= 1e-9
        assert abs(aurcc(curve) - aurcc_bf(answers)) <= 1e-9
        assert abs(rpp(answers) - rpp_bf(answers)) <= 1e-9
        assert abs(coverage_resolution(answers, 10) - cr_bf(answers, 10)) <= 1e-9


def test_metric_ranges():
    for answers in random_instances(50, seed=9):
        curve = build_rcc(answers)
        a = aurcc(curve)
        assert 0.0 <= a <= float(curve.risks.max()) + 1e-12
        assert 0.0 <= rpp(answers) <= 0.25
        assert 0.0 < coverage_resolution(answers, 10) <= 1.0
        # endpoints: (0, 0) and (1, r_f) exactly
        assert curve.points[0, 0] == 0.0 and curve.points[0, 1] == 0.0
        assert curve.points[-1, 0] == 1.0
        assert curve.points[-1, 1] == pytest.approx(np.mean([x.loss for x in answers]), abs=1e-12)


def test_invariance_to_monotone_confidence_transform():
    def transform(c):
        return 0.1 + 0.8 / (1.0 + math.exp(-3.0 * (c - 0.4)))

    for answers in random_instances(40, seed=17):
        mapped = [AnsweredQuery(transform(a.confidence), a.loss) for a in answers]
        assert aurcc(build_rcc(answers)) == pytest.approx(aurcc(build_rcc(mapped)), abs=1e-12)
        assert rpp(answers) == pytest.approx(rpp(mapped), abs=1e-12)
        assert coverage_resolution(answers, 10) == pytest.approx(
            coverage_resolution(mapped, 10), abs=1e-12)


def test_random_confidence_aurcc_approaches_full_coverage_risk():
    rng = np.random.default_rng(123)
    n, r_f = 2000, 0.3
    loss = np.zeros(n)
    loss[:int(r_f * n)] = 1.0
    areas = []
    for _ in range(20):
        conf = rng.random(n)
        areas.append(aurcc(build_rcc(make(conf, loss))))
    assert abs(np.mean(areas) - r_f) <= 0.02


def test_perfectly_ordered_confidences_analytic_aurcc():
    # all correct answers above all incorrect ones, distinct confidences:
    # risk(c) = max(0, (c - p) / c), so AURCC -> (1 - p) + p ln p
    n, p = 2000, 0.5
    n_correct = int(p * n)
    conf = np.concatenate([np.linspace(0.6, 1.0, n_correct),
                           np.linspace(0.0, 0.4, n - n_correct)])
    loss = np.concatenate([np.zeros(n_correct), np.ones(n - n_correct)])
    expected = (1 - p) + p * math.log(p)
    assert abs(aurcc(build_rcc(make(conf, loss))) - expected) <= 0.01


def test_evaluate_answers_zero_one_loss():
    from opcc.confidence import QueryAnswer
    from opcc.queries import PolicyComparisonQuery

    q = PolicyComparisonQuery(np.zeros(1), "a", np.zeros(1), "b", 5, 1.0, 2.0, 1)
    answered = evaluate_answers([q, q], [QueryAnswer(1, 0.8, "ev"), QueryAnswer(0, 0.3, "ev")])
    assert [a.loss for a in answered] == [0.0, 1.0]
    assert [a.confidence for a in answered] == [0.8, 0.3]
    assert zero_one_loss(1, 1) == 0.0 and zero_one_loss(0, 1) == 1.0
