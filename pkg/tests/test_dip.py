import numpy as np
import pytest
from scipy.optimize import linprog

from src.analysis.dip import dip_statistic, hartigan_dip, uniform_null
from src.core.errors import TooFewPoints


def test_equally_spaced_minimum():
    for n in (4, 10, 37):
        assert dip_statistic(np.arange(n, dtype=float)) == pytest.approx(1 / (2 * n))


def test_constant_sample():
    assert dip_statistic([2.0] * 6) == pytest.approx(1 / 12)


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        dip_statistic([1.0, 2.0, 3.0])


def test_dip_bounds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.standard_normal(int(rng.integers(4, 60)))
        d = dip_statistic(x)
        assert 1 / (2 * len(x)) - 1e-12 <= d <= 0.25 + 1e-12


def _distance_to_unimodal(xs, left, right):
    """
    Smallest sup distance from the empirical CDF of sorted distinct `xs` to a CDF
    that is convex through the knots in `left` and concave through those in `right`.

    A knot is (sample index, targets): the CDF value at that sample must lie within t
    of every target. Knot values are the LP variables, t is the last one.
    """
    knots = left + right
    size = len(knots) + 1
    rows, bounds = [], []

    def row(coefs, bound):
        r = np.zeros(size)
        for idx, value in coefs:
            r[idx] += value
        rows.append(r)
        bounds.append(bound)

    for k, (_, targets) in enumerate(knots):
        for f in targets:
            row([(k, 1.0), (-1, -1.0)], f)
            row([(k, -1.0), (-1, -1.0)], -f)
    for k in range(len(knots) - 1):
        row([(k, 1.0), (k + 1, -1.0)], 0.0)
    for part, sign in ((range(len(left)), 1.0), (range(len(left), len(knots)), -1.0)):
        part = list(part)
        for a, b, c in zip(part, part[1:], part[2:]):
            xa, xb, xc = (xs[knots[i][0]] for i in (a, b, c))
            # convex: slope(a, b) <= slope(b, c); concave flips the sign
            row([(b, sign / (xb - xa)), (a, -sign / (xb - xa)),
                 (c, -sign / (xc - xb)), (b, sign / (xc - xb))], 0.0)
    cost = np.zeros(size)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.array(bounds),
                  bounds=[(0.0, 1.0)] * (size - 1) + [(0.0, None)], method="highs")
    assert res.status == 0
    return res.fun


def _dip_by_linear_programming(sample):
    """Dip as the distance to the nearest unimodal CDF, minimised over every mode position."""
    xs = np.sort(np.asarray(sample, dtype=np.float64))
    n = len(xs)
    both = [(i, (i / n, (i + 1) / n)) for i in range(n)]
    best = np.inf
    for m in range(n):
        # mode at a sample, with a jump there
        left = both[:m] + [(m, (m / n,))]
        right = [(m, ((m + 1) / n,))] + both[m + 1:]
        best = min(best, _distance_to_unimodal(xs, left, right))
    for m in range(n - 1):
        # mode strictly between two samples
        best = min(best, _distance_to_unimodal(xs, both[: m + 1], both[m + 1:]))
    return best


def test_dip_matches_nearest_unimodal_cdf():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(4, 11))
        spread = rng.uniform(0, 6)
        x = rng.standard_normal(n) + spread * (rng.uniform(size=n) < 0.5)
        assert dip_statistic(x) == pytest.approx(_dip_by_linear_programming(x), abs=1e-6)


def test_order_does_not_matter():
    x = np.random.default_rng(1).standard_normal(30)
    assert dip_statistic(x) == dip_statistic(x[::-1])


def test_bimodal_sample_is_significant():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(0, 0.3, 25), rng.normal(10, 0.3, 25)])
    res = hartigan_dip(x, boots=500, seed=1)
    assert res.statistic > 0.15
    assert res.pvalue < 0.01


def test_unimodal_sample_not_significant():
    x = np.random.default_rng(3).standard_normal(200)
    assert hartigan_dip(x, boots=300, seed=1).pvalue > 0.05


def test_null_is_deterministic_and_sorted():
    a = uniform_null(12, 200, 5)
    b = uniform_null.__wrapped__(12, 200, 5)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) >= 0)
    assert hartigan_dip(np.arange(12.0), boots=200, seed=5).pvalue == pytest.approx(1.0)
