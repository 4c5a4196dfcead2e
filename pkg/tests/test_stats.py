from itertools import combinations, permutations, product

import numpy as np
import pytest
from scipy import stats as ss

from src.analysis.stats import (
    TINY,
    anova_mean_squares,
    cohens_kappa,
    fdr_by,
    fisher_average,
    has_ties,
    icc,
    icc_f_test,
    kendall_tau,
    paired_t,
    parallel_analysis,
    pca,
    pearson_r,
    standardize,
    tau_significance,
    varimax,
    wilcoxon_signed_rank,
)
from src.core.errors import (
    BoundaryR,
    DegenerateAgreement,
    DegenerateInput,
    InvalidP,
    RankDeficient,
    TooFewNonzero,
    ZeroVariance,
)


def _tau_b(x, y):
    conc = disc = tx = ty = 0
    for i, j in combinations(range(len(x)), 2):
        dx, dy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif dx == dy:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / np.sqrt((conc + disc + tx) * (conc + disc + ty))


def _by_oracle(p, q):
    m = len(p)
    c = sum(1 / i for i in range(1, m + 1))
    order = np.argsort(p)
    k_star = 0
    for k in range(1, m + 1):
        if p[order[k - 1]] <= k * q / (m * c):
            k_star = k
    reject = np.zeros(m, dtype=bool)
    reject[order[:k_star]] = True
    return reject


def _kappa_oracle(a, b):
    n = len(a)
    labels = sorted(set(a) | set(b))
    p_o = sum(x == y for x, y in zip(a, b)) / n
    p_e = sum((list(a).count(c) / n) * (list(b).count(c) / n) for c in labels)
    if np.isclose(p_e, 1.0):
        return float("nan"), p_e
    return (p_o - p_e) / (1 - p_e), p_e


def _icc_oracle(m):
    n, k = m.shape
    grand = m.mean()
    ssr = sum(k * (m[i].mean() - grand) ** 2 for i in range(n))
    ssc = sum(n * (m[:, j].mean() - grand) ** 2 for j in range(k))
    sst = sum((m[i, j] - grand) ** 2 for i in range(n) for j in range(k))
    msr, msc = ssr / (n - 1), ssc / (k - 1)
    msw = (sst - ssr) / (n * (k - 1))
    mse = (sst - ssr - ssc) / ((n - 1) * (k - 1))
    return msr, msc, msw, mse


# ── Kendall tau ───────────────────────────────────────────────────────────────

def test_tau_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert kendall_tau(x, x) == pytest.approx(1.0)
    assert kendall_tau(x, -x) == pytest.approx(-1.0)
    assert kendall_tau(x, [1, 3, 2, 4]) == pytest.approx(2 / 3)


def test_tau_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(4, 15))
        x = rng.integers(0, 5, size=n).astype(float)
        y = rng.integers(0, 5, size=n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        assert kendall_tau(x, y) == pytest.approx(_tau_b(x, y), abs=1e-10)


def test_tau_antisymmetric_and_rank_invariant():
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = int(rng.integers(4, 30))
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        tau = kendall_tau(x, y)
        assert kendall_tau(x, -y) == pytest.approx(-tau, abs=1e-12)
        assert kendall_tau(y, x) == pytest.approx(tau, abs=1e-12)
        assert kendall_tau(np.exp(x), y ** 3 + 2 * y) == pytest.approx(tau, abs=1e-12)


def test_tau_constant_input():
    with pytest.raises(DegenerateInput):
        kendall_tau([1, 1, 1], [1, 2, 3])


def test_tau_significance_examples():
    assert tau_significance(0.0, 351) == pytest.approx(0.5)
    assert tau_significance(1.0, 351) < 1e-10


def test_exact_tau_significance_by_enumeration():
    n = 8
    perms = np.array(list(permutations(range(n))))
    i, j = np.triu_indices(n, 1)
    inversions = (perms[:, i] > perms[:, j]).sum(axis=1)
    taus = 1 - 4 * inversions / (n * (n - 1))
    for tau in (-0.5, 0.0, 0.2857142857142857, 0.5, 1.0):
        expected = np.mean(taus >= tau - 1e-12)
        assert tau_significance(tau, n) == pytest.approx(expected, abs=1e-12)


def test_tied_small_samples_use_normal_approximation():
    x, y = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0], [1.0, 3.0, 2.0, 4.0, 6.0, 5.0]
    assert has_ties(x, y) and not has_ties(y)
    tau, n = kendall_tau(x, y), len(x)
    sd = np.sqrt(2.0 * (2 * n + 5) / (9.0 * n * (n - 1)))
    assert tau_significance(tau, n, ties=True) == pytest.approx(ss.norm.sf(tau / sd))
    assert tau_significance(tau, n, ties=True) == tau_significance(tau, n, method="normal")
    assert tau_significance(tau, n, method="exact", ties=True) == tau_significance(tau, n)
    untied = kendall_tau(y, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    assert tau_significance(untied, n, ties=False) != tau_significance(untied, n, method="normal")


# ── signed-rank and t ─────────────────────────────────────────────────────────

def test_wilcoxon_all_positive():
    res = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], tail="greater")
    assert res.pvalue == pytest.approx(1 / 64)
    assert res.tails == "one"


def test_wilcoxon_symmetric():
    res = wilcoxon_signed_rank([1, -1, 2, -2, 3, -3], tail="two-sided")
    assert res.statistic == 0.0
    assert res.pvalue == 1.0


def test_wilcoxon_exact_by_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(5, 11))
        d = rng.integers(-4, 5, size=n).astype(float)
        nz = d[d != 0]
        if len(nz) < 5:
            continue
        ranks = ss.rankdata(np.abs(nz))
        w = np.sum(np.sign(nz) * ranks)
        null = np.array([np.dot(signs, ranks) for signs in product([1, -1], repeat=len(nz))])
        expected = np.mean(null >= w - 1e-9)
        assert wilcoxon_signed_rank(d, tail="greater").pvalue == pytest.approx(max(expected, TINY), abs=1e-12)


def test_wilcoxon_needs_nonzero():
    with pytest.raises(TooFewNonzero):
        wilcoxon_signed_rank([0, 0, 1, 2])


def test_paired_t_examples():
    with pytest.raises(ZeroVariance):
        paired_t([0, 0, 0])
    assert paired_t([1, 1, 1, 1.0001]).pvalue < 1e-6
    d = np.array([2, -1, 3, 0, 1.0])
    res = paired_t(d)
    assert res.statistic == pytest.approx(1.0 / (np.sqrt(2.5) / np.sqrt(5)))
    assert res.df == 4


def test_paired_t_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(100):
        d = rng.standard_normal(int(rng.integers(3, 30))) + 0.3
        ref = ss.ttest_1samp(d, 0.0, alternative="greater")
        res = paired_t(d, tail="greater")
        assert res.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert res.pvalue == pytest.approx(max(ref.pvalue, TINY), rel=1e-10)


# ── correlation ───────────────────────────────────────────────────────────────

def test_pearson_examples():
    x = np.arange(6.0)
    assert pearson_r(x, 2 * x + 1) == pytest.approx(1.0)
    assert pearson_r(x, -x) == pytest.approx(-1.0)


def test_fisher_examples():
    zero = fisher_average([0.0, 0.0, 0.0])
    assert zero.mean_r == 0.0 and zero.boundary_case
    assert zero.pvalue == 0.5
    half = fisher_average([0.5, 0.5, 0.5])
    assert half.mean_r == 0.5
    assert half.boundary_case and half.t is None
    rs = [0.3, 0.5, 0.7]
    res = fisher_average(rs)
    assert res.mean_r == pytest.approx(np.tanh(np.mean(np.arctanh(rs))))
    assert res.df == 2
    with pytest.raises(BoundaryR):
        fisher_average([1.0, 0.2])


def test_fisher_zero_mean_gives_half():
    res = fisher_average([-0.2, 0.2, -0.4, 0.4])
    assert res.pvalue == pytest.approx(0.5)


# ── BY-FDR ────────────────────────────────────────────────────────────────────

def test_fdr_examples():
    assert fdr_by([0.004], 0.01).tolist() == [True]
    assert not fdr_by([1.0, 1.0, 1.0], 0.05).any()
    p = np.array([0.001, 0.008, 0.039, 0.041])
    assert fdr_by(p, 0.05).tolist() == _by_oracle(p, 0.05).tolist()


def test_fdr_matches_rule():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = rng.uniform(1e-6, 1, size=int(rng.integers(1, 40))) ** 3
        assert fdr_by(p, 0.05).tolist() == _by_oracle(p, 0.05).tolist()


def test_fdr_grows_with_q():
    rng = np.random.default_rng(11)
    levels = (0.001, 0.01, 0.05, 0.1, 0.2)
    for _ in range(100):
        p = rng.uniform(1e-6, 1, size=int(rng.integers(1, 60))) ** 2
        previous = np.zeros(len(p), dtype=bool)
        for q in levels:
            reject = fdr_by(p, q)
            assert np.all(reject[previous])
            assert not np.any(reject & (p > q))
            previous = reject


def test_fdr_keeps_shape_and_rejects_bad_p():
    assert fdr_by(np.full((3, 2), 0.5), 0.05).shape == (3, 2)
    with pytest.raises(InvalidP):
        fdr_by([0.0, 0.5], 0.05)
    with pytest.raises(InvalidP):
        fdr_by([0.5], 1.0)


# ── agreement and reliability ─────────────────────────────────────────────────

def test_kappa_examples():
    assert cohens_kappa(list("YYNNY"), list("YYNNY")) == 1.0
    assert cohens_kappa(list("YYNN"), list("YNYN")) == pytest.approx(0.0)
    with pytest.raises(DegenerateAgreement):
        cohens_kappa(list("YYY"), list("YYY"))


def test_kappa_matches_confusion_counts():
    rng = np.random.default_rng(12)
    checked = 0
    while checked < 100:
        n = int(rng.integers(2, 40))
        cats = int(rng.integers(2, 5))
        a = rng.integers(0, cats, size=n)
        b = np.where(rng.uniform(size=n) < 0.6, a, rng.integers(0, cats, size=n))
        expected, p_e = _kappa_oracle(a.tolist(), b.tolist())
        if np.isclose(p_e, 1.0):
            continue
        assert cohens_kappa(a, b) == pytest.approx(expected, abs=1e-12)
        checked += 1


def test_kappa_ignores_label_names_and_rater_order():
    rng = np.random.default_rng(13)
    names = np.array(["calm", "tense", "mixed", "blank"])
    for _ in range(100):
        n = int(rng.integers(6, 30))
        a, b = rng.integers(0, 4, size=n), rng.integers(0, 4, size=n)
        b[: n // 2] = a[: n // 2]
        if len(set(a) | set(b)) < 2:
            continue
        relabel = rng.permutation(4)
        kappa = cohens_kappa(a, b)
        assert cohens_kappa(names[relabel[a]], names[relabel[b]]) == pytest.approx(kappa, abs=1e-12)
        assert cohens_kappa(b, a) == pytest.approx(kappa, abs=1e-12)


def test_icc_identical_raters():
    col = np.array([1.0, 4.0, 2.0, 7.0, 5.0])
    m = np.column_stack([col, col, col])
    assert icc(m, "ICC1k") == pytest.approx(1.0)
    assert icc(m, "ICC2k") == pytest.approx(1.0)


def test_icc_fixed_matrix_by_sums_of_squares():
    m = np.array([[9.0, 2, 5], [6, 1, 3], [8, 4, 6], [7, 1, 2]])
    n, k = m.shape
    msr, msc, msw, mse = _icc_oracle(m)
    ms = anova_mean_squares(m)
    assert ms["MSR"] == pytest.approx(msr) and ms["MSE"] == pytest.approx(mse)
    assert icc(m, "ICC1k") == pytest.approx((msr - msw) / msr)
    assert icc(m, "ICC2k") == pytest.approx((msr - mse) / (msr + (msc - mse) / n))
    f = icc_f_test(m, "ICC2k")
    assert f.statistic == pytest.approx(msr / mse)
    assert f.pvalue == pytest.approx(ss.f.sf(msr / mse, n - 1, (n - 1) * (k - 1)))


def test_icc_matches_sums_of_squares():
    rng = np.random.default_rng(14)
    for _ in range(100):
        n, k = int(rng.integers(2, 12)), int(rng.integers(2, 6))
        m = rng.standard_normal((n, 1)) * rng.uniform(0.5, 3) + rng.standard_normal((n, k))
        msr, msc, msw, mse = _icc_oracle(m)
        assert icc(m, "ICC1k") == pytest.approx((msr - msw) / msr, abs=1e-10)
        assert icc(m, "ICC2k") == pytest.approx((msr - mse) / (msr + (msc - mse) / n), abs=1e-10)
        one_way = icc_f_test(m, "ICC1k")
        assert one_way.statistic == pytest.approx(msr / msw, rel=1e-10)
        assert one_way.pvalue == pytest.approx(max(ss.f.sf(msr / msw, n - 1, n * (k - 1)), TINY), rel=1e-8)


def test_icc_noise_raters_near_zero():
    for seed in range(5):
        m = np.random.default_rng(seed).standard_normal((1000, 3))
        assert abs(icc(m, "ICC1k")) < 0.3
        assert abs(icc(m, "ICC2k")) < 0.3


# ── factor extraction ─────────────────────────────────────────────────────────

def test_pca_correlated_pair():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(200)
    data = np.column_stack([x, 2 * x + 1])
    sol = pca(data, 1)
    assert abs(sol.loadings[0, 0]) == pytest.approx(abs(sol.loadings[1, 0]))
    assert sol.explained[0] == pytest.approx(2.0)
    with pytest.raises(RankDeficient):
        pca(data, 2)


def test_pca_independent_items():
    data = np.random.default_rng(6).standard_normal((10_000, 4))
    sol = pca(data, 4)
    assert np.allclose(sol.explained, 1.0, atol=0.1)


def test_varimax_keeps_simple_structure():
    loadings = np.array([[0.9, 0.0], [0.8, 0.0], [0.0, 0.7], [0.0, 0.85]])
    sol = varimax(loadings)
    assert np.allclose(sol.rotation_matrix, np.eye(2), atol=1e-8)
    assert np.allclose(sol.communalities, (loadings ** 2).sum(axis=1))


def test_varimax_preserves_communalities():
    rng = np.random.default_rng(7)
    loadings = rng.uniform(-1, 1, size=(8, 3)) * 0.6
    sol = varimax(loadings)
    assert np.allclose((sol.loadings ** 2).sum(axis=1), (loadings ** 2).sum(axis=1))
    assert np.allclose(sol.rotation_matrix @ sol.rotation_matrix.T, np.eye(3))


def test_parallel_analysis_planted_factor():
    rng = np.random.default_rng(8)
    factor = rng.standard_normal(300)
    data = rng.standard_normal((300, 8)) * 0.45
    data[:, :4] += 0.9 * factor[:, None]
    assert parallel_analysis(standardize(data), permutations=200, seed=1) >= 1


def test_parallel_analysis_noise():
    runs = 100
    retained = [
        parallel_analysis(np.random.default_rng(seed).standard_normal((60, 5)), permutations=100, seed=seed)
        for seed in range(runs)
    ]
    assert sum(r == 0 for r in retained) >= 0.9 * runs
