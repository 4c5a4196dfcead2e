"""
Statistical primitives: rank correlation, signed-rank and t tests, BY-FDR,
agreement and reliability coefficients, and factor extraction.

Every p-value is clipped into (0, 1] so it fits TestResult.
"""
import logging
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from scipy import stats as ss
from statsmodels.stats.multitest import multipletests

from ..core.errors import (
    BoundaryR,
    DegenerateAgreement,
    DegenerateInput,
    DegenerateVariance,
    InvalidP,
    LengthMismatch,
    MissingCell,
    NoConvergence,
    RankDeficient,
    TooFewNonzero,
    TooFewPoints,
    ZeroVariance,
)
from ..core.models import FactorSolution, FisherResult, TestResult
from .dip import hartigan_dip  # noqa: F401  (re-exported with the other tests)

logger = logging.getLogger(__name__)

TINY = np.finfo(np.float64).tiny
EXACT_TAU_BELOW = 10
EXACT_SIGNRANK_MAX = 15

Tail = Literal["greater", "less", "two-sided"]


def _clip_p(p: float) -> float:
    if np.isnan(p):
        return 1.0
    return float(min(1.0, max(TINY, p)))


def _pair(x, y, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise LengthMismatch(f"Vectors differ in length: {len(x)} vs {len(y)}")
    if len(x) < min_n:
        raise TooFewPoints(f"Need at least {min_n} pairs, got {len(x)}")
    return x, y


# ── rank correlation ──────────────────────────────────────────────────────────

def kendall_tau(x, y) -> float:
    """Kendall's tau-b."""
    x, y = _pair(x, y, 2)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInput("Kendall tau is undefined for a constant vector")
    tau = ss.kendalltau(x, y, variant="b").statistic
    return float(np.clip(tau, -1.0, 1.0))


@lru_cache(maxsize=None)
def _inversion_cdf(n: int) -> np.ndarray:
    """CDF of the inversion count of a uniform random permutation of n items."""
    counts = np.array([1], dtype=np.float64)
    for i in range(2, n + 1):
        counts = np.convolve(counts, np.ones(i))
    cdf = np.cumsum(counts) / counts.sum()
    cdf.setflags(write=False)
    return cdf


def has_ties(*vectors) -> bool:
    return any(len(np.unique(np.asarray(v))) < len(v) for v in vectors)


def tau_significance(
    tau: float,
    n: int,
    method: Literal["auto", "normal", "exact"] = "auto",
    ties: bool = False,
) -> float:
    """
    Upper-tail p-value of tau under independence (H1: tau > 0).

    Exact inversion-count distribution for n < 10, normal approximation with
    variance 2(2n + 5) / (9n(n − 1)) otherwise. The exact distribution counts
    tie-free permutations only, so "auto" uses the normal approximation whenever
    `ties` is set.
    """
    if n < 2:
        raise TooFewPoints(f"Tau significance needs n >= 2, got {n}")
    if method == "exact" or (method == "auto" and n < EXACT_TAU_BELOW and not ties):
        # tau >= t  <=>  inversions <= (1 − t) n(n − 1) / 4
        bound = (1.0 - tau) * n * (n - 1) / 4.0
        k = int(np.floor(bound + 1e-9))
        cdf = _inversion_cdf(n)
        if k < 0:
            return TINY
        return _clip_p(cdf[min(k, len(cdf) - 1)])
    sd = np.sqrt(2.0 * (2 * n + 5) / (9.0 * n * (n - 1)))
    return _clip_p(ss.norm.sf(tau / sd))


# ── signed-rank and t tests ───────────────────────────────────────────────────

@lru_cache(maxsize=EXACT_SIGNRANK_MAX + 1)
def _sign_patterns(n: int) -> np.ndarray:
    """All 2^n sign vectors as rows of ±1."""
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    signs = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return signs


def wilcoxon_signed_rank(
    diffs,
    tail: Tail = "two-sided",
    min_n: int = 5,
    exact_max: int = EXACT_SIGNRANK_MAX,
) -> TestResult:
    """
    Wilcoxon signed-rank test of diffs against zero.

    W is the sum of signed average ranks of |diffs| after dropping zeros. The null
    distribution is enumerated over all 2^n sign patterns for n <= exact_max; above
    that W / sqrt(sum r^2) is referred to the standard normal (the sum of squared
    ranks is the tie-corrected variance).
    """
    d = np.asarray(diffs, dtype=np.float64).ravel()
    d = d[d != 0]
    n = len(d)
    tails = "two" if tail == "two-sided" else "one"
    if n < max(min_n, 1):
        raise TooFewNonzero(f"Signed-rank test needs {max(min_n, 1)} nonzero differences, got {n}")
    ranks = ss.rankdata(np.abs(d))
    w = float(np.sum(np.sign(d) * ranks))
    if n <= exact_max:
        null = _sign_patterns(n) @ ranks
        eps = 1e-9
        p_greater = float(np.mean(null >= w - eps))
        p_less = float(np.mean(null <= w + eps))
    else:
        z = w / np.sqrt(np.sum(ranks ** 2))
        p_greater, p_less = ss.norm.sf(z), ss.norm.cdf(z)
    if tail == "greater":
        p = p_greater
    elif tail == "less":
        p = p_less
    else:
        p = 2.0 * min(p_greater, p_less)
    return TestResult(statistic=w, pvalue=_clip_p(p), tails=tails, n=n)


def paired_t(diffs, tail: Tail = "greater") -> TestResult:
    """One-sample t on matched differences; t = mean / (sd / sqrt(n)), df = n − 1."""
    d = np.asarray(diffs, dtype=np.float64).ravel()
    n = len(d)
    if n < 2:
        raise TooFewPoints(f"Paired t needs n >= 2, got {n}")
    if np.all(d == d[0]):
        raise ZeroVariance("All differences are identical; t is undefined")
    t = float(d.mean() / (d.std(ddof=1) / np.sqrt(n)))
    if tail == "greater":
        p = ss.t.sf(t, n - 1)
    elif tail == "less":
        p = ss.t.cdf(t, n - 1)
    else:
        p = 2 * ss.t.sf(abs(t), n - 1)
    return TestResult(statistic=t, pvalue=_clip_p(p), tails="two" if tail == "two-sided" else "one",
                      n=n, df=n - 1)


def t_interval(diffs, level: float = 0.95) -> tuple[float, float]:
    d = np.asarray(diffs, dtype=np.float64)
    n = len(d)
    half = ss.t.ppf(0.5 + level / 2, n - 1) * d.std(ddof=1) / np.sqrt(n)
    return float(d.mean() - half), float(d.mean() + half)


# ── correlation ───────────────────────────────────────────────────────────────

def pearson_r(x, y) -> float:
    x, y = _pair(x, y, 3)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInput("Pearson r is undefined for a constant vector")
    return float(np.clip(ss.pearsonr(x, y).statistic, -1.0, 1.0))


def fisher_average(rs) -> FisherResult:
    """
    Average correlations through Fisher's z and t-test mean z > 0 (one-tailed).

    When the z values have zero variance the t statistic is undefined; the result
    then carries boundary_case=True with t and p left empty, except when every r
    is 0, which reads as t = 0 and p = 0.5.
    """
    r = np.asarray(rs, dtype=np.float64).ravel()
    if len(r) < 2:
        raise TooFewPoints(f"Fisher averaging needs at least 2 correlations, got {len(r)}")
    if np.any(np.abs(r) >= 1):
        raise BoundaryR("Fisher z is infinite for |r| = 1")
    z = np.arctanh(r)
    mean_r = float(np.tanh(z.mean()))
    if np.all(z == z[0]):
        if z[0] == 0:
            # 0 / 0 is read as no effect
            return FisherResult(mean_r=0.0, t=0.0, df=len(r) - 1, pvalue=0.5, boundary_case=True)
        logger.warning("Fisher z values are all equal (%.4f); t-test skipped", z[0])
        return FisherResult(mean_r=mean_r, df=len(r) - 1, boundary_case=True)
    res = paired_t(z, tail="greater")
    return FisherResult(mean_r=mean_r, t=res.statistic, df=len(r) - 1, pvalue=res.pvalue)


# ── multiple comparisons ──────────────────────────────────────────────────────

def fdr_by(p, q: float) -> np.ndarray:
    """Benjamini–Yekutieli step-up rejections, in input order."""
    p = np.asarray(p, dtype=np.float64)
    if not 0 < q < 1:
        raise InvalidP(f"FDR level q must lie in (0, 1), got {q}")
    if p.size == 0:
        return np.zeros(p.shape, dtype=bool)
    flat = p.ravel()
    if np.any(~np.isfinite(flat)) or np.any(flat <= 0) or np.any(flat > 1):
        raise InvalidP("p-values must lie in (0, 1]")
    reject = multipletests(flat, alpha=q, method="fdr_by")[0]
    return reject.reshape(p.shape)


# ── agreement and reliability ─────────────────────────────────────────────────

def cohens_kappa(a, b) -> float:
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if len(a) != len(b):
        raise LengthMismatch(f"Rater vectors differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise TooFewPoints("Kappa needs at least 2 items")
    _, codes = np.unique(np.concatenate([a, b]), return_inverse=True)
    ca, cb = codes[: len(a)], codes[len(a):]
    k = codes.max() + 1
    table = np.zeros((k, k))
    np.add.at(table, (ca, cb), 1)
    table /= len(a)
    p_o = np.trace(table)
    p_e = float(table.sum(axis=1) @ table.sum(axis=0))
    if np.isclose(p_e, 1.0):
        raise DegenerateAgreement("Chance agreement is 1; kappa is undefined")
    return float((p_o - p_e) / (1 - p_e))


def anova_mean_squares(matrix) -> dict[str, float]:
    """Two-way ANOVA mean squares of a targets × raters matrix (MSR, MSC, MSW, MSE)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("ICC needs a targets × raters matrix")
    n, k = m.shape
    if n < 2 or k < 2:
        raise TooFewPoints(f"ICC needs >= 2 targets and >= 2 raters, got {n} × {k}")
    if np.isnan(m).any():
        i, j = np.argwhere(np.isnan(m))[0]
        raise MissingCell(f"Missing rating at target {i}, rater {j}", target=int(i), rater=int(j))
    grand = m.mean()
    ss_rows = k * np.sum((m.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((m.mean(axis=0) - grand) ** 2)
    ss_total = np.sum((m - grand) ** 2)
    ss_within = ss_total - ss_rows
    ss_error = ss_within - ss_cols
    return {
        "MSR": ss_rows / (n - 1),
        "MSC": ss_cols / (k - 1),
        "MSW": ss_within / (n * (k - 1)),
        "MSE": ss_error / ((n - 1) * (k - 1)),
        "n": n,
        "k": k,
    }


def icc(matrix, form: Literal["ICC1k", "ICC2k"] = "ICC2k") -> float:
    """Average-rater ICC: ICC(1,k) from the one-way, ICC(2,k) absolute agreement."""
    ms = anova_mean_squares(matrix)
    if ms["MSR"] <= 0:
        raise DegenerateVariance("Targets do not vary (MSR = 0)")
    if form == "ICC1k":
        return float((ms["MSR"] - ms["MSW"]) / ms["MSR"])
    if form == "ICC2k":
        return float((ms["MSR"] - ms["MSE"]) / (ms["MSR"] + (ms["MSC"] - ms["MSE"]) / ms["n"]))
    raise ValueError(f"Unknown ICC form {form!r}")


def icc_f_test(matrix, form: Literal["ICC1k", "ICC2k"] = "ICC2k") -> TestResult:
    """F test of ICC > 0: MSR/MSW (one-way) or MSR/MSE (two-way), upper tail."""
    ms = anova_mean_squares(matrix)
    n, k = ms["n"], ms["k"]
    if form == "ICC1k":
        denom, df2 = ms["MSW"], n * (k - 1)
    else:
        denom, df2 = ms["MSE"], (n - 1) * (k - 1)
    if denom <= 0:
        return TestResult(statistic=float("inf"), pvalue=TINY, tails="one", n=n, df=n - 1)
    f = ms["MSR"] / denom
    return TestResult(statistic=float(f), pvalue=_clip_p(ss.f.sf(f, n - 1, df2)), tails="one", n=n, df=n - 1)


# ── factor extraction ─────────────────────────────────────────────────────────

def _eigen_desc(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    corr = np.corrcoef(np.asarray(data, dtype=np.float64), rowvar=False)
    values, vectors = np.linalg.eigh(corr)
    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order]


def pca(data, k: int) -> FactorSolution:
    """
    Unrotated principal-component loadings of the item correlation matrix.

    Each loading column is an eigenvector scaled by sqrt(eigenvalue), signed so its
    largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    items = data.shape[1]
    if not 1 <= k <= items:
        raise RankDeficient(f"Cannot extract {k} factors from {items} items")
    values, vectors = _eigen_desc(data)
    positive = int(np.sum(values > 1e-10))
    if k > positive:
        raise RankDeficient(f"Requested {k} factors but only {positive} positive eigenvalues")
    loadings = vectors[:, :k] * np.sqrt(values[:k])
    for j in range(k):
        if loadings[np.argmax(np.abs(loadings[:, j])), j] < 0:
            loadings[:, j] = -loadings[:, j]
    return FactorSolution(loadings=loadings, explained=values[:k].copy(), rotation="none")


def varimax(loadings, tol: float = 1e-8, max_sweeps: int = 1000) -> FactorSolution:
    """
    Varimax rotation by pairwise planar rotations with Kaiser row normalization.

    Sweeps over all factor pairs until every rotation angle in a sweep is below
    `tol`.
    """
    if isinstance(loadings, FactorSolution):
        loadings = loadings.loadings
    lam = np.asarray(loadings, dtype=np.float64)
    p, k = lam.shape
    if k < 2:
        raise TooFewPoints("Varimax needs at least 2 factors")
    h = np.sqrt((lam ** 2).sum(axis=1))
    h_safe = np.where(h > 0, h, 1.0)
    a = lam / h_safe[:, None]
    rot = np.eye(k)

    for sweep in range(max_sweeps):
        largest = 0.0
        for i in range(k - 1):
            for j in range(i + 1, k):
                x, y = a[:, i], a[:, j]
                u, v = x ** 2 - y ** 2, 2 * x * y
                num = 2 * np.sum(u * v) - 2 * u.sum() * v.sum() / p
                den = np.sum(u ** 2 - v ** 2) - (u.sum() ** 2 - v.sum() ** 2) / p
                phi = np.arctan2(num, den) / 4
                largest = max(largest, abs(phi))
                if phi == 0:
                    continue
                c, s = np.cos(phi), np.sin(phi)
                g = np.eye(k)
                g[i, i], g[i, j], g[j, i], g[j, j] = c, -s, s, c
                a = a @ g
                rot = rot @ g
        if largest < tol:
            break
    else:
        raise NoConvergence(f"Varimax did not converge in {max_sweeps} sweeps")

    rotated = a * h_safe[:, None]
    explained = (rotated ** 2).sum(axis=0)
    return FactorSolution(loadings=rotated, explained=explained, rotation="varimax", rotation_matrix=rot)


def parallel_analysis(
    data,
    permutations: int = 1000,
    percentile: float = 95.0,
    seed: int = 0,
) -> int:
    """
    Count leading components whose eigenvalue beats the given percentile of
    eigenvalues from column-wise independently permuted data.
    """
    data = np.asarray(data, dtype=np.float64)
    if permutations < 100:
        raise ValueError(f"parallel analysis needs >= 100 permutations, got {permutations}")
    observed, _ = _eigen_desc(data)
    rng = np.random.default_rng(seed)
    null = np.empty((permutations, data.shape[1]))
    for b in range(permutations):
        shuffled = np.column_stack([rng.permutation(col) for col in data.T])
        null[b] = _eigen_desc(shuffled)[0]
    threshold = np.percentile(null, percentile, axis=0)
    above = observed > threshold
    return int(np.argmin(above)) if not above.all() else len(observed)


def standardize(data) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    sd = data.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateInput("Cannot standardize a constant item")
    return (data - data.mean(axis=0)) / sd
