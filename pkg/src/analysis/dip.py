"""
Hartigan's dip statistic and its Monte-Carlo p-value.

The statistic follows the greatest-convex-minorant / least-concave-majorant cycling
of Hartigan & Hartigan's AS 217 as corrected in the R `diptest` package, with
1-based index arrays kept so the control flow maps one-to-one onto that routine.
The minimum attainable value is 1 / (2n) and the maximum 1/4.
"""
import logging
from functools import lru_cache

import numpy as np
from tqdm import tqdm

from ..core.errors import TooFewPoints
from ..core.models import TestResult

logger = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP = 10_000


def dip_statistic(sample) -> float:
    """Dip of a 1-d sample (sorted internally)."""
    xs = np.sort(np.asarray(sample, dtype=np.float64))
    n = len(xs)
    if n < 4:
        raise TooFewPoints(f"Dip needs at least 4 points, got {n}")
    x = np.concatenate([[np.nan], xs])  # x[1..n]

    dip = 1.0
    if x[n] == x[1]:
        return dip / (2 * n)

    low, high = 1, n

    # change points for the convex minorant
    mn = [0] * (n + 1)
    mn[1] = 1
    for j in range(2, n + 1):
        mn[j] = j - 1
        while True:
            mnj = mn[j]
            mnmnj = mn[mnj]
            if mnj == 1 or (x[j] - x[mnj]) * (mnj - mnmnj) < (x[mnj] - x[mnmnj]) * (j - mnj):
                break
            mn[j] = mnmnj

    # change points for the concave majorant
    mj = [0] * (n + 1)
    mj[n] = n
    for k in range(n - 1, 0, -1):
        mj[k] = k + 1
        while True:
            mjk = mj[k]
            mjmjk = mj[mjk]
            if mjk == n or (x[k] - x[mjk]) * (mjk - mjmjk) < (x[mjk] - x[mjmjk]) * (k - mjk):
                break
            mj[k] = mjmjk

    gcm = [0] * (n + 2)
    lcm = [0] * (n + 2)
    while True:
        ic = 1
        gcm[1] = high
        while gcm[ic] > low:
            gcm[ic + 1] = mn[gcm[ic]]
            ic += 1
        ig = l_gcm = ic
        ix = ig - 1

        ic = 1
        lcm[1] = low
        while lcm[ic] < high:
            lcm[ic + 1] = mj[lcm[ic]]
            ic += 1
        ih = l_lcm = ic
        iv = 2

        # largest distance between the GCM and LCM on [low, high]
        d = 0.0
        if l_gcm != 2 or l_lcm != 2:
            while True:
                gcmix, lcmiv = gcm[ix], lcm[iv]
                if gcmix > lcmiv:
                    gcmi1 = gcm[ix + 1]
                    dx = (lcmiv - gcmi1 + 1) - (x[lcmiv] - x[gcmi1]) * (gcmix - gcmi1) / (x[gcmix] - x[gcmi1])
                    iv += 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv - 1
                else:
                    lcmiv1 = lcm[iv - 1]
                    dx = (x[gcmix] - x[lcmiv1]) * (lcmiv - lcmiv1) / (x[lcmiv] - x[lcmiv1]) - (gcmix - lcmiv1 - 1)
                    ix -= 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv
                ix = max(ix, 1)
                iv = min(iv, l_lcm)
                if gcm[ix] == lcm[iv]:
                    break
        else:
            d = 1.0

        if d < dip:
            break

        dip_l = 0.0
        for j in range(ig, l_gcm):
            max_t = 1.0
            jb, je = gcm[j + 1], gcm[j]
            if je - jb > 1 and x[je] != x[jb]:
                c = (je - jb) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    max_t = max(max_t, (jj - jb + 1) - (x[jj] - x[jb]) * c)
            dip_l = max(dip_l, max_t)

        dip_u = 0.0
        for j in range(ih, l_lcm):
            max_t = 1.0
            jb, je = lcm[j], lcm[j + 1]
            if je - jb > 1 and x[je] != x[jb]:
                c = (je - jb) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    max_t = max(max_t, (x[jj] - x[jb]) * c - (jj - jb - 1))
            dip_u = max(dip_u, max_t)

        dip = max(dip, dip_u, dip_l)

        # no movement of the modal interval: stop, otherwise this cycles forever
        if low == gcm[ig] and high == lcm[ih]:
            break
        low, high = gcm[ig], lcm[ih]

    return dip / (2 * n)


@lru_cache(maxsize=32)
def uniform_null(n: int, boots: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> np.ndarray:
    """Sorted dips of `boots` uniform(0, 1) samples of size n; cached per (n, boots, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    draws = rng.random((boots, n))
    dips = np.fromiter(
        (dip_statistic(row) for row in tqdm(draws, desc=f"dip null n={n}", disable=boots < 2000, leave=False)),
        dtype=np.float64, count=boots,
    )
    dips.sort()
    dips.setflags(write=False)
    return dips


def hartigan_dip(sample, boots: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> TestResult:
    """
    Dip test of unimodality.

    p = (1 + #{null dips ≥ observed}) / (1 + boots), against dips of uniform samples of
    the same size.
    """
    dip = dip_statistic(sample)
    n = len(np.asarray(sample))
    null = uniform_null(n, boots, seed)
    exceed = len(null) - np.searchsorted(null, dip - 1e-12, side="left")
    p = (1 + exceed) / (1 + boots)
    return TestResult(statistic=dip, pvalue=min(p, 1.0), tails="one", n=n)
