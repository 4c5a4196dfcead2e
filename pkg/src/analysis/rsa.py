"""
Searchlight RSA between neuron RDMs and attribute RDMs, neuron ranking and top-N
selection, and the fit of attribute RDMs to participants' concept RDMs.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations
from typing import Literal, Optional

import numpy as np
import pandas as pd
from scipy import stats as ss
from tqdm import tqdm

from ..core.errors import (
    ConceptMismatch,
    DegenerateInput,
    NTooLarge,
    TooFewNonzero,
    TooFewParticipants,
)
from ..core.models import (
    RDM,
    ActivationTensor,
    AttributeWeight,
    NeuronRanking,
    ParticipantRDMSet,
    RatingTable,
    TauMatrix,
)
from .rdm import attribute_rdm, lower_triangle, scalar_triangle, triangle_indices
from .stats import TINY, fdr_by, has_ties, kendall_tau, tau_significance, wilcoxon_signed_rank

logger = logging.getLogger(__name__)

SigMethod = Literal["tau_normal", "signrank_pairs"]
BLOCK = 128


def signrank_pairs_p(x: np.ndarray, y: np.ndarray) -> float:
    """
    One-tailed Wilcoxon signed-rank p on element-wise differences of the rank
    transforms of two triangles. Identical rankings give the smallest p.
    """
    diffs = ss.rankdata(x) - ss.rankdata(y)
    try:
        return wilcoxon_signed_rank(diffs, tail="greater", min_n=1).pvalue
    except TooFewNonzero:
        return TINY


def _tau_and_p(x: np.ndarray, y: np.ndarray, sig_method: SigMethod) -> tuple[float, float]:
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0, 1.0
    tau = kendall_tau(x, y)
    if sig_method == "signrank_pairs":
        return tau, signrank_pairs_p(x, y)
    return tau, tau_significance(tau, len(x), ties=has_ties(x, y))


def _searchlight_block(
    means: np.ndarray, attr_tris: np.ndarray, sig_method: SigMethod
) -> tuple[np.ndarray, np.ndarray, int]:
    """Taus and p-values for a block of neurons (columns of `means`)."""
    taus = np.zeros((means.shape[1], len(attr_tris)))
    ps = np.ones_like(taus)
    degenerate = 0
    for i in range(means.shape[1]):
        tri = scalar_triangle(means[:, i])
        if np.all(tri == tri[0]):
            degenerate += 1
            continue
        for a, attr_tri in enumerate(attr_tris):
            taus[i, a], ps[i, a] = _tau_and_p(tri, attr_tri, sig_method)
    return taus, ps, degenerate


def searchlight(
    t: ActivationTensor,
    r: RatingTable,
    q: float,
    sig_method: SigMethod = "tau_normal",
    jobs: int = 1,
    progress: bool = False,
) -> TauMatrix:
    """
    Kendall tau between every neuron RDM and every attribute RDM.

    Significance is BY-FDR over the full neurons × attributes grid. Neurons whose
    seed-averaged activation is constant across concepts get tau 0 and p 1.
    Results land in pre-indexed slots, so the matrix is the same for any `jobs`.
    """
    if list(t.concepts) != list(r.concepts):
        raise ConceptMismatch(
            "Activation tensor and rating table list different concepts or orders",
            tensor=list(t.concepts), ratings=list(r.concepts),
        )
    means = t.seed_mean()
    attr_tris = np.stack([lower_triangle(attribute_rdm(r, a)) for a in r.attributes])
    for a, tri in zip(r.attributes, attr_tris):
        if np.all(tri == tri[0]):
            logger.warning("Attribute %r is constant across concepts; its taus are 0", a)

    n = t.neurons
    taus = np.zeros((n, len(r.attributes)))
    ps = np.ones_like(taus)
    starts = list(range(0, n, BLOCK))
    blocks = [means[:, s:s + BLOCK] for s in starts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(tqdm(
                pool.map(_searchlight_block, blocks, [attr_tris] * len(blocks), [sig_method] * len(blocks)),
                total=len(blocks), desc="searchlight", disable=not progress,
            ))
    else:
        results = [
            _searchlight_block(b, attr_tris, sig_method)
            for b in tqdm(blocks, desc="searchlight", disable=not progress)
        ]
    degenerate = 0
    for s, (bt, bp, bd) in zip(starts, results):
        taus[s:s + len(bt)] = bt
        ps[s:s + len(bt)] = bp
        degenerate += bd
    if degenerate:
        logger.info("%d of %d neurons are constant across concepts (tau 0, p 1)", degenerate, n)

    significant = fdr_by(ps, q)
    logger.info("Searchlight: %d of %d (neuron, attribute) cells significant at q=%g",
                int(significant.sum()), significant.size, q)
    return TauMatrix(attributes=list(r.attributes), taus=taus, pvalues=ps, significant=significant, q=q)


def rank_neurons(m: TauMatrix, attribute: str, n: int) -> NeuronRanking:
    """Top-n neurons by descending tau; equal taus keep ascending neuron index."""
    a = m.attribute_index(attribute)
    if n > m.neurons:
        raise NTooLarge(f"Requested top {n} of only {m.neurons} neurons")
    if n < 0:
        raise NTooLarge(f"n must be non-negative, got {n}")
    order = np.lexsort((np.arange(m.neurons), -m.taus[:, a]))[:n]
    return NeuronRanking(
        attribute=attribute,
        indices=order,
        taus=m.taus[order, a],
        significant=m.significant[order, a],
    )


def significant_per_layer(m: TauMatrix, d_ff: int) -> pd.DataFrame:
    """Counts of significant neurons per (layer, attribute)."""
    layers = m.neurons // d_ff
    counts = m.significant.reshape(layers, d_ff, len(m.attributes)).sum(axis=1)
    df = pd.DataFrame(counts, columns=m.attributes)
    df.insert(0, "layer", np.arange(layers))
    return df


def ranking_overlap(rankings: list[NeuronRanking]) -> pd.DataFrame:
    """Pairwise Jaccard index between attributes' selected neuron sets."""
    rows = []
    for a, b in combinations(rankings, 2):
        sa, sb = set(a.indices.tolist()), set(b.indices.tolist())
        union = sa | sb
        rows.append({
            "attribute_a": a.attribute,
            "attribute_b": b.attribute,
            "n": len(a.indices),
            "jaccard": len(sa & sb) / len(union) if union else 0.0,
        })
    return pd.DataFrame(rows, columns=["attribute_a", "attribute_b", "n", "jaccard"])


# ── human RSA ─────────────────────────────────────────────────────────────────

def _tau_or_zero(x: np.ndarray, y: np.ndarray) -> float:
    try:
        return kendall_tau(x, y)
    except DegenerateInput:
        return 0.0


def _align(attr: RDM, p: ParticipantRDMSet) -> np.ndarray:
    """Participant RDMs reordered to the attribute RDM's concept order."""
    if set(attr.concepts) != set(p.concepts):
        raise ConceptMismatch("Attribute RDM and participant RDMs cover different concepts")
    idx = [p.concepts.index(c) for c in attr.concepts]
    return p.rdms[:, idx][:, :, idx]


def participant_taus(attr: RDM, p: ParticipantRDMSet) -> np.ndarray:
    rdms = _align(attr, p)
    rows, cols = triangle_indices(attr.size)
    target = attr.matrix[rows, cols]
    return np.array([_tau_or_zero(target, m[rows, cols]) for m in rdms])


def bootstrap_pvalues(
    attr: RDM,
    p: ParticipantRDMSet,
    boots: int,
    seed: int = 0,
    progress: bool = False,
) -> np.ndarray:
    """
    Replicate p-values: each replicate resamples participants and concepts with
    replacement and runs a two-tailed signed-rank test of the per-participant taus.
    """
    rdms = _align(attr, p)
    n_part, k = rdms.shape[0], attr.size
    rows, cols = triangle_indices(k)
    out = np.empty(boots)
    streams = np.random.SeedSequence(seed).spawn(boots)
    for b in tqdm(range(boots), desc=f"bootstrap {attr.concepts[0]}..", disable=not progress, leave=False):
        rng = np.random.default_rng(streams[b])
        pidx = rng.integers(n_part, size=n_part)
        cidx = rng.integers(k, size=k)
        target = attr.matrix[np.ix_(cidx, cidx)][rows, cols]
        taus = np.array([_tau_or_zero(target, rdms[i][np.ix_(cidx, cidx)][rows, cols]) for i in pidx])
        if np.all(taus == 0):
            out[b] = 1.0
            continue
        out[b] = wilcoxon_signed_rank(taus, tail="two-sided", min_n=1).pvalue
    return out


def human_rsa(
    attr_rdm: RDM,
    p: ParticipantRDMSet,
    boots: int,
    q: float,
    seed: int = 0,
    attribute: Optional[str] = None,
    progress: bool = False,
) -> AttributeWeight:
    """
    Fit of one attribute RDM to participants' RDMs.

    The statistic is the mean per-participant tau; the p-value is the median of the
    bootstrap replicate p-values. `significant` here applies BY to this single
    p-value; human_weights corrects jointly across attributes.
    """
    if p.participants < 2:
        raise TooFewParticipants(f"Need at least 2 participants, got {p.participants}")
    if boots < 1:
        raise ValueError("boots must be >= 1")
    taus = participant_taus(attr_rdm, p)
    pvalue = float(np.median(bootstrap_pvalues(attr_rdm, p, boots, seed=seed, progress=progress)))
    return AttributeWeight(
        attribute=attribute or "attribute",
        mean_tau=float(np.clip(taus.mean(), -1, 1)),
        pvalue=pvalue,
        significant=bool(fdr_by(np.array([pvalue]), q)[0]),
        participant_taus=taus,
    )


def human_weights(
    r: RatingTable,
    p: ParticipantRDMSet,
    boots: int,
    q: float,
    seed: int = 0,
    progress: bool = False,
) -> list[AttributeWeight]:
    """human_rsa for every attribute with BY-FDR across attributes."""
    table = r.reorder(p.concepts) if list(r.concepts) != list(p.concepts) else r
    weights = [
        human_rsa(attribute_rdm(table, a), p, boots, q, seed=seed + j, attribute=a, progress=progress)
        for j, a in enumerate(table.attributes)
    ]
    reject = fdr_by(np.array([w.pvalue for w in weights]), q)
    for w, sig in zip(weights, reject):
        w.significant = bool(sig)
    return weights
