from itertools import combinations

import numpy as np
import pytest

from src.analysis.rdm import attribute_rdm, lower_triangle
from src.analysis.rsa import (
    human_rsa,
    human_weights,
    participant_taus,
    rank_neurons,
    ranking_overlap,
    searchlight,
    signrank_pairs_p,
    significant_per_layer,
)
from src.core.errors import ConceptMismatch, NTooLarge, TooFewParticipants
from src.core.models import ActivationTensor, ParticipantRDMSet, RatingTable, TauMatrix


def _tau_b(x, y):
    """Pair counting with tie corrections."""
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


def _planted(trials_seed: int, neurons=200, planted=10, concepts=12):
    rng = np.random.default_rng(trials_seed)
    scores = rng.standard_normal((concepts, 3))
    ratings = RatingTable(concepts=[f"c{i}" for i in range(concepts)], attributes=["a0", "a1", "a2"], scores=scores)
    values = rng.standard_normal((1, concepts, neurons))
    idx = rng.choice(neurons, size=planted, replace=False)
    for i in idx:
        values[0, :, i] = scores[:, 0] + 0.1 * scores[:, 0].std() * rng.standard_normal(concepts)
    return ActivationTensor(concepts=ratings.concepts, values=values), ratings, idx


def test_neuron_equal_to_attribute(ratings):
    values = np.stack([ratings.column("valence"), np.linspace(0, 1, 5)], axis=1)[None]
    m = searchlight(ActivationTensor(concepts=ratings.concepts, values=values), ratings, q=0.01)
    a = m.attribute_index("valence")
    assert m.taus[0, a] == pytest.approx(1.0)
    assert m.significant[0, a]


def test_constant_neuron_has_zero_tau(ratings):
    values = np.stack([np.full(5, 2.0), ratings.column("arousal")], axis=1)[None]
    m = searchlight(ActivationTensor(concepts=ratings.concepts, values=values), ratings, q=0.05)
    assert np.array_equal(m.taus[0], [0.0, 0.0])
    assert np.array_equal(m.pvalues[0], [1.0, 1.0])


def test_concept_order_must_match(ratings):
    t = ActivationTensor(concepts=ratings.concepts[::-1], values=np.zeros((1, 5, 2)))
    with pytest.raises(ConceptMismatch):
        searchlight(t, ratings, q=0.01)


def test_planted_neurons_are_recovered():
    hits = 0
    for trial in range(20):
        t, r, planted = _planted(trial)
        m = searchlight(t, r, q=0.01)
        top = rank_neurons(m, "a0", 2 * len(planted))
        hits += len(set(top.indices.tolist()) & set(planted.tolist())) >= 0.9 * len(planted)
    assert hits >= 18


def test_lower_q_only_removes_significance():
    t, r, _ = _planted(3)
    levels = [searchlight(t, r, q=q) for q in (0.2, 0.05, 0.01, 0.001)]
    for looser, stricter in zip(levels, levels[1:]):
        assert np.array_equal(looser.taus, stricter.taus)
        assert np.array_equal(looser.pvalues, stricter.pvalues)
        assert not np.any(stricter.significant & ~looser.significant)
        wide, narrow = rank_neurons(looser, "a0", 30), rank_neurons(stricter, "a0", 30)
        assert np.array_equal(wide.indices, narrow.indices)
        assert not np.any(narrow.significant & ~wide.significant)
    assert levels[-1].significant[:, 0].sum() > 0


def test_shorter_ranking_is_a_prefix():
    t, r, _ = _planted(4)
    m = searchlight(t, r, q=0.01)
    full = rank_neurons(m, "a1", m.neurons)
    for n in (0, 1, 5, 50, m.neurons):
        part = rank_neurons(m, "a1", n)
        assert np.array_equal(part.indices, full.indices[:n])
        assert np.array_equal(part.significant, full.significant[:n])


def test_worker_count_does_not_change_result():
    t, r, _ = _planted(0, neurons=300)
    one = searchlight(t, r, q=0.01, jobs=1)
    two = searchlight(t, r, q=0.01, jobs=2)
    assert np.array_equal(one.taus, two.taus)
    assert np.array_equal(one.pvalues, two.pvalues)
    assert np.array_equal(one.significant, two.significant)


def test_signrank_method_runs(ratings):
    values = np.random.default_rng(1).standard_normal((2, 5, 4))
    m = searchlight(ActivationTensor(concepts=ratings.concepts, values=values), ratings, q=0.05,
                    sig_method="signrank_pairs")
    assert np.all((m.pvalues > 0) & (m.pvalues <= 1))


def test_identical_rankings_smallest_signrank_p():
    x = np.arange(10.0)
    assert signrank_pairs_p(x, x) == np.finfo(np.float64).tiny


def _tau_matrix(taus):
    taus = np.asarray(taus, dtype=float).reshape(-1, 1)
    return TauMatrix(attributes=["v"], taus=taus, pvalues=np.ones_like(taus),
                     significant=np.zeros_like(taus, dtype=bool), q=0.01)


def test_rank_order_and_ties():
    assert rank_neurons(_tau_matrix([0.3, 0.9, 0.5]), "v", 2).indices.tolist() == [1, 2]
    assert rank_neurons(_tau_matrix([0.2, 0.7, 0.7, 0.1]), "v", 4).indices.tolist() == [1, 2, 0, 3]


def test_full_ranking_is_permutation():
    taus = np.random.default_rng(2).uniform(-1, 1, 50)
    ranking = rank_neurons(_tau_matrix(taus), "v", 50)
    assert sorted(ranking.indices.tolist()) == list(range(50))


def test_rank_too_many():
    with pytest.raises(NTooLarge):
        rank_neurons(_tau_matrix([0.1, 0.2]), "v", 3)


def test_significant_per_layer():
    sig = np.zeros((6, 2), dtype=bool)
    sig[[0, 2, 4], 0] = True
    sig[5, 1] = True
    m = TauMatrix(attributes=["v", "w"], taus=np.zeros((6, 2)), pvalues=np.ones((6, 2)), significant=sig, q=0.01)
    counts = significant_per_layer(m, d_ff=3)
    assert counts["layer"].tolist() == [0, 1]
    assert counts["v"].tolist() == [2, 1]
    assert counts["w"].tolist() == [0, 1]


def test_ranking_overlap_jaccard():
    m = TauMatrix(attributes=["v", "w"], taus=np.array([[0.9, 0.1], [0.8, 0.9], [0.7, 0.8], [0.1, 0.7]]),
                  pvalues=np.ones((4, 2)), significant=np.zeros((4, 2), dtype=bool), q=0.01)
    overlap = ranking_overlap([rank_neurons(m, "v", 3), rank_neurons(m, "w", 3)])
    assert overlap.loc[0, "jaccard"] == pytest.approx(0.5)


# ── human RSA ─────────────────────────────────────────────────────────────────

def _participants(matrices, concepts):
    return ParticipantRDMSet(participant_ids=[f"P{i}" for i in range(len(matrices))], concepts=concepts,
                             rdms=np.stack(matrices))


def test_participants_matching_attribute(ratings):
    attr = attribute_rdm(ratings, "valence")
    p = _participants([attr.matrix] * 15, ratings.concepts)
    w = human_rsa(attr, p, boots=50, q=0.05, seed=1, attribute="valence")
    assert w.mean_tau == pytest.approx(1.0)
    assert w.pvalue < 1e-3
    assert w.significant


def test_participant_taus_by_pair_counting():
    concepts = ["a", "b", "c", "d"]
    attr = attribute_rdm(RatingTable(concepts=concepts, attributes=["v"], scores=[[0.0], [1.0], [3.0], [7.0]]), "v")
    rng = np.random.default_rng(3)
    mats = []
    for _ in range(2):
        m = np.abs(rng.standard_normal((4, 4)))
        m = m + m.T
        np.fill_diagonal(m, 0.0)
        mats.append(m)
    p = _participants(mats, concepts)
    taus = participant_taus(attr, p)
    target = lower_triangle(attr)
    rows, cols = np.tril_indices(4, -1)
    for tau, m in zip(taus, mats):
        assert tau == pytest.approx(_tau_b(target, m[rows, cols]), abs=1e-12)


def test_participant_order_is_aligned(ratings):
    attr = attribute_rdm(ratings, "arousal")
    order = ratings.concepts[::-1]
    idx = [ratings.concepts.index(c) for c in order]
    p = _participants([attr.matrix[np.ix_(idx, idx)]] * 3, order)
    assert np.allclose(participant_taus(attr, p), 1.0)


def test_single_participant_rejected(ratings):
    attr = attribute_rdm(ratings, "valence")
    with pytest.raises(TooFewParticipants):
        human_rsa(attr, _participants([attr.matrix], ratings.concepts), boots=10, q=0.05)


def test_human_weights_cover_every_attribute(ratings):
    mats = [attribute_rdm(ratings, "valence").matrix] * 6
    weights = human_weights(ratings, _participants(mats, ratings.concepts), boots=20, q=0.05)
    assert [w.attribute for w in weights] == ratings.attributes
    assert weights[0].mean_tau == pytest.approx(1.0)
