import numpy as np
import pandas as pd
import pytest

from src.core.dataio import read_similarity_judgments
from src.core.errors import InvalidSpec
from src.core.models import BOS, SynthSpec
from src.pipeline.synth import cue_structure, gen_synthetic, read_benchmark, validate_spec, write_benchmark


@pytest.mark.parametrize("field, value", [
    ("concepts", 3),
    ("attributes", 1),
    ("samples", 21),
    ("cue_rate", 0.0),
    ("noise", 1.0),
    ("participants", 1),
])
def test_invalid_spec(tiny_spec, field, value):
    with pytest.raises(InvalidSpec):
        validate_spec(tiny_spec.model_copy(update={field: value}))


def test_splits_are_balanced(tiny_spec):
    bench = gen_synthetic(tiny_spec)
    assert bench.concepts == ["admiration", "amusement", "anger", "annoyance"]
    for splits in bench.tasks.values():
        assert (len(splits.train), len(splits.dev), len(splits.test)) == (32, 4, 4)
        for part in (splits.train, splits.dev, splits.test):
            assert part.labels.sum() * 2 == len(part)
            assert np.all(part.tokens[:, 0] == BOS)
            assert part.tokens.max() < tiny_spec.vocab_size


def test_default_spec_shapes():
    spec = SynthSpec()
    bench = gen_synthetic(spec)
    assert len(bench.concepts) == 12 and len(bench.attributes) == 14
    assert bench.ratings.scores.shape == (12, 14)
    assert bench.structure.cue_tokens.shape == (14, 2, spec.group_size)
    assert bench.structure.distributions.shape == (12, 14 * 2 * spec.group_size)
    assert np.allclose(bench.structure.distributions.sum(axis=1), 1.0)
    splits = bench.tasks[bench.concepts[0]]
    assert (len(splits.train), len(splits.dev), len(splits.test)) == (400, 50, 50)
    assert splits.train.tokens.shape[1] == spec.seq_len + 1


def test_same_seed_same_benchmark(tiny_spec):
    a, b = gen_synthetic(tiny_spec), gen_synthetic(tiny_spec)
    for name in a.concepts:
        assert np.array_equal(a.tasks[name].train.tokens, b.tasks[name].train.tokens)
    assert a.similarity.equals(b.similarity)
    c = gen_synthetic(tiny_spec.model_copy(update={"seed": 4}))
    assert not np.array_equal(a.structure.z, c.structure.z)


def test_ratings_are_standardized(tiny_spec):
    scores = gen_synthetic(tiny_spec).ratings.scores
    assert np.allclose(scores.mean(axis=0), 0.0)
    assert np.allclose(scores.std(axis=0, ddof=1), 1.0)


def test_identical_vectors_share_a_distribution():
    spec = SynthSpec(concepts=4, attributes=2, group_size=2)
    z = np.array([[1.0, -0.5], [1.0, -0.5], [0.0, 2.0], [-1.0, 0.0]])
    s = cue_structure(spec, z)
    assert np.array_equal(s.distributions[0], s.distributions[1])
    assert s.overlap(0, 1) == pytest.approx(1.0)
    assert np.allclose(s.distributions.sum(axis=1), 1.0)


def test_orthogonal_vectors_overlap_only_through_floor():
    spec = SynthSpec(concepts=4, attributes=2, group_size=2, overlap_floor=0.05)
    z = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    s = cue_structure(spec, z)
    assert s.overlap(0, 1) == pytest.approx(0.05)
    assert s.overlap(0, 2) == pytest.approx(0.05)


def test_similarity_judgments(tmp_path, tiny_spec):
    bench = gen_synthetic(tiny_spec)
    sim = bench.similarity
    assert set(sim["participant_id"]) == {f"P{i:02d}" for i in range(1, 6)}
    assert (sim["concept_a"] == "neutral").any()
    rated = sim["similarity"].dropna()
    assert rated.between(1, 9).all()
    assert 0 < sim["similarity"].isna().sum() <= tiny_spec.participants * tiny_spec.missing_per_participant

    write_benchmark(bench, tmp_path)
    rdms = read_similarity_judgments(tmp_path / "similarity.csv", concepts=bench.concepts)
    assert rdms.participants == 5
    assert rdms.concepts == bench.concepts


def test_benchmark_round_trip(tmp_path, tiny_spec):
    bench = gen_synthetic(tiny_spec)
    write_benchmark(bench, tmp_path / "bench")
    back = read_benchmark(tmp_path / "bench")
    assert back.concepts == bench.concepts and back.attributes == bench.attributes
    assert np.allclose(back.ratings.scores, bench.ratings.scores)
    assert np.allclose(back.structure.distributions, bench.structure.distributions)
    name = bench.concepts[1]
    assert np.array_equal(back.tasks[name].test.tokens, bench.tasks[name].test.tokens)
    assert np.array_equal(back.tasks[name].test.labels, bench.tasks[name].test.labels)
    pd.testing.assert_frame_equal(back.raw_ratings, bench.raw_ratings, check_dtype=False)


def test_raw_ratings_are_likert(tiny_spec):
    bench = gen_synthetic(tiny_spec)
    raw = bench.raw_ratings
    assert len(raw) == tiny_spec.concepts * tiny_spec.attributes * tiny_spec.raters
    assert raw["score"].between(1, 7).all()
    assert np.array_equal(raw["score"], np.rint(raw["score"]))
    assert raw["rater"].nunique() == tiny_spec.raters
    # mean over raters, standardized per attribute, is the rating table
    mean = raw.groupby(["concept", "attribute"], sort=False)["score"].mean().unstack()
    mean = mean.loc[bench.concepts, bench.attributes].to_numpy()
    z = (mean - mean.mean(axis=0)) / mean.std(axis=0, ddof=1)
    assert np.allclose(z, bench.ratings.scores)
