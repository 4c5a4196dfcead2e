"""
Synthetic emotion-inference benchmark.

Each concept c gets an attribute vector z_c. Cue tokens come in groups, one group
per (attribute, sign). Concept c puts mass relu(s · z_ca)^2 / |z_c|^2 on group
(a, s), mixed with a uniform floor over all cue tokens, so concepts with similar
attribute vectors share cue tokens and concepts with orthogonal, axis-aligned
vectors overlap only through the floor.

A yes/no task for concept c asks whether a token sequence was drawn from c's cue
distribution (yes) or from another concept's (no). Participant similarity
judgments and the per-rater Likert ratings are derived from the same z vectors;
the rating table is the standardized rater mean.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from ..core.config import settings
from ..core.dataio import (
    attribute_scores,
    read_rating_table,
    read_raw_ratings,
    read_task_dataset,
    write_rating_table,
    write_raw_ratings,
    write_similarity_judgments,
    write_task_dataset,
)
from ..core.errors import InvalidSpec
from ..core.models import BOS, N_SPECIAL, RatingTable, SynthSpec, TaskDataset, TaskSplits

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
LIKERT_MID, LIKERT_SCALE = 4.0, 1.5


@dataclass
class CueStructure:
    """Ground-truth generative structure of a synthetic benchmark."""
    z: np.ndarray                 # concepts × attributes
    cue_tokens: np.ndarray        # attributes × 2 (sign +, −) × group_size token ids
    distributions: np.ndarray     # concepts × cue-token probabilities
    filler_tokens: np.ndarray

    def overlap(self, i: int, j: int) -> float:
        """Shared probability mass of two concepts' cue distributions."""
        return float(np.minimum(self.distributions[i], self.distributions[j]).sum())


@dataclass
class SyntheticBenchmark:
    spec: SynthSpec
    concepts: list[str]
    attributes: list[str]
    tasks: dict[str, TaskSplits]
    ratings: RatingTable
    structure: CueStructure
    similarity: pd.DataFrame
    raw_ratings: Optional[pd.DataFrame] = None

    def reordered(self, concepts: list[str]) -> "SyntheticBenchmark":
        """Same benchmark with concepts listed in another order."""
        idx = [self.concepts.index(c) for c in concepts]
        s = self.structure
        return SyntheticBenchmark(
            spec=self.spec,
            concepts=list(concepts),
            attributes=list(self.attributes),
            tasks={c: self.tasks[c] for c in concepts},
            ratings=self.ratings.reorder(concepts),
            structure=CueStructure(z=s.z[idx], cue_tokens=s.cue_tokens,
                                   distributions=s.distributions[idx], filler_tokens=s.filler_tokens),
            similarity=self.similarity,
            raw_ratings=self.raw_ratings,
        )


def validate_spec(spec: SynthSpec) -> None:
    problems = []
    if not 4 <= spec.concepts <= len(settings.EMOTIONS):
        problems.append(f"concepts must lie in [4, {len(settings.EMOTIONS)}], got {spec.concepts}")
    if spec.attributes < 2:
        problems.append(f"attributes must be >= 2, got {spec.attributes}")
    if spec.samples < 20 or spec.samples % 2:
        problems.append(f"samples must be an even number >= 20, got {spec.samples}")
    if spec.seq_len < 1 or spec.group_size < 1 or spec.filler_tokens < 1:
        problems.append("seq_len, group_size and filler_tokens must be >= 1")
    if not 0 < spec.cue_rate <= 1:
        problems.append(f"cue_rate must lie in (0, 1], got {spec.cue_rate}")
    for name in ("noise", "overlap_floor"):
        if not 0 <= getattr(spec, name) < 1:
            problems.append(f"{name} must lie in [0, 1), got {getattr(spec, name)}")
    if spec.participants < 2 or spec.participant_noise < 0 or spec.missing_per_participant < 0:
        problems.append("participants must be >= 2 and noise/missing counts non-negative")
    if spec.raters < 2 or spec.rater_noise < 0:
        problems.append(f"raters must be >= 2 and rater_noise non-negative, got {spec.raters}, {spec.rater_noise}")
    if problems:
        raise InvalidSpec("; ".join(problems))


def names_for(spec: SynthSpec) -> tuple[list[str], list[str]]:
    concepts = settings.EMOTIONS[: spec.concepts]
    if spec.attributes <= len(settings.ATTRIBUTES):
        attributes = settings.ATTRIBUTES[: spec.attributes]
    else:
        attributes = [f"attribute_{j:02d}" for j in range(spec.attributes)]
    return list(concepts), list(attributes)


def cue_structure(spec: SynthSpec, z: np.ndarray) -> CueStructure:
    a, g = spec.attributes, spec.group_size
    first_cue = N_SPECIAL + spec.filler_tokens
    cue_tokens = (first_cue + np.arange(a * 2 * g)).reshape(a, 2, g)
    pos = np.maximum(z, 0.0) ** 2
    neg = np.maximum(-z, 0.0) ** 2
    norms = (z ** 2).sum(axis=1, keepdims=True)
    groups = np.stack([pos, neg], axis=2) / norms[..., None]  # concepts × attributes × 2
    per_token = np.repeat(groups[..., None] / g, g, axis=3)  # spread within group
    q = per_token.reshape(len(z), -1)
    floor = spec.overlap_floor
    distributions = floor / q.shape[1] + (1 - floor) * q
    distributions /= distributions.sum(axis=1, keepdims=True)
    return CueStructure(
        z=z,
        cue_tokens=cue_tokens,
        distributions=distributions,
        filler_tokens=N_SPECIAL + np.arange(spec.filler_tokens),
    )


def _sample_task(
    spec: SynthSpec, structure: CueStructure, c: int, name: str, rng: np.random.Generator
) -> TaskSplits:
    k = len(structure.z)
    cue_ids = structure.cue_tokens.ravel()
    n_cues = max(1, round(spec.cue_rate * spec.seq_len))
    half = spec.samples // 2
    labels = np.repeat([1, 0], half)
    tokens = np.empty((spec.samples, spec.seq_len + 1), dtype=np.int64)
    tokens[:, 0] = BOS
    for i, label in enumerate(labels):
        source = c if label == 1 else rng.choice([o for o in range(k) if o != c])
        seq = rng.choice(structure.filler_tokens, size=spec.seq_len)
        cues = rng.choice(cue_ids, size=n_cues, p=structure.distributions[source])
        noisy = rng.random(n_cues) < spec.noise
        cues[noisy] = rng.choice(structure.filler_tokens, size=int(noisy.sum()))
        slots = rng.choice(spec.seq_len, size=n_cues, replace=False)
        seq[slots] = cues
        tokens[i, 1:] = seq

    # stratified 80/10/10 split
    parts = {s: [] for s in SPLITS}
    for label in (1, 0):
        idx = rng.permutation(np.flatnonzero(labels == label))
        n_train, n_dev = int(round(0.8 * len(idx))), int(round(0.1 * len(idx)))
        parts["train"].append(idx[:n_train])
        parts["dev"].append(idx[n_train:n_train + n_dev])
        parts["test"].append(idx[n_train + n_dev:])
    splits = {}
    for s in SPLITS:
        idx = rng.permutation(np.concatenate(parts[s]))
        splits[s] = TaskDataset(task=name, tokens=tokens[idx], labels=labels[idx])
    return TaskSplits(**splits)


def _similarity_judgments(
    spec: SynthSpec, concepts: list[str], z: np.ndarray, rng: np.random.Generator
) -> pd.DataFrame:
    """Long-form 1..9 similarity ratings, a few blanks per participant, plus neutral rows."""
    k = len(concepts)
    dist = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=2))
    scale = dist.max() if dist.max() > 0 else 1.0
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    n_missing = min(spec.missing_per_participant, len(pairs) - 1)
    rated = np.ones((spec.participants, len(pairs)), dtype=bool)
    for p in range(spec.participants):
        rated[p, rng.choice(len(pairs), size=n_missing, replace=False)] = False
    # every pair keeps at least one rating
    rated[0, ~rated.any(axis=0)] = True

    rows = []
    for p in range(spec.participants):
        pid = f"P{p + 1:02d}"
        noise = rng.normal(0.0, spec.participant_noise, size=len(pairs)) if spec.participant_noise else np.zeros(len(pairs))
        for m, (i, j) in enumerate(pairs):
            score = np.clip(np.round(9 - 8 * dist[i, j] / scale + noise[m]), 1, 9)
            rows.append({
                "participant_id": pid,
                "concept_a": concepts[i],
                "concept_b": concepts[j],
                "similarity": score if rated[p, m] else np.nan,
            })
        for c in concepts:
            rows.append({
                "participant_id": pid,
                "concept_a": settings.NEUTRAL_CONCEPT,
                "concept_b": c,
                "similarity": float(rng.integers(1, 10)),
            })
    return pd.DataFrame(rows)


def _rater_scores(
    spec: SynthSpec, concepts: list[str], attributes: list[str], z: np.ndarray, rng: np.random.Generator
) -> pd.DataFrame:
    """Long-form 1..7 Likert ratings: every rater scores every (concept, attribute) cell."""
    zs = (z - z.mean(axis=0)) / z.std(axis=0, ddof=1)
    noise = rng.normal(0.0, spec.rater_noise, size=(spec.raters, *zs.shape)) if spec.rater_noise else 0.0
    scores = np.clip(np.rint(LIKERT_MID + LIKERT_SCALE * (zs + noise)), 1, 7).astype(np.int64)
    scores = np.broadcast_to(scores, (spec.raters, *zs.shape))
    r, c, a = np.meshgrid(np.arange(spec.raters), np.arange(len(concepts)), np.arange(len(attributes)), indexing="ij")
    return pd.DataFrame({
        "concept": np.asarray(concepts)[c.ravel()],
        "attribute": np.asarray(attributes)[a.ravel()],
        "rater": [f"R{i + 1:02d}" for i in r.ravel()],
        "score": scores.ravel(),
    })


def gen_synthetic(spec: SynthSpec) -> SyntheticBenchmark:
    """Draw a full benchmark: per-concept task splits, ratings and participant judgments."""
    validate_spec(spec)
    concepts, attributes = names_for(spec)
    z_seq, task_seq, people_seq, rater_seq = np.random.SeedSequence(spec.seed).spawn(4)
    z = np.random.default_rng(z_seq).standard_normal((spec.concepts, spec.attributes))
    structure = cue_structure(spec, z)
    task_rngs = [np.random.default_rng(s) for s in task_seq.spawn(spec.concepts)]
    tasks = {
        name: _sample_task(spec, structure, c, name, task_rngs[c])
        for c, name in enumerate(concepts)
    }
    raw_ratings = _rater_scores(spec, concepts, attributes, z, np.random.default_rng(rater_seq))
    ratings = attribute_scores(raw_ratings)
    similarity = _similarity_judgments(spec, concepts, z, np.random.default_rng(people_seq))
    logger.info("Generated %d tasks x %d samples over a vocabulary of %d",
                spec.concepts, spec.samples, spec.vocab_size)
    return SyntheticBenchmark(
        spec=spec, concepts=concepts, attributes=attributes, tasks=tasks,
        ratings=ratings, structure=structure, similarity=similarity, raw_ratings=raw_ratings,
    )


# ── on-disk layout ────────────────────────────────────────────────────────────

def write_benchmark(bench: SyntheticBenchmark, out_dir: Union[str, Path]) -> None:
    """ratings.csv, raw_ratings.csv, similarity.csv, tasks/<concept>/{train,dev,test}.csv and structure.json."""
    out_dir = Path(out_dir)
    write_rating_table(bench.ratings, out_dir / "ratings.csv")
    if bench.raw_ratings is not None:
        write_raw_ratings(bench.raw_ratings, out_dir / "raw_ratings.csv")
    write_similarity_judgments(bench.similarity, out_dir / "similarity.csv")
    for name, splits in bench.tasks.items():
        for s in SPLITS:
            write_task_dataset(getattr(splits, s), out_dir / "tasks" / name / f"{s}.csv")
    structure = {
        "spec": bench.spec.model_dump(),
        "concepts": bench.concepts,
        "attributes": bench.attributes,
        "z": bench.structure.z.tolist(),
    }
    (out_dir / "structure.json").write_text(json.dumps(structure, indent=2) + "\n", encoding="utf-8")


def read_benchmark(out_dir: Union[str, Path]) -> SyntheticBenchmark:
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "structure.json").read_text(encoding="utf-8"))
    spec = SynthSpec(**meta["spec"])
    concepts = meta["concepts"]
    tasks = {
        name: TaskSplits(**{s: read_task_dataset(out_dir / "tasks" / name / f"{s}.csv", task=name) for s in SPLITS})
        for name in concepts
    }
    similarity = pd.read_csv(out_dir / "similarity.csv")
    raw_path = out_dir / "raw_ratings.csv"
    return SyntheticBenchmark(
        spec=spec,
        concepts=concepts,
        attributes=meta["attributes"],
        tasks=tasks,
        ratings=read_rating_table(out_dir / "ratings.csv"),
        structure=cue_structure(spec, np.asarray(meta["z"], dtype=np.float64)),
        similarity=similarity,
        raw_ratings=read_raw_ratings(raw_path) if raw_path.exists() else None,
    )
