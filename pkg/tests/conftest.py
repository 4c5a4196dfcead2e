"""
Shared fixtures: tiny model and benchmark shapes that keep the suite fast.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root (containing `src/`) is on sys.path
PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.core.models import BOS, ModelConfig, RatingTable, SynthSpec, TaskDataset, TrainHyper  # noqa: E402
from src.ml.toylm import init_model  # noqa: E402


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(layers=2, d_model=8, heads=2, d_ff=16, vocab=40, max_len=24, prompt_len=3, init_std=0.2)


@pytest.fixture
def tiny_model(tiny_cfg):
    return init_model(tiny_cfg, seed=11)


@pytest.fixture
def tiny_spec() -> SynthSpec:
    return SynthSpec(
        concepts=4, attributes=3, samples=40, seq_len=8, group_size=2, filler_tokens=6,
        participants=5, missing_per_participant=1, seed=3,
    )


@pytest.fixture
def fast_hyper() -> TrainHyper:
    return TrainHyper(lr=0.05, epochs=3, batch_size=8)


@pytest.fixture
def separable_task() -> TaskDataset:
    """Yes iff the sequence contains token 7; no sequences contain token 8 instead."""
    rng = np.random.default_rng(0)
    rows, labels = [], []
    for i in range(40):
        label = i % 2
        body = rng.integers(10, 20, size=5)
        body[rng.integers(5)] = 7 if label else 8
        rows.append([BOS, *body])
        labels.append(label)
    return TaskDataset(task="toy", tokens=np.array(rows), labels=np.array(labels))


@pytest.fixture
def ratings() -> RatingTable:
    return RatingTable(
        concepts=["joy", "fear", "anger", "grief", "pride"],
        attributes=["valence", "arousal"],
        scores=[[2.0, 0.5], [-1.0, 1.5], [-1.5, 2.0], [-2.0, -1.0], [1.5, 0.0]],
    )
