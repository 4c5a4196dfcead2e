"""
Pydantic models for ConceptLens data structures.

Array-valued fields hold numpy arrays; validators coerce list input and enforce
the shape and finiteness invariants each artifact carries on disk.
"""
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import InvalidConfig, UnknownAttribute, UnknownConcept

# Special token ids shared by the toy model, the synthetic generator and the
# task CSV reader. Content tokens start at N_SPECIAL.
PAD, BOS, EOS, MASK, YES, NO = 0, 1, 2, 3, 4, 5
N_SPECIAL = 6


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


def _array(v, ndim: int, dtype) -> np.ndarray:
    arr = np.asarray(v, dtype=dtype)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def _float_array(v, ndim: int) -> np.ndarray:
    return _array(v, ndim, np.float64)


def _unique(names: list[str], what: str) -> list[str]:
    seen = set()
    for name in names:
        if name in seen:
            raise ValueError(f"duplicate {what} name {name!r}")
        seen.add(name)
    return names


# ── dataio artifacts ──────────────────────────────────────────────────────────

class RatingTable(_ArrayModel):
    """Concepts × attributes matrix of mean (standardized) human ratings."""
    concepts: list[str] = Field(..., min_length=1, description="Ordered concept names")
    attributes: list[str] = Field(..., min_length=1, description="Ordered attribute names")
    scores: np.ndarray = Field(..., description="concepts × attributes scores")

    @field_validator("scores", mode="before")
    @classmethod
    def _coerce_scores(cls, v):
        return _float_array(v, 2)

    @field_validator("concepts", "attributes")
    @classmethod
    def _names_unique(cls, v: list[str]) -> list[str]:
        return _unique(v, "row/column")

    @model_validator(mode="after")
    def _check_shape(self) -> "RatingTable":
        if self.scores.shape != (len(self.concepts), len(self.attributes)):
            raise ValueError(
                f"scores shape {self.scores.shape} does not match "
                f"{len(self.concepts)} concepts × {len(self.attributes)} attributes"
            )
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores contain missing or non-finite entries")
        return self

    def column(self, attribute: str) -> np.ndarray:
        """Scores of every concept on one attribute."""
        try:
            j = self.attributes.index(attribute)
        except ValueError:
            raise UnknownAttribute(f"Unknown attribute {attribute!r}") from None
        return self.scores[:, j]

    def reorder(self, concepts: list[str]) -> "RatingTable":
        """Return the table with rows in the given concept order."""
        missing = [c for c in concepts if c not in self.concepts]
        if missing:
            raise UnknownConcept(f"Concepts not in rating table: {missing}")
        idx = [self.concepts.index(c) for c in concepts]
        return RatingTable(concepts=list(concepts), attributes=list(self.attributes),
                           scores=self.scores[idx])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.scores, columns=self.attributes)
        df.insert(0, "concept", self.concepts)
        return df


class ActivationTensor(_ArrayModel):
    """Seeds × concepts × neurons array of FFN pre-activation values, one activation vector per prompt."""
    concepts: list[str] = Field(..., min_length=1)
    values: np.ndarray = Field(..., description="seeds × concepts × L pre-activations")

    @field_validator("values", mode="before")
    @classmethod
    def _coerce_values(cls, v):
        return _float_array(v, 3)

    @field_validator("concepts")
    @classmethod
    def _concepts_unique(cls, v: list[str]) -> list[str]:
        return _unique(v, "concept")

    @model_validator(mode="after")
    def _check(self) -> "ActivationTensor":
        s, k, n = self.values.shape
        if k != len(self.concepts):
            raise ValueError(f"{k} concept slices but {len(self.concepts)} concept names")
        if s < 1 or n < 1:
            raise ValueError("activation tensor needs at least one seed and one neuron")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("activation values must be finite")
        return self

    @property
    def seeds(self) -> int:
        return self.values.shape[0]

    @property
    def neurons(self) -> int:
        return self.values.shape[2]

    def seed_mean(self) -> np.ndarray:
        """Concepts × L matrix of seed-averaged activations."""
        return self.values.mean(axis=0)


class ParticipantRDMSet(_ArrayModel):
    """Per-participant dissimilarity matrices built from similarity judgments."""
    participant_ids: list[str] = Field(..., min_length=1)
    concepts: list[str] = Field(..., min_length=2)
    rdms: np.ndarray = Field(..., description="participants × K × K dissimilarities")

    @field_validator("rdms", mode="before")
    @classmethod
    def _coerce(cls, v):
        return _float_array(v, 3)

    @model_validator(mode="after")
    def _check(self) -> "ParticipantRDMSet":
        p, k, k2 = self.rdms.shape
        if p != len(self.participant_ids) or k != k2 or k != len(self.concepts):
            raise ValueError(f"rdms shape {self.rdms.shape} inconsistent with names")
        if not np.array_equal(self.rdms, np.transpose(self.rdms, (0, 2, 1))):
            raise ValueError("participant RDMs must be symmetric")
        if np.any(np.diagonal(self.rdms, axis1=1, axis2=2) != 0):
            raise ValueError("participant RDM diagonals must be exactly 0")
        return self

    @property
    def participants(self) -> int:
        return self.rdms.shape[0]


class TableS1Row(BaseModel):
    """One emotion's rater agreement and prompt accuracy."""
    emotion: str
    kappa: float = Field(..., ge=-1, le=1, description="Cohen's kappa of the dataset raters")
    acc_mean: float = Field(..., ge=0, le=100, description="Mean test accuracy over seeds (%)")
    acc_sd: float = Field(..., ge=0, le=100, description="SD of test accuracy over seeds (%)")


class TableS1Fixture(BaseModel):
    rows: list[TableS1Row]

    @field_validator("rows")
    @classmethod
    def _unique_emotions(cls, v: list[TableS1Row]) -> list[TableS1Row]:
        _unique([r.emotion for r in v], "emotion")
        return v

    @property
    def kappas(self) -> np.ndarray:
        return np.array([r.kappa for r in self.rows])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.acc_mean for r in self.rows])


class RDM(_ArrayModel):
    """Symmetric concepts × concepts dissimilarity matrix with zero diagonal."""
    concepts: list[str] = Field(..., min_length=2)
    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _coerce(cls, v):
        return _float_array(v, 2)

    @model_validator(mode="after")
    def _check(self) -> "RDM":
        k = len(self.concepts)
        m = self.matrix
        if m.shape != (k, k):
            raise ValueError(f"matrix shape {m.shape} does not match {k} concepts")
        if not np.all(np.isfinite(m)):
            raise ValueError("RDM entries must be finite")
        if not np.array_equal(m, m.T):
            raise ValueError("RDM must be symmetric")
        if np.any(np.diag(m) != 0):
            raise ValueError("RDM diagonal must be exactly 0")
        if np.any(m < 0):
            raise ValueError("RDM entries must be non-negative")
        return self

    @property
    def size(self) -> int:
        return len(self.concepts)


# ── toy model ─────────────────────────────────────────────────────────────────

class ModelConfig(BaseModel):
    """Shape knobs of the desk-scale masked-LM encoder."""
    layers: int = Field(4, ge=1)
    d_model: int = Field(64, ge=1)
    heads: int = Field(4, ge=1)
    d_ff: int = Field(256, ge=1)
    vocab: int = Field(160, gt=N_SPECIAL)
    max_len: int = Field(64, ge=3)
    prompt_len: int = Field(10, ge=1)
    init_std: float = Field(0.02, gt=0)

    @property
    def n_neurons(self) -> int:
        return self.layers * self.d_ff

    def check(self) -> None:
        """Raise InvalidConfig when the shapes cannot build a model."""
        if self.d_model % self.heads != 0:
            raise InvalidConfig(
                f"d_model={self.d_model} is not divisible by heads={self.heads}"
            )
        if self.prompt_len + 2 > self.max_len:
            raise InvalidConfig(
                f"max_len={self.max_len} cannot hold [MASK], {self.prompt_len} prompt rows and <s>"
            )


class TrainHyper(BaseModel):
    """Prompt-tuning hyperparameters (Adam on the two verbalizer logits)."""
    lr: float = Field(1e-3, gt=0)
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(32, ge=1)
    prompt_init_std: float = Field(0.02, gt=0)


class PromptState(_ArrayModel):
    """Trained prompt embeddings for one (task, seed)."""
    task: str
    seed: int
    embeddings: np.ndarray = Field(..., description="l × d prompt embedding rows")
    hyper: TrainHyper = Field(default_factory=TrainHyper)

    @field_validator("embeddings", mode="before")
    @classmethod
    def _coerce(cls, v):
        arr = _float_array(v, 2)
        if arr.shape[0] < 1:
            raise ValueError("prompt needs at least one row")
        if not np.all(np.isfinite(arr)):
            raise ValueError("prompt embeddings must be finite")
        return arr


class AblationMask(BaseModel):
    """Global neuron indices whose pre-activation v is zeroed in every forward pass."""
    n_neurons: int = Field(..., ge=1)
    indices: frozenset[int] = Field(default_factory=frozenset)

    @model_validator(mode="after")
    def _in_range(self) -> "AblationMask":
        bad = [i for i in self.indices if not 0 <= i < self.n_neurons]
        if bad:
            raise ValueError(f"mask indices out of range [0, {self.n_neurons}): {sorted(bad)[:5]}")
        return self

    @classmethod
    def empty(cls, n_neurons: int) -> "AblationMask":
        return cls(n_neurons=n_neurons)

    @classmethod
    def of(cls, n_neurons: int, indices) -> "AblationMask":
        return cls(n_neurons=n_neurons, indices=frozenset(int(i) for i in indices))

    def __len__(self) -> int:
        return len(self.indices)


class TaskDataset(_ArrayModel):
    """Labeled yes/no token sequences for one inference task (label 1 = yes)."""
    task: str
    tokens: np.ndarray = Field(..., description="samples × seq_len token ids, PAD-padded")
    labels: np.ndarray = Field(..., description="samples 0/1 labels")

    @field_validator("tokens", mode="before")
    @classmethod
    def _coerce_tokens(cls, v):
        arr = np.asarray(v, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError(f"tokens must be 2-d, got shape {arr.shape}")
        return arr

    @field_validator("labels", mode="before")
    @classmethod
    def _coerce_labels(cls, v):
        arr = np.asarray(v, dtype=np.int64)
        if arr.ndim != 1 or not np.isin(arr, (0, 1)).all():
            raise ValueError("labels must be a 1-d array of 0/1")
        return arr

    @model_validator(mode="after")
    def _aligned(self) -> "TaskDataset":
        if len(self.tokens) != len(self.labels):
            raise ValueError("tokens and labels differ in length")
        return self

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "TaskDataset":
        return TaskDataset(task=self.task, tokens=self.tokens[idx], labels=self.labels[idx])


class TaskSplits(BaseModel):
    train: TaskDataset
    dev: TaskDataset
    test: TaskDataset


# ── analysis results ──────────────────────────────────────────────────────────

class TestResult(BaseModel):
    """Carrier for t, W, F and dip statistics."""
    __test__ = False  # not a pytest class

    statistic: float
    pvalue: float = Field(..., gt=0, le=1)
    tails: Literal["one", "two"]
    n: int = Field(..., ge=1)
    df: Optional[float] = None


class FisherResult(BaseModel):
    mean_r: float
    t: Optional[float] = None
    df: int
    pvalue: Optional[float] = None
    boundary_case: bool = Field(False, description="Fisher z sample has zero variance")


class FactorSolution(_ArrayModel):
    loadings: np.ndarray = Field(..., description="items × factors")
    explained: np.ndarray = Field(..., description="variance explained per factor")
    rotation: str = "none"
    rotation_matrix: Optional[np.ndarray] = None

    @field_validator("loadings", mode="before")
    @classmethod
    def _coerce_loadings(cls, v):
        return _float_array(v, 2)

    @field_validator("explained", mode="before")
    @classmethod
    def _coerce_explained(cls, v):
        return _float_array(v, 1)

    @field_validator("rotation_matrix", mode="before")
    @classmethod
    def _coerce_rotation(cls, v):
        return None if v is None else _float_array(v, 2)

    @property
    def communalities(self) -> np.ndarray:
        return (self.loadings ** 2).sum(axis=1)


class TauMatrix(_ArrayModel):
    """Searchlight result: one Kendall tau per (neuron, attribute)."""
    attributes: list[str]
    taus: np.ndarray
    pvalues: np.ndarray
    significant: np.ndarray
    q: float = Field(..., gt=0, lt=1)

    @field_validator("taus", "pvalues", mode="before")
    @classmethod
    def _coerce_values(cls, v):
        return _float_array(v, 2)

    @field_validator("significant", mode="before")
    @classmethod
    def _coerce_flags(cls, v):
        return _array(v, 2, bool)

    @model_validator(mode="after")
    def _check(self) -> "TauMatrix":
        shape = (self.taus.shape[0], len(self.attributes))
        for name in ("taus", "pvalues", "significant"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {shape}")
        if np.any(np.abs(self.taus) > 1 + 1e-12):
            raise ValueError("tau values must lie in [-1, 1]")
        if np.any(self.pvalues <= 0) or np.any(self.pvalues > 1):
            raise ValueError("p-values must lie in (0, 1]")
        return self

    @property
    def neurons(self) -> int:
        return self.taus.shape[0]

    def attribute_index(self, attribute: str) -> int:
        try:
            return self.attributes.index(attribute)
        except ValueError:
            raise UnknownAttribute(f"Unknown attribute {attribute!r}") from None

    def to_frame(self) -> pd.DataFrame:
        n, a = self.taus.shape
        return pd.DataFrame({
            "neuron": np.repeat(np.arange(n), a),
            "attribute": np.tile(self.attributes, n),
            "tau": self.taus.ravel(),
            "p": self.pvalues.ravel(),
            "significant": self.significant.ravel(),
        })


class NeuronRanking(_ArrayModel):
    attribute: str
    indices: np.ndarray = Field(..., description="neuron indices by descending tau")
    taus: np.ndarray
    significant: np.ndarray

    @field_validator("indices", mode="before")
    @classmethod
    def _coerce_indices(cls, v):
        return _array(v, 1, np.int64)

    @field_validator("taus", mode="before")
    @classmethod
    def _coerce_taus(cls, v):
        return _float_array(v, 1)

    @field_validator("significant", mode="before")
    @classmethod
    def _coerce_flags(cls, v):
        return _array(v, 1, bool)

    @model_validator(mode="after")
    def _check(self) -> "NeuronRanking":
        if not len(self.indices) == len(self.taus) == len(self.significant):
            raise ValueError("indices, taus and significant must have equal length")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "rank": np.arange(1, len(self.indices) + 1),
            "neuron": self.indices,
            "tau": self.taus,
            "significant": self.significant,
        })


class AttributeWeight(_ArrayModel):
    """Fit of one attribute RDM to participants' concept RDMs."""
    attribute: str
    mean_tau: float = Field(..., ge=-1, le=1)
    pvalue: float = Field(..., gt=0, le=1)
    significant: bool
    participant_taus: Optional[np.ndarray] = None

    @field_validator("participant_taus", mode="before")
    @classmethod
    def _coerce_taus(cls, v):
        return None if v is None else _float_array(v, 1)


# ── experiment ────────────────────────────────────────────────────────────────

class SynthSpec(BaseModel):
    """Knobs of the synthetic emotion-inference benchmark."""
    concepts: int = Field(12, description="Number of concepts / inference tasks")
    attributes: int = Field(14, description="Number of rated attributes")
    samples: int = Field(500, description="Samples per task before the 80/10/10 split")
    seq_len: int = Field(16, description="Text tokens per sample after <s>")
    group_size: int = Field(4, description="Cue tokens per (attribute, sign) group")
    filler_tokens: int = Field(16, description="Neutral filler tokens shared by all tasks")
    cue_rate: float = Field(0.3, description="Fraction of text slots carrying cue tokens")
    noise: float = Field(0.1, description="Probability that a cue slot is replaced by filler")
    overlap_floor: float = Field(0.05, description="Uniform mixing weight in every cue distribution")
    participants: int = Field(20, description="Synthetic similarity-judgment participants")
    participant_noise: float = Field(1.0, description="SD of judgment noise in Likert units")
    missing_per_participant: int = Field(3, description="Unrated pairs per participant")
    raters: int = Field(10, description="Synthetic raters scoring every (concept, attribute) cell")
    rater_noise: float = Field(0.5, description="SD of rater noise in units of the attribute score")
    seed: int = Field(0, description="Master seed")

    @property
    def vocab_size(self) -> int:
        return N_SPECIAL + self.filler_tokens + 2 * self.attributes * self.group_size


class AblationRecord(BaseModel):
    """One evaluation of a (task, seed) prompt under a selective or random mask."""
    task: str
    attribute: str
    condition: Literal["selective", "random"]
    n: int = Field(..., ge=1)
    seed: int
    accuracy: float = Field(..., ge=0, le=1)

    @property
    def selector(self) -> str:
        return self.attribute if self.condition == "selective" else "random"


class BaselineRecord(BaseModel):
    """Accuracy of a (task, seed) prompt with no neurons ablated."""
    task: str
    seed: int
    accuracy: float = Field(..., ge=0, le=1)


class DropSummary(_ArrayModel):
    """Paired drop tests; drop = accuracy(random) − accuracy(selective)."""
    by_attribute: pd.DataFrame
    by_task: pd.DataFrame


class ContributionResult(_ArrayModel):
    """Per-task Pearson r between attribute drops and attribute weights, Fisher-averaged."""
    n: Optional[int] = None
    per_task: pd.DataFrame
    fisher: FisherResult


# ── run configuration ─────────────────────────────────────────────────────────

class RunConfig(BaseModel):
    """Everything one reproducible run needs; serialized as experiment.json."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, description="Master seed; PIPELINE_SEED or --seed override it")
    out: str = Field("runs/default", description="Output directory; nothing is written outside it")
    seeds: int = Field(4, ge=1, description="Prompt-training seeds per task")
    synth: SynthSpec = Field(default_factory=SynthSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainHyper = Field(default_factory=TrainHyper)
    q: float = Field(0.01, gt=0, lt=1, description="Searchlight BY-FDR level")
    q_drops: float = Field(0.05, gt=0, lt=1, description="BY-FDR level for drop tests")
    q_human: float = Field(0.05, gt=0, lt=1, description="BY-FDR level across attributes in human RSA")
    q_reliability: float = Field(0.05, gt=0, lt=1, description="BY-FDR level across attributes for rating ICCs")
    factor_permutations: int = Field(1000, ge=100, description="Permutations behind parallel analysis")
    n_levels: list[int] = Field(default_factory=lambda: [32, 64, 128, 192, 256])
    sig_method: Literal["tau_normal", "signrank_pairs"] = "tau_normal"
    exclude_selected_from_random: bool = False
    boots: int = Field(1000, ge=1, description="Human-RSA bootstrap replicates")
    dip_boots: int = Field(10_000, ge=1, description="Monte-Carlo replicates of the dip null")
    jobs: int = Field(1, ge=1)
    similarity: Optional[str] = Field(None, description="Participant judgments CSV; generated when absent")
    raw_ratings: Optional[str] = Field(None, description="Per-rater ratings CSV; the benchmark's when absent")
    fixture: Optional[str] = Field(None, description="Rater agreement fixture; shipped copy when absent")

    @field_validator("n_levels")
    @classmethod
    def _levels(cls, v: list[int]) -> list[int]:
        if not v or any(n < 1 for n in v):
            raise ValueError("n_levels must be non-empty and every level >= 1")
        return sorted(set(v))
