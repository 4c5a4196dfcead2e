"""
Readers and writers for every ConceptLens artifact.

CSV files are UTF-8 with LF line endings and `.` decimals. Floats are written with
their shortest round-trip representation so write→read is bit-exact. Errors that
locate a bad cell report the file line number (header = line 1) and the column.
"""
import io
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from .config import settings
from .errors import (
    BadMagic,
    DuplicateName,
    EmptyTable,
    IoFailure,
    MalformedCsv,
    MissingCell,
    NonFiniteValue,
    OutOfRangeScore,
    PairFullyMissing,
    TruncatedFile,
    UnknownConcept,
)
from .models import (
    NO,
    YES,
    AblationRecord,
    ActivationTensor,
    BaselineRecord,
    NeuronRanking,
    ParticipantRDMSet,
    RatingTable,
    RDM,
    TableS1Fixture,
    TableS1Row,
    TaskDataset,
    TauMatrix,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ACTV_MAGIC = b"ACTV1\n"
LABELS = {"yes": 1, "no": 0}


# ── low-level helpers ─────────────────────────────────────────────────────────

def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Could not read {path}: {exc}", path=str(path)) from exc


def _write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"Could not write {path}: {exc}", path=str(path)) from exc


def _read_cells(path: PathLike) -> pd.DataFrame:
    """Load a CSV as raw strings, header included as row 0."""
    text = _read_bytes(path).decode("utf-8")
    if not text.strip():
        raise EmptyTable(f"{path} is empty")
    try:
        return pd.read_csv(
            io.StringIO(text), header=None, dtype=str, keep_default_na=False,
            skip_blank_lines=True,
        )
    except pd.errors.ParserError as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise MalformedCsv(f"Non-numeric cell {cell!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise MalformedCsv(f"Non-finite cell {cell!r}", row=row, column=column)
    return value


def _check_header(cells: pd.DataFrame, expected: list[str], path: PathLike) -> None:
    header = [c.strip() for c in cells.iloc[0].tolist()]
    if header != expected:
        raise MalformedCsv(f"{path}: expected header {','.join(expected)}, got {','.join(header)}", row=1)


def write_frame_csv(df: pd.DataFrame, path: PathLike) -> None:
    """Write a report frame with the fixed CSV dialect."""
    _write_bytes(path, df.to_csv(index=False, lineterminator="\n").encode("utf-8"))


# ── rating tables ─────────────────────────────────────────────────────────────

def read_rating_table(path: PathLike) -> RatingTable:
    """Read a wide `concept,<attr1>,...` CSV into a RatingTable, file order kept."""
    cells = _read_cells(path)
    header = [c.strip() for c in cells.iloc[0].tolist()]
    if header[0] != "concept" or len(header) < 2 or any(not h for h in header[1:]):
        raise MalformedCsv(f"{path}: header must be concept,<attribute>,...", row=1)
    attributes = header[1:]
    dup = pd.Index(attributes)[pd.Index(attributes).duplicated()]
    if len(dup):
        raise DuplicateName(f"Duplicate attribute {dup[0]!r} in {path}")
    if len(cells) < 2:
        raise EmptyTable(f"{path} has no concept rows")

    concepts: list[str] = []
    scores = np.empty((len(cells) - 1, len(attributes)))
    for i in range(1, len(cells)):
        row = cells.iloc[i].tolist()
        name = row[0].strip()
        if not name:
            raise MalformedCsv("Empty concept name", row=i + 1, column="concept")
        if name in concepts:
            raise DuplicateName(f"Duplicate concept {name!r} in {path}", row=i + 1)
        concepts.append(name)
        for j, attr in enumerate(attributes):
            scores[i - 1, j] = _parse_float(row[j + 1], i + 1, attr)
    return RatingTable(concepts=concepts, attributes=attributes, scores=scores)


def write_rating_table(table: RatingTable, path: PathLike) -> None:
    write_frame_csv(table.to_frame(), path)


RAW_RATING_COLUMNS = ["concept", "attribute", "rater", "score"]


def read_raw_ratings(path: PathLike) -> pd.DataFrame:
    """Long-form `concept,attribute,rater,score` ratings; one (concept, attribute, rater) cell per row."""
    cells = _read_cells(path)
    _check_header(cells, RAW_RATING_COLUMNS, path)
    if len(cells) < 2:
        raise EmptyTable(f"{path} has no ratings")
    rows = []
    for i in range(1, len(cells)):
        concept, attribute, rater, score = (c.strip() for c in cells.iloc[i].tolist())
        for name, value in (("concept", concept), ("attribute", attribute), ("rater", rater)):
            if not value:
                raise MalformedCsv(f"Empty {name}", row=i + 1, column=name)
        rows.append((concept, attribute, rater, _parse_float(score, i + 1, "score")))
    frame = pd.DataFrame(rows, columns=RAW_RATING_COLUMNS)
    dup = frame.duplicated(["concept", "attribute", "rater"])
    if dup.any():
        first = int(np.flatnonzero(dup.to_numpy())[0])
        raise DuplicateName(f"Repeated (concept, attribute, rater) cell in {path}", row=first + 2)
    return frame


def write_raw_ratings(frame: pd.DataFrame, path: PathLike) -> None:
    write_frame_csv(frame[RAW_RATING_COLUMNS], path)


def attribute_scores(raw: pd.DataFrame) -> RatingTable:
    """
    Build a RatingTable from long-form ratings.

    Args:
        raw: Frame with columns concept, attribute, rater, score. Repeated ratings of a
            (concept, attribute) cell are averaged over raters.

    Returns:
        RatingTable whose columns are z-standardized (sample SD). A constant column is
        only centered.
    """
    missing_cols = {"concept", "attribute", "rater", "score"} - set(raw.columns)
    if missing_cols:
        raise MalformedCsv(f"Raw ratings lack columns {sorted(missing_cols)}")
    if raw.empty:
        raise EmptyTable("No raw ratings given")
    concepts = list(dict.fromkeys(raw["concept"]))
    attributes = list(dict.fromkeys(raw["attribute"]))
    means = (
        raw.groupby(["concept", "attribute"], sort=False)["score"].mean()
        .unstack("attribute")
        .reindex(index=concepts, columns=attributes)
    )
    values = means.to_numpy(dtype=np.float64)
    gaps = np.argwhere(np.isnan(values))
    if len(gaps):
        i, j = gaps[0]
        raise MissingCell(f"No rating for concept {concepts[i]!r} on attribute {attributes[j]!r}")
    centered = values - values.mean(axis=0)
    sd = values.std(axis=0, ddof=1) if len(concepts) > 1 else np.zeros(len(attributes))
    scores = np.divide(centered, sd, out=centered.copy(), where=sd > 0)
    return RatingTable(concepts=concepts, attributes=attributes, scores=scores)


# ── activation tensors ────────────────────────────────────────────────────────

def write_activation_tensor(t: ActivationTensor, path: PathLike) -> None:
    """Write the ACTV1 container: magic, u32 counts, length-prefixed names, <f8 payload."""
    values = np.asarray(t.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue("Refusing to write an activation tensor with non-finite values")
    s, k, n = values.shape
    parts = [ACTV_MAGIC, np.array([s, k, n], dtype="<u4").tobytes()]
    for name in t.concepts:
        encoded = name.encode("utf-8")
        parts.append(np.array([len(encoded)], dtype="<u4").tobytes())
        parts.append(encoded)
    parts.append(values.astype("<f8").tobytes(order="C"))
    _write_bytes(path, b"".join(parts))


def read_activation_tensor(path: PathLike) -> ActivationTensor:
    data = _read_bytes(path)
    if data[: len(ACTV_MAGIC)] != ACTV_MAGIC:
        raise BadMagic(f"{path} is not an ACTV1 activation file")
    pos = len(ACTV_MAGIC)

    def take(n_bytes: int) -> bytes:
        nonlocal pos
        if pos + n_bytes > len(data):
            raise TruncatedFile(f"{path} ends at byte {len(data)}, needed {pos + n_bytes}")
        chunk = data[pos:pos + n_bytes]
        pos += n_bytes
        return chunk

    s, k, n = (int(v) for v in np.frombuffer(take(12), dtype="<u4"))
    concepts = []
    for _ in range(k):
        length = int(np.frombuffer(take(4), dtype="<u4")[0])
        concepts.append(take(length).decode("utf-8"))
    payload = np.frombuffer(take(8 * s * k * n), dtype="<f8").astype(np.float64)
    if pos != len(data):
        raise TruncatedFile(f"{path} has {len(data) - pos} trailing bytes")
    if not np.all(np.isfinite(payload)):
        raise NonFiniteValue(f"{path} contains non-finite activation values")
    return ActivationTensor(concepts=concepts, values=payload.reshape(s, k, n))


# ── similarity judgments ──────────────────────────────────────────────────────

def read_similarity_judgments(
    path: PathLike,
    concepts: Optional[list[str]] = None,
    exclude: Iterable[str] = (settings.NEUTRAL_CONCEPT,),
) -> ParticipantRDMSet:
    """
    Read long-form pair similarities (1..9 Likert) into per-participant RDMs.

    Rows naming an excluded concept are dropped. Missing ratings (empty cells or
    absent pairs) are imputed with the mean over participants who rated the pair,
    then every score becomes 10 − similarity.

    Args:
        path: CSV with header participant_id,concept_a,concept_b,similarity.
        concepts: Concept order of the RDMs. Defaults to order of first appearance;
            when given, any other non-excluded concept raises UnknownConcept.
        exclude: Concepts dropped at read time.
    """
    columns = ["participant_id", "concept_a", "concept_b", "similarity"]
    cells = _read_cells(path)
    _check_header(cells, columns, path)
    excluded = set(exclude)
    known = None if concepts is None else list(concepts)
    order: list[str] = [] if known is None else known
    participants: list[str] = []
    ratings: dict[tuple[str, frozenset], float] = {}

    for i in range(1, len(cells)):
        pid, a, b, raw = (c.strip() for c in cells.iloc[i].tolist())
        line = i + 1
        if a in excluded or b in excluded:
            continue
        for name, col in ((a, "concept_a"), (b, "concept_b")):
            if name not in order:
                if known is not None:
                    raise UnknownConcept(f"Unknown concept {name!r} at line {line}", concept=name)
                order.append(name)
        if a == b:
            raise MalformedCsv(f"Self-pair {a!r}", row=line, column="concept_b")
        if pid not in participants:
            participants.append(pid)
        key = (pid, frozenset((a, b)))
        if key in ratings:
            raise MalformedCsv(f"Duplicate rating of ({a}, {b}) by {pid}", row=line)
        if raw == "":
            ratings[key] = math.nan
            continue
        score = _parse_float(raw, line, "similarity")
        if not 1 <= score <= 9:
            raise OutOfRangeScore(f"Similarity {raw} outside 1..9", row=line, column="similarity")
        ratings[key] = score

    if not participants or len(order) < 2:
        raise EmptyTable(f"{path} has no usable similarity rows")

    k = len(order)
    index = {c: j for j, c in enumerate(order)}
    sim = np.full((len(participants), k, k), math.nan)
    for (pid, pair), score in ratings.items():
        a, b = tuple(pair)
        p = participants.index(pid)
        sim[p, index[a], index[b]] = sim[p, index[b], index[a]] = score

    rows, cols = np.tril_indices(k, -1)
    for i, j in zip(rows, cols):
        cell = sim[:, i, j]
        gaps = np.isnan(cell)
        if gaps.all():
            raise PairFullyMissing(f"No participant rated ({order[i]}, {order[j]})")
        if gaps.any():
            fill = cell[~gaps].mean()
            sim[gaps, i, j] = sim[gaps, j, i] = fill
    rdms = 10.0 - sim
    for p in range(len(participants)):
        np.fill_diagonal(rdms[p], 0.0)
    logger.info("Read %d participants over %d concepts from %s", len(participants), k, path)
    return ParticipantRDMSet(participant_ids=participants, concepts=order, rdms=rdms)


def write_similarity_judgments(frame: pd.DataFrame, path: PathLike) -> None:
    """Write long-form judgments; NaN similarity becomes an empty cell."""
    out = frame[["participant_id", "concept_a", "concept_b", "similarity"]].copy()
    out["similarity"] = out["similarity"].map(lambda v: "" if pd.isna(v) else str(int(v)))
    write_frame_csv(out, path)


# ── Rater agreement fixture ──────────────────────────────────────────────────────────

def read_table_s1(path: Optional[PathLike] = None, expect_rows: Optional[int] = 27) -> TableS1Fixture:
    """Read the emotion,kappa,acc_mean,acc_sd fixture (shipped under data/ by default)."""
    path = path or settings.table_s1_path
    columns = ["emotion", "kappa", "acc_mean", "acc_sd"]
    cells = _read_cells(path)
    _check_header(cells, columns, path)
    rows = []
    for i in range(1, len(cells)):
        emotion, *nums = (c.strip() for c in cells.iloc[i].tolist())
        kappa, acc_mean, acc_sd = (_parse_float(v, i + 1, col) for v, col in zip(nums, columns[1:]))
        if not -1 <= kappa <= 1:
            raise OutOfRangeScore(f"kappa {kappa} outside [-1, 1]", row=i + 1, column="kappa")
        for value, col in ((acc_mean, "acc_mean"), (acc_sd, "acc_sd")):
            if not 0 <= value <= 100:
                raise OutOfRangeScore(f"{col} {value} outside [0, 100]", row=i + 1, column=col)
        if any(r.emotion == emotion for r in rows):
            raise DuplicateName(f"Duplicate emotion {emotion!r} in {path}", row=i + 1)
        rows.append(TableS1Row(emotion=emotion, kappa=kappa, acc_mean=acc_mean, acc_sd=acc_sd))
    if not rows:
        raise EmptyTable(f"{path} has no rows")
    if expect_rows is not None and len(rows) != expect_rows:
        raise MalformedCsv(f"{path} has {len(rows)} emotions, expected {expect_rows}")
    return TableS1Fixture(rows=rows)


# ── task datasets ─────────────────────────────────────────────────────────────

def write_task_dataset(ds: TaskDataset, path: PathLike) -> None:
    """Write `tokens,label` rows; PAD (0) padding is stripped."""
    lines = ["tokens,label"]
    for tokens, label in zip(ds.tokens, ds.labels):
        ids = " ".join(str(int(t)) for t in tokens if t != 0)
        lines.append(f"{ids},{'yes' if label == 1 else 'no'}")
    _write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_task_dataset(path: PathLike, task: Optional[str] = None) -> TaskDataset:
    cells = _read_cells(path)
    _check_header(cells, ["tokens", "label"], path)
    seqs, labels = [], []
    for i in range(1, len(cells)):
        raw_tokens, raw_label = (c.strip() for c in cells.iloc[i].tolist())
        try:
            seqs.append([int(t) for t in raw_tokens.split()])
        except ValueError:
            raise MalformedCsv(f"Bad token list {raw_tokens!r}", row=i + 1, column="tokens") from None
        if raw_label not in LABELS:
            raise MalformedCsv(f"Label must be yes/no, got {raw_label!r}", row=i + 1, column="label")
        labels.append(LABELS[raw_label])
    width = max((len(s) for s in seqs), default=0)
    tokens = np.zeros((len(seqs), width), dtype=np.int64)
    for r, seq in enumerate(seqs):
        tokens[r, : len(seq)] = seq
    return TaskDataset(task=task or Path(path).stem, tokens=tokens, labels=np.array(labels, dtype=np.int64))


# ── RDMs, taus, rankings ──────────────────────────────────────────────────────

def write_rdm_csv(rdm: RDM, path: PathLike) -> None:
    df = pd.DataFrame(rdm.matrix, columns=rdm.concepts)
    df.insert(0, "concept", rdm.concepts)
    write_frame_csv(df, path)


def write_tau_matrix(m: TauMatrix, path: PathLike) -> None:
    write_frame_csv(m.to_frame(), path)


def read_tau_matrix(path: PathLike, q: float) -> TauMatrix:
    """Rebuild a TauMatrix from its `neuron,attribute,tau,p,significant` export."""
    try:
        df = pd.read_csv(path, dtype={"attribute": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise IoFailure(f"Could not read {path}: {exc}") from exc
    if df.empty:
        raise EmptyTable(f"{path} has no rows")
    attributes = list(dict.fromkeys(df["attribute"]))
    n = int(df["neuron"].max()) + 1
    shape = (n, len(attributes))
    if len(df) != n * len(attributes):
        raise MalformedCsv(f"{path} does not cover every (neuron, attribute) cell")
    df = df.sort_values(["neuron"], kind="stable")
    return TauMatrix(
        attributes=attributes,
        taus=df["tau"].to_numpy(np.float64).reshape(shape),
        pvalues=df["p"].to_numpy(np.float64).reshape(shape),
        significant=df["significant"].astype(bool).to_numpy().reshape(shape),
        q=q,
    )


def write_ranking(r: NeuronRanking, path: PathLike) -> None:
    write_frame_csv(r.to_frame(), path)


def read_ranking(path: PathLike, attribute: str) -> NeuronRanking:
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise IoFailure(f"Could not read {path}: {exc}") from exc
    if df.empty:
        raise EmptyTable(f"{path} has no rows")
    return NeuronRanking(
        attribute=attribute,
        indices=df["neuron"].to_numpy(np.int64),
        taus=df["tau"].to_numpy(np.float64),
        significant=df["significant"].astype(bool).to_numpy(),
    )


# ── ablation records ──────────────────────────────────────────────────────────

def write_ablation_records(
    records: list[AblationRecord],
    baselines: list[BaselineRecord],
    path: PathLike,
) -> None:
    """Write JSON-lines: baselines first (condition "none", n 0), then grid records."""
    lines = []
    for b in baselines:
        lines.append(json.dumps({
            "task": b.task, "selector": "none", "attribute": None, "condition": "none",
            "n": 0, "seed": b.seed, "accuracy": b.accuracy,
        }))
    for r in records:
        lines.append(json.dumps({
            "task": r.task, "selector": r.selector, "attribute": r.attribute,
            "condition": r.condition, "n": r.n, "seed": r.seed, "accuracy": r.accuracy,
        }))
    _write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_ablation_records(path: PathLike) -> tuple[list[AblationRecord], list[BaselineRecord]]:
    records, baselines = [], []
    for line_no, line in enumerate(_read_bytes(path).decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedCsv(f"Invalid JSON: {exc.msg}", row=line_no) from exc
        if obj.get("condition") == "none":
            baselines.append(BaselineRecord(task=obj["task"], seed=obj["seed"], accuracy=obj["accuracy"]))
        else:
            records.append(AblationRecord(
                task=obj["task"], attribute=obj["attribute"], condition=obj["condition"],
                n=obj["n"], seed=obj["seed"], accuracy=obj["accuracy"],
            ))
    return records, baselines
