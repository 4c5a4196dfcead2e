"""
CLI subcommands. Every stage reads and writes fixed file names under the run's
`out` directory:

    gen          bench/ (ratings.csv, raw_ratings.csv, similarity.csv, tasks/, structure.json)
    reliability  reliability.csv, factor_eigenvalues.csv, loadings_pca.csv, loadings_varimax.csv
    train        model.modl, prompts/<concept>__s<seed>.prmt
    extract      activations.actv
    rsa          taus.csv, significant_per_layer.csv, rdms/<attribute>.csv
    select       rankings/<attribute>.csv, overlap_<n>.csv
    ablate       ablation.jsonl
    report       drops.csv, dip_table.csv, weights.csv, correlation.csv, attribute_drops.svg
"""
import json
import logging
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..analysis.dip import hartigan_dip
from ..analysis.reliability import attribute_reliability, factor_structure
from ..analysis.rsa import human_weights, rank_neurons, searchlight, significant_per_layer
from ..analysis.stats import (
    cohens_kappa,
    has_ties,
    icc,
    icc_f_test,
    kendall_tau,
    paired_t,
    parallel_analysis,
    pca,
    pearson_r,
    tau_significance,
    varimax,
    wilcoxon_signed_rank,
)
from ..core.config import settings
from ..core.dataio import (
    read_ablation_records,
    read_activation_tensor,
    read_ranking,
    read_raw_ratings,
    read_similarity_judgments,
    read_table_s1,
    read_tau_matrix,
    write_ablation_records,
    write_activation_tensor,
    write_frame_csv,
    write_tau_matrix,
)
from ..core.errors import ConfigError, InvalidConfig, IoFailure, MalformedCsv
from ..core.models import RunConfig, TestResult
from ..ml.checkpoints import load_model, load_prompt, save_run_checkpoints
from ..ml.toylm import init_model
from .experiment import (
    cell_seed,
    correlation_table,
    extract_tensor,
    heterogeneity,
    run_ablation_grid,
    summarize_drops,
    table_s1_check,
    task_mean_drops,
    train_prompts,
)
from .graph import build_pipeline_graph
from .reports import write_attribute_rdms, write_reliability, write_reports, write_selection
from .synth import gen_synthetic, read_benchmark, write_benchmark

logger = logging.getLogger(__name__)


# ── run configuration ─────────────────────────────────────────────────────────

def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(data: dict, assignment: str) -> None:
    """Apply one `dotted.path=value` override in place; value is JSON when it parses."""
    if "=" not in assignment:
        raise ConfigError(f"Override {assignment!r} is not of the form dotted.path=value")
    dotted, raw = assignment.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"Override {assignment!r} names no field")
    node = data
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Override {dotted!r}: {key!r} is not a section")
        node = child
    node[keys[-1]] = _parse_value(raw)


def load_run_config(
    path: Optional[str] = None,
    seed: Optional[int] = None,
    q: Optional[float] = None,
    n: Optional[int] = None,
    out: Optional[str] = None,
    jobs: Optional[int] = None,
    sets: Sequence[str] = (),
) -> RunConfig:
    """
    Resolve a RunConfig: defaults, then the JSON file, then PIPELINE_SEED, then the
    explicit flags, then `--set` overrides.
    """
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
    if "jobs" not in data:
        data["jobs"] = settings.JOBS
    if settings.PIPELINE_SEED is not None:
        data["seed"] = settings.PIPELINE_SEED
    flags = {"seed": seed, "q": q, "out": out, "jobs": jobs}
    data.update({k: v for k, v in flags.items() if v is not None})
    if n is not None:
        data["n_levels"] = [n]
    for assignment in sets:
        apply_override(data, assignment)
    try:
        return RunConfig(**data)
    except ValidationError as exc:
        fields = ", ".join(".".join(str(p) for p in e["loc"]) for e in exc.errors())
        raise ConfigError(f"Invalid run configuration ({fields}): {exc}") from exc


def save_run_config(cfg: RunConfig) -> Path:
    path = Path(cfg.out) / "experiment.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


# ── paths ─────────────────────────────────────────────────────────────────────

def _out(cfg: RunConfig) -> Path:
    return Path(cfg.out)


def _load_prompts(cfg: RunConfig) -> dict:
    files = sorted((_out(cfg) / "prompts").glob("*.prmt"))
    if not files:
        raise InvalidConfig(f"No prompts under {_out(cfg) / 'prompts'}; run `train` first")
    prompts = {}
    for f in files:
        state = load_prompt(f)
        prompts[(state.task, state.seed)] = state
    return prompts


def _similarity_path(cfg: RunConfig) -> Path:
    return Path(cfg.similarity) if cfg.similarity else _out(cfg) / "bench" / "similarity.csv"


def _raw_ratings_path(cfg: RunConfig) -> Path:
    return Path(cfg.raw_ratings) if cfg.raw_ratings else _out(cfg) / "bench" / "raw_ratings.csv"


# ── stage subcommands ─────────────────────────────────────────────────────────

def cmd_gen(cfg: RunConfig) -> list[Path]:
    spec = cfg.synth.model_copy(update={"seed": cfg.seed})
    bench = gen_synthetic(spec)
    write_benchmark(bench, _out(cfg) / "bench")
    return [_out(cfg) / "bench"]


def cmd_reliability(cfg: RunConfig) -> list[Path]:
    path = _raw_ratings_path(cfg)
    if not path.exists():
        logger.warning("No per-rater ratings at %s; skipping reliability and factor tables", path)
        return []
    raw = read_raw_ratings(path)
    reliability = attribute_reliability(raw, cfg.q_reliability)
    factors = factor_structure(raw, cfg.factor_permutations, seed=cell_seed(cfg.seed, "factors"))
    return write_reliability(reliability, factors, _out(cfg))


def cmd_train(cfg: RunConfig, progress: bool = False) -> list[Path]:
    bench = read_benchmark(_out(cfg) / "bench")
    if cfg.model.vocab < bench.spec.vocab_size:
        raise InvalidConfig(f"Model vocab {cfg.model.vocab} is smaller than the benchmark's {bench.spec.vocab_size}")
    model = init_model(cfg.model, cell_seed(cfg.seed, "model"))
    prompts = train_prompts(model, bench, cfg.seeds, cfg.seed, cfg.train, jobs=cfg.jobs, progress=progress)
    return save_run_checkpoints(model, prompts, _out(cfg))


def cmd_extract(cfg: RunConfig) -> list[Path]:
    bench = read_benchmark(_out(cfg) / "bench")
    model = load_model(_out(cfg) / "model.modl")
    tensor = extract_tensor(model, _load_prompts(cfg), bench.concepts)
    path = _out(cfg) / "activations.actv"
    write_activation_tensor(tensor, path)
    return [path]


def cmd_rsa(cfg: RunConfig, progress: bool = False) -> list[Path]:
    bench = read_benchmark(_out(cfg) / "bench")
    tensor = read_activation_tensor(_out(cfg) / "activations.actv")
    taus = searchlight(tensor, bench.ratings, cfg.q, sig_method=cfg.sig_method, jobs=cfg.jobs, progress=progress)
    paths = [_out(cfg) / "taus.csv", _out(cfg) / "significant_per_layer.csv"]
    write_tau_matrix(taus, paths[0])
    write_frame_csv(significant_per_layer(taus, cfg.model.d_ff), paths[1])
    return paths + write_attribute_rdms(bench.ratings, _out(cfg))


def cmd_select(cfg: RunConfig) -> list[Path]:
    taus = read_tau_matrix(_out(cfg) / "taus.csv", cfg.q)
    rankings = [rank_neurons(taus, a, taus.neurons) for a in taus.attributes]
    return write_selection(rankings, cfg.n_levels, _out(cfg))


def cmd_ablate(cfg: RunConfig, progress: bool = False) -> list[Path]:
    bench = read_benchmark(_out(cfg) / "bench")
    model = load_model(_out(cfg) / "model.modl")
    rankings = {a: read_ranking(_out(cfg) / "rankings" / f"{a}.csv", a) for a in bench.attributes}
    tests = {name: splits.test for name, splits in bench.tasks.items()}
    records, baselines = run_ablation_grid(
        model, rankings, tests, _load_prompts(cfg), cfg.n_levels, cfg.seed,
        exclude_selected=cfg.exclude_selected_from_random, jobs=cfg.jobs, progress=progress,
    )
    path = _out(cfg) / "ablation.jsonl"
    write_ablation_records(records, baselines, path)
    return [path]


def cmd_report(cfg: RunConfig, plot: bool = False, progress: bool = False) -> list[Path]:
    records, _ = read_ablation_records(_out(cfg) / "ablation.jsonl")
    summary = summarize_drops(records, q=cfg.q_drops)
    drops = task_mean_drops(records)
    dips = heterogeneity(drops, boots=cfg.dip_boots, seed=cfg.seed)
    weights, correlation = None, None
    similarity = _similarity_path(cfg)
    if similarity.exists():
        bench = read_benchmark(_out(cfg) / "bench")
        participants = read_similarity_judgments(similarity, concepts=bench.concepts)
        weights = human_weights(bench.ratings, participants, cfg.boots, cfg.q_human,
                                seed=cfg.seed, progress=progress)
        correlation = correlation_table(drops, weights)
    else:
        logger.warning("No participant judgments at %s; skipping weights and correlation.csv", similarity)
    levels = sorted(drops["n"].unique())
    plot_n = int(levels[len(levels) // 2]) if plot else None
    return write_reports(_out(cfg), summary, dips=dips, correlation=correlation, weights=weights, plot_n=plot_n)


def cmd_run(cfg: RunConfig, plot: bool = False, progress: bool = False) -> list[Path]:
    """Every stage in one LangGraph invocation."""
    save_run_config(cfg)
    graph = build_pipeline_graph()
    result = graph.invoke({"config": cfg, "plot": plot, "progress": progress})
    return result.get("written", [])


# ── standalone commands ───────────────────────────────────────────────────────

STATS_TESTS = ("tau", "pearson", "paired-t", "wilcoxon", "dip", "icc1k", "icc2k", "kappa", "pca", "factors")


def _labels(frame: pd.DataFrame, name: str, path: str) -> np.ndarray:
    if name not in frame.columns:
        raise MalformedCsv(f"{path} has no column {name!r}", column=name)
    labels = frame[name]
    bad = np.flatnonzero(labels.isna().to_numpy())
    if len(bad):
        raise MalformedCsv(f"Missing label in {path}", row=int(bad[0]) + 2, column=name)
    return labels.astype(str).to_numpy()


def _solution_dict(solution, columns: Sequence[str]) -> dict:
    return {
        "explained": solution.explained.tolist(),
        "loadings": {c: row.tolist() for c, row in zip(columns, solution.loadings)},
    }


def _column(frame: pd.DataFrame, name: str, path: str) -> np.ndarray:
    if name not in frame.columns:
        raise MalformedCsv(f"{path} has no column {name!r}", column=name)
    values = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(np.isnan(values))
    if len(bad):
        raise MalformedCsv(f"Non-numeric cell in {path}", row=int(bad[0]) + 2, column=name)
    return values


def cmd_stats(
    test: str,
    csv: str,
    columns: Sequence[str],
    tail: str = "two-sided",
    boots: int = 10_000,
    seed: int = 0,
    factors: int = 1,
    permutations: int = 1000,
) -> dict:
    """
    Run one test on CSV columns and return a JSON-ready dict.

    One column is a sample of differences; two columns are paired and differenced
    (tau and pearson correlate them); icc uses every named column as one rater.
    kappa compares two label columns. pca extracts `factors` components from the
    named item columns; the factors test lets parallel analysis pick the count and
    rotates with varimax when two or more are kept.
    """
    try:
        frame = pd.read_csv(csv)
    except OSError as exc:
        raise IoFailure(f"Could not read {csv}: {exc}", path=str(csv)) from exc
    except pd.errors.EmptyDataError as exc:
        raise MalformedCsv(f"{csv} is empty") from exc
    if test == "kappa":
        if len(columns) != 2:
            raise ConfigError("kappa needs exactly two label columns")
        a, b = (_labels(frame, c, csv) for c in columns)
        return {"test": test, "kappa": cohens_kappa(a, b), "n": len(a)}
    data = [_column(frame, c, csv) for c in columns]
    if test in ("pca", "factors"):
        if len(data) < 2:
            raise ConfigError(f"{test} needs at least two item columns")
        items = np.column_stack(data)
        if test == "pca":
            return {"test": test, "n": len(items), **_solution_dict(pca(items, factors), columns)}
        retained = parallel_analysis(items, permutations=permutations, seed=seed)
        result = {"test": test, "n": len(items), "retained": retained}
        if retained >= 1:
            solution = pca(items, retained)
            if retained >= 2:
                solution = varimax(solution)
            result.update(rotation=solution.rotation, **_solution_dict(solution, columns))
        return result
    if test in ("tau", "pearson"):
        if len(data) != 2:
            raise ConfigError(f"{test} needs exactly two columns")
        if test == "pearson":
            r = pearson_r(*data)
            return {"test": test, "r": r, "n": len(data[0]), "df": len(data[0]) - 2}
        tau, n = kendall_tau(*data), len(data[0])
        ties = has_ties(*data)
        upper, lower = tau_significance(tau, n, ties=ties), tau_significance(-tau, n, ties=ties)
        if tail == "greater":
            res = TestResult(statistic=tau, pvalue=upper, tails="one", n=n)
        elif tail == "less":
            res = TestResult(statistic=tau, pvalue=lower, tails="one", n=n)
        else:
            res = TestResult(statistic=tau, pvalue=min(1.0, 2 * min(upper, lower)), tails="two", n=n)
    elif test in ("paired-t", "wilcoxon", "dip"):
        if len(data) not in (1, 2):
            raise ConfigError(f"{test} needs one column of differences or two paired columns")
        sample = data[0] if len(data) == 1 else data[0] - data[1]
        if test == "paired-t":
            res = paired_t(sample, tail=tail)
        elif test == "wilcoxon":
            res = wilcoxon_signed_rank(sample, tail=tail)
        else:
            res = hartigan_dip(sample, boots=boots, seed=seed)
    elif test in ("icc1k", "icc2k"):
        form = "ICC1k" if test == "icc1k" else "ICC2k"
        matrix = np.column_stack(data)
        res = icc_f_test(matrix, form)
        return {"test": test, "icc": icc(matrix, form), **res.model_dump()}
    else:
        raise ConfigError(f"Unknown test {test!r}; choose one of {', '.join(STATS_TESTS)}")
    return {"test": test, **res.model_dump()}


def cmd_check_s1(fixture: Optional[str] = None) -> dict:
    table = read_table_s1(fixture)
    r = table_s1_check(table)
    return {"r": r, "n": len(table.rows), "df": len(table.rows) - 2}
