"""
End-to-end experiment: prompt training over concepts and seeds, activation
extraction, searchlight RSA, the selective / random ablation grid and the
aggregate drop analyses.

Every random draw comes from a SeedSequence keyed by the cell it belongs to
(master seed plus task, attribute, n, seed), so results never depend on worker
count or iteration order.
"""
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from ..analysis.dip import hartigan_dip
from ..analysis.rsa import rank_neurons, searchlight
from ..analysis.stats import TINY, fdr_by, fisher_average, paired_t, pearson_r, t_interval
from ..core.errors import (
    BoundaryR,
    IncompleteGrid,
    InvalidConfig,
    NTooLarge,
    TooFewTasks,
    UnknownAttribute,
)
from ..core.models import (
    AblationMask,
    AblationRecord,
    ActivationTensor,
    AttributeWeight,
    BaselineRecord,
    ContributionResult,
    DropSummary,
    FisherResult,
    ModelConfig,
    NeuronRanking,
    PromptState,
    SynthSpec,
    TableS1Fixture,
    TauMatrix,
    TaskDataset,
    TestResult,
    TrainHyper,
)
from ..ml.prompting import evaluate, extract_activations, train_prompt
from ..ml.toylm import ToyMaskedLM, init_model
from .synth import SyntheticBenchmark, gen_synthetic

logger = logging.getLogger(__name__)

DIP_WARN_BELOW = 8


def _key(part: Union[int, str]) -> int:
    return zlib.crc32(part.encode("utf-8")) if isinstance(part, str) else int(part)


def cell_seed(*parts: Union[int, str]) -> int:
    """A 32-bit seed derived from (master, names, counters); order-free across cells."""
    return int(np.random.SeedSequence([_key(p) for p in parts]).generate_state(1)[0])


def _worker_init() -> None:
    torch.set_num_threads(1)


# ── training and extraction ───────────────────────────────────────────────────

@dataclass
class PipelineResult:
    model: ToyMaskedLM
    benchmark: SyntheticBenchmark
    prompts: dict[tuple[str, int], PromptState]
    tensor: ActivationTensor
    taus: TauMatrix
    rankings: dict[str, NeuronRanking]


def _train_job(args) -> PromptState:
    return train_prompt(*args)


def train_prompts(
    model: ToyMaskedLM,
    bench: SyntheticBenchmark,
    seeds: int,
    master_seed: int,
    hyper: TrainHyper,
    jobs: int = 1,
    progress: bool = False,
) -> dict[tuple[str, int], PromptState]:
    """One prompt per (concept, seed); each seed is derived from the concept name."""
    cells = [(name, s) for s in range(seeds) for name in bench.concepts]
    args = [
        (model, bench.tasks[name].train, cell_seed(master_seed, "prompt", name, s), hyper)
        for name, s in cells
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init) as pool:
            outputs = list(tqdm(pool.map(_train_job, args), total=len(args),
                                desc="prompts", disable=not progress))
    else:
        outputs = [train_prompt(*a) for a in tqdm(args, desc="prompts", disable=not progress)]
    return {cell: PromptState(**{**p.model_dump(), "seed": cell[1]}) for cell, p in zip(cells, outputs)}


def extract_tensor(
    model: ToyMaskedLM,
    prompts: Mapping[tuple[str, int], PromptState],
    concepts: list[str],
) -> ActivationTensor:
    """Stack the activation vector of every (concept, seed) prompt into a seeds × concepts × L tensor."""
    seeds = sorted({s for _, s in prompts})
    values = np.empty((len(seeds), len(concepts), model.cfg.n_neurons))
    for i, s in enumerate(seeds):
        for j, name in enumerate(concepts):
            values[i, j] = extract_activations(model, prompts[(name, s)])
    return ActivationTensor(concepts=list(concepts), values=values)


def run_pipeline(
    spec: SynthSpec,
    cfg: ModelConfig,
    seeds: int,
    q: float,
    hyper: Optional[TrainHyper] = None,
    sig_method: str = "tau_normal",
    bench: Optional[SyntheticBenchmark] = None,
    jobs: int = 1,
    progress: bool = False,
) -> PipelineResult:
    """
    Train prompts, extract activations and run searchlight against the ground-truth ratings.

    Rankings cover every neuron, so any top-n is a prefix.
    """
    torch.set_num_threads(1)
    if seeds < 1:
        raise InvalidConfig(f"seeds must be >= 1, got {seeds}")
    bench = bench or gen_synthetic(spec)
    if cfg.vocab < spec.vocab_size:
        raise InvalidConfig(f"Model vocab {cfg.vocab} is smaller than the benchmark's {spec.vocab_size}")
    hyper = hyper or TrainHyper()
    model = init_model(cfg, cell_seed(spec.seed, "model"))
    prompts = train_prompts(model, bench, seeds, spec.seed, hyper, jobs=jobs, progress=progress)
    tensor = extract_tensor(model, prompts, bench.concepts)
    taus = searchlight(tensor, bench.ratings, q, sig_method=sig_method, jobs=jobs, progress=progress)
    rankings = {a: rank_neurons(taus, a, taus.neurons) for a in taus.attributes}
    return PipelineResult(model=model, benchmark=bench, prompts=prompts, tensor=tensor,
                          taus=taus, rankings=rankings)


# ── ablation grid ─────────────────────────────────────────────────────────────

def random_mask(n_neurons: int, n: int, master: int, task: str, attribute: str, seed: int,
                exclude: Optional[np.ndarray] = None) -> AblationMask:
    rng = np.random.default_rng(cell_seed(master, task, attribute, n, seed))
    pool = np.arange(n_neurons) if exclude is None else np.setdiff1d(np.arange(n_neurons), exclude)
    if n > len(pool):
        raise NTooLarge(f"Cannot draw {n} random neurons from a pool of {len(pool)}")
    return AblationMask.of(n_neurons, rng.choice(pool, size=n, replace=False))


def _ablate_task(
    model: ToyMaskedLM,
    task: str,
    test: TaskDataset,
    prompts: dict[int, PromptState],
    rankings: dict[str, np.ndarray],
    n_levels: list[int],
    master: int,
    exclude_selected: bool,
) -> tuple[list[AblationRecord], list[BaselineRecord]]:
    n_neurons = model.cfg.n_neurons
    records, baselines = [], []
    for seed, prompt in sorted(prompts.items()):
        baselines.append(BaselineRecord(task=task, seed=seed, accuracy=evaluate(model, prompt, test)))
    for attribute, order in rankings.items():
        for n in n_levels:
            selected = order[:n]
            selective = AblationMask.of(n_neurons, selected)
            for seed, prompt in sorted(prompts.items()):
                control = random_mask(n_neurons, n, master, task, attribute, seed,
                                      exclude=selected if exclude_selected else None)
                for condition, mask in (("selective", selective), ("random", control)):
                    records.append(AblationRecord(
                        task=task, attribute=attribute, condition=condition, n=n, seed=seed,
                        accuracy=evaluate(model, prompt, test, mask),
                    ))
    return records, baselines


def _ablate_task_job(args):
    return _ablate_task(*args)


def run_ablation_grid(
    model: ToyMaskedLM,
    rankings: Mapping[str, NeuronRanking],
    tasks: Mapping[str, TaskDataset],
    prompts: Mapping[tuple[str, int], PromptState],
    n_levels: list[int],
    master_seed: int,
    exclude_selected: bool = False,
    jobs: int = 1,
    progress: bool = False,
) -> tuple[list[AblationRecord], list[BaselineRecord]]:
    """
    Evaluate every (attribute, task, seed, n) cell under the top-n mask and a fresh
    random n-mask, plus one unablated baseline per (task, seed).

    Returns:
        (records, baselines) with 2 × attributes × tasks × seeds × len(n_levels)
        records, sorted by (attribute, task, seed, n, condition).
    """
    n_neurons = model.cfg.n_neurons
    for n in n_levels:
        if not 1 <= n <= n_neurons:
            raise NTooLarge(f"n level {n} outside [1, {n_neurons}]")
    top = max(n_levels)
    orders = {}
    for attribute, ranking in rankings.items():
        if len(ranking.indices) < top:
            raise NTooLarge(f"Ranking for {attribute!r} holds {len(ranking.indices)} neurons, need {top}")
        orders[attribute] = np.asarray(ranking.indices[:top])

    by_task: dict[str, dict[int, PromptState]] = {name: {} for name in tasks}
    for (name, seed), prompt in prompts.items():
        if name in by_task:
            by_task[name][seed] = prompt
    args = [
        (model, name, tasks[name], by_task[name], orders, list(n_levels), master_seed, exclude_selected)
        for name in tasks
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init) as pool:
            outputs = list(tqdm(pool.map(_ablate_task_job, args), total=len(args),
                                desc="ablation", disable=not progress))
    else:
        outputs = [_ablate_task(*a) for a in tqdm(args, desc="ablation", disable=not progress)]

    records = [r for recs, _ in outputs for r in recs]
    baselines = [b for _, bases in outputs for b in bases]
    order = {"selective": 0, "random": 1}
    records.sort(key=lambda r: (r.attribute, r.task, r.seed, r.n, order[r.condition]))
    baselines.sort(key=lambda b: (b.task, b.seed))
    logger.info("Ablation grid: %d records over %d tasks", len(records), len(tasks))
    return records, baselines


# ── drop analyses ─────────────────────────────────────────────────────────────

def drop_table(records: list[AblationRecord]) -> pd.DataFrame:
    """
    One row per (task, attribute, seed, n) with drop = acc_random − acc_selective.

    Raises IncompleteGrid if any cell of the tasks × attributes × seeds × n grid is
    missing either condition.
    """
    if not records:
        raise IncompleteGrid("No ablation records")
    frame = pd.DataFrame([r.model_dump() for r in records])
    keys = ["task", "attribute", "seed", "n"]
    if frame.duplicated(keys + ["condition"]).any():
        raise IncompleteGrid("Duplicate records for a grid cell")
    wide = frame.pivot_table(index=keys, columns="condition", values="accuracy", aggfunc="first")
    full = pd.MultiIndex.from_product([sorted(frame[k].unique()) for k in keys], names=keys)
    wide = wide.reindex(index=full, columns=["selective", "random"])
    if wide.isna().any().any():
        missing = wide[wide.isna().any(axis=1)].index[0]
        raise IncompleteGrid(f"Grid cell {dict(zip(keys, missing))} lacks a selective or random record")
    wide = wide.reset_index()
    wide["drop"] = wide["random"] - wide["selective"]
    return wide


def task_mean_drops(records: list[AblationRecord]) -> pd.DataFrame:
    """Seed-averaged drop per (task, attribute, n)."""
    drops = drop_table(records)
    return drops.groupby(["task", "attribute", "n"], as_index=False)["drop"].mean()


def _drop_test(sample: np.ndarray) -> dict:
    """Paired one-tailed t on a sample of drops, with the constant-sample boundary rule."""
    mean = float(sample.mean())
    if np.all(sample == sample[0]):
        t = float("inf") if mean > 0 else (float("-inf") if mean < 0 else 0.0)
        return {"mean_drop": mean, "ci_low": mean, "ci_high": mean, "t": t,
                "df": len(sample) - 1, "p": TINY if mean > 0 else 1.0}
    res = paired_t(sample, tail="greater")
    lo, hi = t_interval(sample)
    return {"mean_drop": mean, "ci_low": lo, "ci_high": hi, "t": res.statistic,
            "df": len(sample) - 1, "p": res.pvalue}


def _family(means: pd.DataFrame, unit: str, over: str, q: float) -> pd.DataFrame:
    rows = []
    for (name, n), group in means.groupby([unit, "n"], sort=True):
        sample = group.sort_values(over)["drop"].to_numpy()
        rows.append({unit: name, "n": int(n), **_drop_test(sample), "N": len(sample)})
    out = pd.DataFrame(rows)
    out["significant"] = fdr_by(out["p"].to_numpy(), q)
    return out[[unit, "n", "mean_drop", "ci_low", "ci_high", "t", "df", "p", "significant", "N"]]


def summarize_drops(records: list[AblationRecord], q: float = 0.05) -> DropSummary:
    """
    Per-attribute and per-task one-tailed paired t-tests of seed-averaged drops.

    Per attribute the sample is the tasks' seed-averaged drops; per task it is the
    attributes'. BY-FDR runs over attributes × n levels and tasks × n levels.
    """
    means = task_mean_drops(records)
    return DropSummary(
        by_attribute=_family(means, "attribute", "task", q),
        by_task=_family(means, "task", "attribute", q),
    )


def drop_direction_test(records: list[AblationRecord], n: int) -> TestResult:
    """Selective vs random over every (task, attribute) seed-averaged drop at one n."""
    means = task_mean_drops(records)
    sample = means.loc[means["n"] == n].sort_values(["task", "attribute"])["drop"].to_numpy()
    if len(sample) == 0:
        raise IncompleteGrid(f"No records at n={n}")
    stats = _drop_test(sample)
    if np.isfinite(stats["t"]) and stats["t"] != 0:
        return paired_t(sample, tail="greater")
    return TestResult(statistic=stats["t"], pvalue=stats["p"], tails="one", n=len(sample), df=len(sample) - 1)


def heterogeneity(
    task_drops: pd.DataFrame,
    boots: int = 10_000,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Hartigan's dip over the task-level mean drops of every (attribute, n).

    Args:
        task_drops: Frame with columns task, attribute, n, drop (see task_mean_drops).

    Returns:
        Frame with columns n, attribute, dip, p, N.
    """
    tasks = task_drops["task"].nunique()
    if tasks < 4:
        raise TooFewTasks(f"Dip test needs at least 4 tasks, got {tasks}")
    if tasks < DIP_WARN_BELOW:
        logger.warning("Dip test on only %d tasks; p-values are coarse", tasks)
    rows = []
    for (n, attribute), group in task_drops.groupby(["n", "attribute"], sort=True):
        res = hartigan_dip(group.sort_values("task")["drop"].to_numpy(), boots=boots, seed=seed)
        rows.append({"n": int(n), "attribute": attribute, "dip": res.statistic, "p": res.pvalue, "N": res.n})
    return pd.DataFrame(rows, columns=["n", "attribute", "dip", "p", "N"])


def _weights_frame(weights, tasks: list[str], attributes: list[str]) -> pd.DataFrame:
    if isinstance(weights, pd.DataFrame):
        return weights.reindex(index=tasks, columns=attributes)
    if isinstance(weights, Mapping):
        values = [float(weights[a]) for a in attributes]
    else:
        lookup = {w.attribute: w.mean_tau for w in weights}
        values = [lookup[a] for a in attributes]
    return pd.DataFrame([values] * len(tasks), index=tasks, columns=attributes)


def contribution_vs_weight(
    task_drops: pd.DataFrame,
    weights: Union[Mapping[str, float], list[AttributeWeight], pd.DataFrame],
    n: Optional[int] = None,
) -> ContributionResult:
    """
    Per task, Pearson r between its attribute drops and the attribute weights, then
    a Fisher-averaged one-tailed test across tasks.

    Args:
        task_drops: Either a task × attribute frame at one n, or the long frame from
            task_mean_drops together with `n`.
        weights: Attribute → weight mapping, AttributeWeight list, or a task ×
            attribute frame giving each task its own weights.
    """
    if {"task", "attribute", "drop"} <= set(task_drops.columns):
        subset = task_drops if n is None else task_drops.loc[task_drops["n"] == n]
        drops = subset.pivot(index="task", columns="attribute", values="drop")
    else:
        drops = task_drops
    tasks, attributes = list(drops.index), list(drops.columns)
    w = _weights_frame(weights, tasks, attributes)
    if w.isna().any().any():
        raise UnknownAttribute("Weights do not cover every (task, attribute)")
    rs = np.array([pearson_r(drops.loc[t].to_numpy(), w.loc[t].to_numpy()) for t in tasks])
    # perfect fits come back as 1 - eps from scipy
    rs = np.where(np.abs(rs) > 1 - 1e-12, np.sign(rs), rs)
    per_task = pd.DataFrame({"task": tasks, "r": rs})
    if np.all(rs == rs[0]) and abs(rs[0]) >= 1:
        fisher = FisherResult(mean_r=float(rs[0]), df=len(rs) - 1, boundary_case=True)
    elif np.any(np.abs(rs) >= 1):
        raise BoundaryR("A task's correlation is exactly ±1; Fisher z is infinite")
    else:
        fisher = fisher_average(rs)
    return ContributionResult(n=n, per_task=per_task, fisher=fisher)


def correlation_table(
    task_drops: pd.DataFrame,
    weights: Union[Mapping[str, float], list[AttributeWeight], pd.DataFrame],
) -> pd.DataFrame:
    """
    contribution_vs_weight at every n level, one row per n.

    Tasks whose drops are constant across attributes have no defined r and are left
    out of that level; a level with fewer than two usable tasks gets an empty row.
    """
    rows = []
    for n in sorted(task_drops["n"].unique()):
        level = task_drops.loc[task_drops["n"] == n]
        spread = level.groupby("task")["drop"].agg(lambda d: d.max() - d.min())
        flat = spread.index[spread == 0].tolist()
        if flat:
            logger.warning("n=%d: %d task(s) with constant drops left out of the correlation", n, len(flat))
            level = level.loc[~level["task"].isin(flat)]
        if level["task"].nunique() < 2:
            rows.append({"n": int(n), "tasks": level["task"].nunique(), "mean_r": np.nan, "t": None,
                         "df": None, "p": None, "boundary": False})
            continue
        res = contribution_vs_weight(level, weights, n=int(n))
        f = res.fisher
        rows.append({"n": int(n), "tasks": len(res.per_task), "mean_r": f.mean_r, "t": f.t,
                     "df": f.df, "p": f.pvalue, "boundary": f.boundary_case})
    return pd.DataFrame(rows, columns=["n", "tasks", "mean_r", "t", "df", "p", "boundary"])


def table_s1_check(fixture: TableS1Fixture) -> float:
    """Pearson r between rater kappa and prompt accuracy across emotions."""
    return pearson_r(fixture.kappas, fixture.accuracies)
