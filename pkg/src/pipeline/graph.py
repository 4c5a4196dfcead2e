"""
LangGraph state machine for a full ConceptLens run.

Stages:
    1. generate    - draw the synthetic benchmark and write it under <out>/bench.
    2. reliability - rating ICCs per attribute and the factor structure of the ratings.
    3. train       - freeze a seeded toy model and tune one prompt per (concept, seed).
    4. extract     - stack the activation vector of every prompt into the activation tensor.
    5. searchlight - Kendall tau of every neuron RDM against every attribute RDM.
    6. select      - rank neurons per attribute.
    7. ablate      - selective / random / baseline accuracies over the n grid.
    8. summarize   - drop tests and the dip table.
    9. human       - attribute weights from participant RDMs (only when judgments exist).
   10. contribute  - drop vs weight correlations at every n level.
   11. report      - write every artifact into <out>.

Each node returns the state so intermediate results stay inspectable on the result.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, TypedDict

import pandas as pd
from langgraph.graph import END, StateGraph

from ..analysis.reliability import FactorReport, attribute_reliability, factor_structure
from ..analysis.rsa import human_weights, rank_neurons, searchlight, significant_per_layer
from ..core.dataio import (
    read_raw_ratings,
    read_similarity_judgments,
    write_ablation_records,
    write_activation_tensor,
    write_frame_csv,
    write_tau_matrix,
)
from ..core.errors import InvalidConfig
from ..core.models import (
    AblationRecord,
    ActivationTensor,
    AttributeWeight,
    BaselineRecord,
    DropSummary,
    NeuronRanking,
    PromptState,
    RunConfig,
    TauMatrix,
)
from ..ml.checkpoints import save_run_checkpoints
from ..ml.toylm import ToyMaskedLM, init_model
from .experiment import (
    cell_seed,
    correlation_table,
    extract_tensor,
    heterogeneity,
    run_ablation_grid,
    summarize_drops,
    task_mean_drops,
    train_prompts,
)
from .reports import write_attribute_rdms, write_reliability, write_reports, write_selection
from .synth import SyntheticBenchmark, gen_synthetic, write_benchmark

logger = logging.getLogger(__name__)


class PipelineState(TypedDict, total=False):
    """
    LangGraph state for one run.

    Fields:
        config: Validated run configuration; `config.out` is the only write target.
        progress: Show tqdm bars.
        plot: Also write the per-attribute drop chart at the middle n level.
        bench: Synthetic benchmark (concepts, tasks, ratings, judgments).
        reliability: Per-attribute ICC table, None without per-rater ratings.
        factors: Parallel analysis, PCA and varimax of the ratings.
        similarity_path: Participant judgments CSV, None when the human stage is skipped.
        model: Frozen toy model.
        prompts: Tuned prompt per (concept, seed).
        tensor: seeds × concepts × neurons activation tensor.
        taus: Searchlight result.
        rankings: Full neuron ranking per attribute.
        records / baselines: Ablation grid output.
        summary: Per-attribute and per-task drop tests.
        task_drops: Seed-averaged drop per (task, attribute, n).
        dips: Dip table.
        weights: Human attribute weights.
        correlation: Drop vs weight correlation per n level.
        written: Paths of the artifacts produced by the report stage.
    """

    config: RunConfig
    progress: bool
    plot: bool
    bench: SyntheticBenchmark
    reliability: Optional[pd.DataFrame]
    factors: Optional[FactorReport]
    similarity_path: Optional[Path]
    model: ToyMaskedLM
    prompts: Dict[tuple, PromptState]
    tensor: ActivationTensor
    taus: TauMatrix
    rankings: Dict[str, NeuronRanking]
    records: List[AblationRecord]
    baselines: List[BaselineRecord]
    summary: DropSummary
    task_drops: pd.DataFrame
    dips: pd.DataFrame
    weights: List[AttributeWeight]
    correlation: pd.DataFrame
    written: List[Path]


def _out(state: PipelineState) -> Path:
    return Path(state["config"].out)


def generate_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    spec = cfg.synth.model_copy(update={"seed": cfg.seed})
    bench = gen_synthetic(spec)
    write_benchmark(bench, _out(state) / "bench")
    state["bench"] = bench
    if cfg.similarity:
        state["similarity_path"] = Path(cfg.similarity)
    else:
        state["similarity_path"] = _out(state) / "bench" / "similarity.csv"
    return state


def reliability_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    raw = read_raw_ratings(cfg.raw_ratings) if cfg.raw_ratings else state["bench"].raw_ratings
    if raw is None:
        logger.warning("No per-rater ratings; skipping reliability and factor tables")
        state["reliability"], state["factors"] = None, None
        return state
    state["reliability"] = attribute_reliability(raw, cfg.q_reliability)
    state["factors"] = factor_structure(raw, cfg.factor_permutations, seed=cell_seed(cfg.seed, "factors"))
    write_reliability(state["reliability"], state["factors"], _out(state))
    return state


def train_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    if cfg.model.vocab < state["bench"].spec.vocab_size:
        raise InvalidConfig(
            f"Model vocab {cfg.model.vocab} is smaller than the benchmark's {state['bench'].spec.vocab_size}"
        )
    model = init_model(cfg.model, cell_seed(cfg.seed, "model"))
    state["model"] = model
    state["prompts"] = train_prompts(
        model, state["bench"], cfg.seeds, cfg.seed, cfg.train,
        jobs=cfg.jobs, progress=state.get("progress", False),
    )
    save_run_checkpoints(model, state["prompts"], _out(state))
    return state


def extract_node(state: PipelineState) -> PipelineState:
    tensor = extract_tensor(state["model"], state["prompts"], state["bench"].concepts)
    write_activation_tensor(tensor, _out(state) / "activations.actv")
    state["tensor"] = tensor
    return state


def searchlight_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    taus = searchlight(state["tensor"], state["bench"].ratings, cfg.q, sig_method=cfg.sig_method,
                       jobs=cfg.jobs, progress=state.get("progress", False))
    state["taus"] = taus
    return state


def select_node(state: PipelineState) -> PipelineState:
    taus = state["taus"]
    state["rankings"] = {a: rank_neurons(taus, a, taus.neurons) for a in taus.attributes}
    return state


def ablate_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    tests = {name: splits.test for name, splits in state["bench"].tasks.items()}
    records, baselines = run_ablation_grid(
        state["model"], state["rankings"], tests, state["prompts"], cfg.n_levels, cfg.seed,
        exclude_selected=cfg.exclude_selected_from_random, jobs=cfg.jobs,
        progress=state.get("progress", False),
    )
    state["records"] = records
    state["baselines"] = baselines
    return state


def summarize_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    state["summary"] = summarize_drops(state["records"], q=cfg.q_drops)
    state["task_drops"] = task_mean_drops(state["records"])
    state["dips"] = heterogeneity(state["task_drops"], boots=cfg.dip_boots, seed=cfg.seed)
    return state


def router(state: PipelineState) -> str:
    """
    Conditional edge: fit human weights when participant judgments exist,
    otherwise go straight to the report.
    """
    path = state.get("similarity_path")
    if path is not None and Path(path).exists():
        return "human"
    return "report"


def human_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    bench = state["bench"]
    participants = read_similarity_judgments(state["similarity_path"], concepts=bench.concepts)
    state["weights"] = human_weights(bench.ratings, participants, cfg.boots, cfg.q_human,
                                     seed=cfg.seed, progress=state.get("progress", False))
    return state


def contribute_node(state: PipelineState) -> PipelineState:
    state["correlation"] = correlation_table(state["task_drops"], state["weights"])
    return state


def report_node(state: PipelineState) -> PipelineState:
    cfg = state["config"]
    out = _out(state)
    taus = state["taus"]
    write_tau_matrix(taus, out / "taus.csv")
    write_frame_csv(significant_per_layer(taus, cfg.model.d_ff), out / "significant_per_layer.csv")
    write_attribute_rdms(state["bench"].ratings, out)
    write_selection(list(state["rankings"].values()), cfg.n_levels, out)
    write_ablation_records(state["records"], state["baselines"], out / "ablation.jsonl")
    plot_n = cfg.n_levels[len(cfg.n_levels) // 2] if state.get("plot") else None
    state["written"] = write_reports(
        out, state["summary"], dips=state["dips"], correlation=state.get("correlation"),
        weights=state.get("weights"), plot_n=plot_n,
    )
    return state


def build_pipeline_graph():
    """
    Build and compile the pipeline LangGraph.

    Usage (example):
        from src.pipeline.graph import build_pipeline_graph
        graph = build_pipeline_graph()
        result = graph.invoke({"config": RunConfig(out="runs/demo")})

    The `result` holds every intermediate (tensor, taus, records, summary, ...)
    plus `written`, the report files.
    """
    graph = StateGraph(PipelineState)
    graph.add_node("generate", generate_node)
    graph.add_node("reliability", reliability_node)
    graph.add_node("train", train_node)
    graph.add_node("extract", extract_node)
    graph.add_node("searchlight", searchlight_node)
    graph.add_node("select", select_node)
    graph.add_node("ablate", ablate_node)
    graph.add_node("summarize", summarize_node)
    graph.add_node("human", human_node)
    graph.add_node("contribute", contribute_node)
    graph.add_node("report", report_node)

    graph.set_entry_point("generate")
    for a, b in [("generate", "reliability"), ("reliability", "train"), ("train", "extract"),
                 ("extract", "searchlight"), ("searchlight", "select"), ("select", "ablate"),
                 ("ablate", "summarize")]:
        graph.add_edge(a, b)
    graph.add_conditional_edges("summarize", router, {"human": "human", "report": "report"})
    graph.add_edge("human", "contribute")
    graph.add_edge("contribute", "report")
    graph.add_edge("report", END)

    return graph.compile()
