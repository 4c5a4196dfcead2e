"""
Report emission: rating reliability and factor loadings, attribute RDMs, neuron
rankings and overlaps, drops.csv, dip_table.csv, weights.csv, correlation.csv and the
optional SVG bar chart of per-attribute drops.
"""
import logging
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ..analysis.rdm import attribute_rdm  # noqa: E402
from ..analysis.reliability import FactorReport  # noqa: E402
from ..analysis.rsa import ranking_overlap  # noqa: E402
from ..core.dataio import write_frame_csv, write_ranking, write_rdm_csv  # noqa: E402
from ..core.models import AttributeWeight, DropSummary, NeuronRanking, RatingTable  # noqa: E402

logger = logging.getLogger(__name__)

DROP_COLUMNS = ["family", "name", "n", "mean_drop", "ci_low", "ci_high", "t", "df", "p", "significant", "N"]


def write_attribute_rdms(ratings: RatingTable, out_dir: Union[str, Path]) -> list[Path]:
    """rdms/<attribute>.csv, one K × K dissimilarity table per attribute."""
    written = []
    for attribute in ratings.attributes:
        path = Path(out_dir) / "rdms" / f"{attribute}.csv"
        write_rdm_csv(attribute_rdm(ratings, attribute), path)
        written.append(path)
    return written


def write_selection(rankings: list[NeuronRanking], n_levels: list[int], out_dir: Union[str, Path]) -> list[Path]:
    """rankings/<attribute>.csv for every full ranking and overlap_<n>.csv per n level."""
    out_dir = Path(out_dir)
    written = []
    for r in rankings:
        path = out_dir / "rankings" / f"{r.attribute}.csv"
        write_ranking(r, path)
        written.append(path)
    for n in n_levels:
        top = [NeuronRanking(attribute=r.attribute, indices=r.indices[:n], taus=r.taus[:n],
                             significant=r.significant[:n]) for r in rankings]
        path = out_dir / f"overlap_{n}.csv"
        write_frame_csv(ranking_overlap(top), path)
        written.append(path)
    return written


def write_reliability(reliability: pd.DataFrame, factors: FactorReport, out_dir: Union[str, Path]) -> list[Path]:
    """reliability.csv, factor_eigenvalues.csv and the unrotated and varimax loadings."""
    out_dir = Path(out_dir)
    tables = {
        "reliability.csv": reliability,
        "factor_eigenvalues.csv": factors.eigen_frame(),
        "loadings_pca.csv": factors.loading_frame(rotated=False),
    }
    if factors.rotated is not None:
        tables["loadings_varimax.csv"] = factors.loading_frame(rotated=True)
    written = []
    for name, frame in tables.items():
        write_frame_csv(frame, out_dir / name)
        written.append(out_dir / name)
    return written


def drops_frame(summary: DropSummary) -> pd.DataFrame:
    """Both drop families stacked: family is "attribute" or "task"."""
    parts = []
    for family, frame in (("attribute", summary.by_attribute), ("task", summary.by_task)):
        part = frame.rename(columns={family: "name"}).copy()
        part.insert(0, "family", family)
        parts.append(part)
    return pd.concat(parts, ignore_index=True)[DROP_COLUMNS]


def weights_frame(weights: list[AttributeWeight]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"attribute": w.attribute, "mean_tau": w.mean_tau, "p": w.pvalue, "significant": w.significant}
         for w in weights],
        columns=["attribute", "mean_tau", "p", "significant"],
    )


def plot_attribute_drops(summary: DropSummary, n: int, path: Union[str, Path]) -> Path:
    """Bar chart of mean drop per attribute at one n with 95% CI whiskers."""
    frame = summary.by_attribute.loc[summary.by_attribute["n"] == n].sort_values("mean_drop", ascending=False)
    plt.rcParams["svg.hashsalt"] = "conceptlens"
    fig, ax = plt.subplots(figsize=(8, 4))
    lower = (frame["mean_drop"] - frame["ci_low"]).clip(lower=0)
    upper = (frame["ci_high"] - frame["mean_drop"]).clip(lower=0)
    colors = ["tab:red" if s else "tab:gray" for s in frame["significant"]]
    ax.bar(frame["attribute"], frame["mean_drop"], yerr=[lower, upper], color=colors, capsize=3)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("accuracy drop (random − selective)")
    ax.set_title(f"Per-attribute accuracy drop, n = {n}")
    ax.tick_params(axis="x", rotation=60)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_reports(
    out_dir: Union[str, Path],
    summary: DropSummary,
    dips: Optional[pd.DataFrame] = None,
    correlation: Optional[pd.DataFrame] = None,
    weights: Optional[list[AttributeWeight]] = None,
    plot_n: Optional[int] = None,
) -> list[Path]:
    """Write every available summary table; return the paths written."""
    out_dir = Path(out_dir)
    written = []
    path = out_dir / "drops.csv"
    write_frame_csv(drops_frame(summary), path)
    written.append(path)
    if dips is not None:
        path = out_dir / "dip_table.csv"
        write_frame_csv(dips, path)
        written.append(path)
    if weights is not None:
        path = out_dir / "weights.csv"
        write_frame_csv(weights_frame(weights), path)
        written.append(path)
    if correlation is not None:
        path = out_dir / "correlation.csv"
        write_frame_csv(correlation, path)
        written.append(path)
    if plot_n is not None:
        written.append(plot_attribute_drops(summary, plot_n, out_dir / "attribute_drops.svg"))
    logger.info("Wrote %s", ", ".join(p.name for p in written))
    return written
