"""
Reliability of the attribute ratings and their factor structure.

Per attribute, the concepts × raters score matrix gives ICC(1,k) and ICC(2,k) with
their F tests; p-values are BY-corrected across attributes. The factor structure is
read from rater-level observations (one row per (rater, concept), one item per
attribute): parallel analysis picks the component count, PCA extracts it and
varimax rotates it when two or more components are kept.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from ..core.errors import DegenerateVariance, EmptyTable, MalformedCsv
from ..core.models import FactorSolution
from .stats import fdr_by, icc, icc_f_test, parallel_analysis, pca, standardize, varimax

logger = logging.getLogger(__name__)

RELIABILITY_COLUMNS = [
    "attribute", "icc1k", "F1k", "p1k", "significant_1k", "icc2k", "F2k", "p2k", "significant_2k", "raters",
]


def _check_raw(raw: pd.DataFrame) -> None:
    missing = {"concept", "attribute", "rater", "score"} - set(raw.columns)
    if missing:
        raise MalformedCsv(f"Raw ratings lack columns {sorted(missing)}")
    if raw.empty:
        raise EmptyTable("No raw ratings given")


def rater_matrix(raw: pd.DataFrame, attribute: str) -> pd.DataFrame:
    """Concepts × raters scores for one attribute; unrated cells are NaN."""
    sub = raw.loc[raw["attribute"] == attribute]
    concepts = list(dict.fromkeys(raw["concept"]))
    raters = list(dict.fromkeys(raw["rater"]))
    return sub.pivot_table(index="concept", columns="rater", values="score", aggfunc="mean").reindex(
        index=concepts, columns=raters
    )


def attribute_reliability(raw: pd.DataFrame, q: float = 0.05) -> pd.DataFrame:
    """
    ICC(1,k) and ICC(2,k) per attribute with F-test p-values.

    Significance applies BY-FDR at level q across attributes, separately for each
    ICC form. Raters with a missing cell on an attribute are dropped for that
    attribute only; an attribute left with fewer than two raters raises MissingCell
    through the ICC routine.
    """
    _check_raw(raw)
    rows = []
    for attribute in dict.fromkeys(raw["attribute"]):
        matrix = rater_matrix(raw, attribute)
        complete = matrix.dropna(axis=1)
        if complete.shape[1] < matrix.shape[1]:
            logger.info("%s: dropping %d rater(s) with unrated concepts",
                        attribute, matrix.shape[1] - complete.shape[1])
        if complete.shape[1] >= 2:
            matrix = complete
        values = matrix.to_numpy(dtype=np.float64)
        row = {"attribute": attribute, "raters": values.shape[1]}
        for form, suffix in (("ICC1k", "1k"), ("ICC2k", "2k")):
            try:
                row[f"icc{suffix}"] = icc(values, form)
                res = icc_f_test(values, form)
                row[f"F{suffix}"], row[f"p{suffix}"] = res.statistic, res.pvalue
            except DegenerateVariance:
                logger.warning("%s: concepts do not vary; ICC undefined", attribute)
                row[f"icc{suffix}"], row[f"F{suffix}"], row[f"p{suffix}"] = float("nan"), float("nan"), 1.0
        rows.append(row)

    frame = pd.DataFrame(rows)
    for suffix in ("1k", "2k"):
        frame[f"significant_{suffix}"] = fdr_by(frame[f"p{suffix}"].to_numpy(), q)
    logger.info("Rating reliability: %d of %d attributes significant (ICC2k, BY q=%g)",
                int(frame["significant_2k"].sum()), len(frame), q)
    return frame[RELIABILITY_COLUMNS]


def rating_observations(raw: pd.DataFrame) -> pd.DataFrame:
    """(rater, concept) × attribute matrix; rows with any unrated attribute are dropped."""
    _check_raw(raw)
    attributes = list(dict.fromkeys(raw["attribute"]))
    wide = raw.pivot_table(index=["rater", "concept"], columns="attribute", values="score", aggfunc="mean")
    wide = wide.reindex(columns=attributes)
    complete = wide.dropna()
    if len(complete) < len(wide):
        logger.info("Factor analysis: dropping %d incomplete (rater, concept) rows", len(wide) - len(complete))
    return complete


@dataclass
class FactorReport:
    """Parallel-analysis retention plus the loadings it implies."""
    attributes: list[str]
    eigenvalues: np.ndarray
    retained: int
    unrotated: Optional[FactorSolution]
    rotated: Optional[FactorSolution]
    observations: int

    def eigen_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "component": np.arange(1, len(self.eigenvalues) + 1),
            "eigenvalue": self.eigenvalues,
            "retained": np.arange(len(self.eigenvalues)) < self.retained,
        })

    def loading_frame(self, rotated: bool = True) -> pd.DataFrame:
        """Attribute × factor loadings; empty when no component was retained."""
        solution = self.rotated if rotated and self.rotated is not None else self.unrotated
        if solution is None:
            return pd.DataFrame({"attribute": self.attributes})
        columns = [f"factor_{j + 1}" for j in range(solution.loadings.shape[1])]
        frame = pd.DataFrame(solution.loadings, columns=columns)
        frame.insert(0, "attribute", self.attributes)
        frame["communality"] = solution.communalities
        return frame


def factor_structure(raw: pd.DataFrame, permutations: int = 1000, seed: int = 0) -> FactorReport:
    """
    Parallel analysis on the standardized rater-level ratings, then PCA with the
    retained component count and a varimax rotation when two or more are kept.
    """
    wide = rating_observations(raw)
    data = standardize(wide.to_numpy(dtype=np.float64))
    eigenvalues = np.sort(np.linalg.eigvalsh(np.corrcoef(data, rowvar=False)))[::-1]
    retained = parallel_analysis(data, permutations=permutations, seed=seed)
    unrotated = pca(data, retained) if retained >= 1 else None
    rotated = varimax(unrotated) if retained >= 2 else None
    logger.info("Factor structure: %d of %d components retained over %d observations",
                retained, data.shape[1], data.shape[0])
    return FactorReport(
        attributes=list(wide.columns),
        eigenvalues=eigenvalues,
        retained=retained,
        unrotated=unrotated,
        rotated=rotated,
        observations=data.shape[0],
    )
