"""
Exception hierarchy for ConceptLens.

Every domain failure raised by the toolkit derives from ConceptLensError so the
CLI can map it to exit status 1 in one place.
"""
from typing import Optional


class ConceptLensError(Exception):
    """Base class for all domain errors raised by ConceptLens."""

    def __init__(self, message: str, **context) -> None:
        super().__init__(message)
        self.context = context


# ── dataio ────────────────────────────────────────────────────────────────────

class MalformedCsv(ConceptLensError):
    """A CSV cell or header could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None) -> None:
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message, row=row, column=column)
        self.row = row
        self.column = column


class DuplicateName(ConceptLensError):
    pass


class EmptyTable(ConceptLensError):
    pass


class BadMagic(ConceptLensError):
    pass


class TruncatedFile(ConceptLensError):
    pass


class NonFiniteValue(ConceptLensError):
    pass


class IoFailure(ConceptLensError):
    pass


class UnknownConcept(ConceptLensError):
    pass


class OutOfRangeScore(MalformedCsv):
    pass


class PairFullyMissing(ConceptLensError):
    pass


# ── toylm ─────────────────────────────────────────────────────────────────────

class InvalidConfig(ConceptLensError):
    pass


class SequenceTooLong(ConceptLensError):
    pass


class UnknownToken(ConceptLensError):
    pass


class EmptyDataset(ConceptLensError):
    pass


class DivergenceDetected(ConceptLensError):
    pass


# ── rdm / rsa ─────────────────────────────────────────────────────────────────

class IndexOutOfRange(ConceptLensError):
    pass


class UnknownAttribute(ConceptLensError):
    pass


class LengthMismatch(ConceptLensError):
    pass


class DegenerateInput(ConceptLensError):
    pass


class ConceptMismatch(ConceptLensError):
    pass


class NTooLarge(ConceptLensError):
    pass


class TooFewParticipants(ConceptLensError):
    pass


# ── stats ─────────────────────────────────────────────────────────────────────

class DegenerateAgreement(ConceptLensError):
    pass


class BoundaryR(ConceptLensError):
    pass


class InvalidP(ConceptLensError):
    pass


class ZeroVariance(ConceptLensError):
    pass


class TooFewNonzero(ConceptLensError):
    pass


class TooFewPoints(ConceptLensError):
    pass


class MissingCell(ConceptLensError):
    pass


class DegenerateVariance(ConceptLensError):
    pass


class RankDeficient(ConceptLensError):
    pass


class NoConvergence(ConceptLensError):
    pass


# ── experiment / cli ──────────────────────────────────────────────────────────

class InvalidSpec(ConceptLensError):
    pass


class IncompleteGrid(ConceptLensError):
    pass


class TooFewTasks(ConceptLensError):
    pass


class ConfigError(ConceptLensError):
    pass
