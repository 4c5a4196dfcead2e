"""
Representational dissimilarity matrices for neurons, attributes and participants.
"""
from functools import lru_cache

import numpy as np

from ..core.errors import IndexOutOfRange
from ..core.models import RDM, ActivationTensor, ParticipantRDMSet, RatingTable


@lru_cache(maxsize=64)
def triangle_indices(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Strictly-lower indices in row-major order: (1,0), (2,0), (2,1), (3,0), ..."""
    return np.tril_indices(k, -1)


def scalar_rdm(values: np.ndarray) -> np.ndarray:
    """|a_i − a_j| for a vector of per-concept scalars."""
    values = np.asarray(values, dtype=np.float64)
    return np.abs(values[:, None] - values[None, :])


def scalar_triangle(values: np.ndarray) -> np.ndarray:
    """lower_triangle(scalar_rdm(values)) without building the K × K matrix twice."""
    rows, cols = triangle_indices(len(values))
    return np.abs(values[rows] - values[cols])


def neuron_rdm(t: ActivationTensor, neuron: int) -> RDM:
    """Distances between concepts' seed-averaged activations of one neuron."""
    if not 0 <= neuron < t.neurons:
        raise IndexOutOfRange(f"Neuron {neuron} outside [0, {t.neurons})")
    means = t.values[:, :, neuron].mean(axis=0)
    return RDM(concepts=list(t.concepts), matrix=scalar_rdm(means))


def attribute_rdm(r: RatingTable, attribute: str) -> RDM:
    return RDM(concepts=list(r.concepts), matrix=scalar_rdm(r.column(attribute)))


def participant_rdms(p: ParticipantRDMSet) -> list[RDM]:
    return [RDM(concepts=list(p.concepts), matrix=m) for m in p.rdms]


def lower_triangle(m: RDM) -> np.ndarray:
    rows, cols = triangle_indices(m.size)
    return m.matrix[rows, cols]
