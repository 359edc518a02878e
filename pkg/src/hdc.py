"""
Hyperdimensional vector algebra: binding, bundling, cosine similarity and the
seeded concept codebook.

Hypervectors are plain 1-D numpy arrays. Binding is component-wise
multiplication (the bipolar form of XOR, so it is its own inverse on ±1
vectors), bundling is component-wise addition with no re-binarization, and all
similarity arithmetic is done in float64.

Codebook stream order: a ``numpy.random.Generator`` over ``PCG64(seed)``; for
each concept in ``Concept`` declaration order, one draw
``integers(0, 2, size=dim, dtype=uint8)``; 1 maps to +1 and 0 to -1.
"""

import json
import logging
from itertools import combinations
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from src.concepts import ALL_CONCEPTS, Concept
from src.errors import DimensionMismatchError, QuasiOrthogonalityError, ZeroNormError

logger = logging.getLogger(__name__)

HDVector = npt.NDArray[np.float64]

DEFAULT_DIM = 1000
DEFAULT_MAX_CROSS_COSINE = 0.15


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatchError(a.shape[-1], b.shape[-1])


def bind(a: np.ndarray, b: np.ndarray) -> HDVector:
    """
    Entangles two hypervectors (component-wise product).

    Args:
        a (np.ndarray): First operand.
        b (np.ndarray): Second operand, same dimension.

    Returns:
        HDVector: ``a_i * b_i`` for every component.

    Raises:
        DimensionMismatchError: If the dimensions differ.
    """
    _check_dims(a, b)
    return np.multiply(a, b, dtype=np.float64)


def bundle(a: np.ndarray, b: np.ndarray) -> HDVector:
    """
    Groups two hypervectors (component-wise sum, not thresholded).

    Raises:
        DimensionMismatchError: If the dimensions differ.
    """
    _check_dims(a, b)
    return np.add(a, b, dtype=np.float64)


def bundle_many(vectors: Iterable[np.ndarray]) -> HDVector:
    """Sums any number of hypervectors left to right."""
    total: Optional[HDVector] = None
    for v in vectors:
        total = np.asarray(v, dtype=np.float64).copy() if total is None else bundle(total, v)
    if total is None:
        raise ValueError("bundle_many needs at least one vector")
    return total


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """
    Cosine similarity of two hypervectors in float64.

    Raises:
        DimensionMismatchError: If the dimensions differ.
        ZeroNormError: If either vector is all zeros.
    """
    _check_dims(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormError("cosine similarity is undefined for an all-zero vector")
    value = float(np.dot(a, b) / (norm_a * norm_b))
    # rounding can push |value| a hair past 1
    return min(1.0, max(-1.0, value))


def similarities(v: np.ndarray, matrix: np.ndarray) -> npt.NDArray[np.float64]:
    """Cosine of ``v`` against every row of ``matrix`` (linear scan)."""
    _check_dims(v, matrix)
    v = np.asarray(v, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    norm_v = np.linalg.norm(v)
    norms = np.linalg.norm(matrix, axis=1)
    if norm_v == 0.0 or np.any(norms == 0.0):
        raise ZeroNormError("cosine similarity is undefined for an all-zero vector")
    return np.clip(matrix @ v / (norms * norm_v), -1.0, 1.0)


def cleanup(v: np.ndarray, candidates: Sequence[Concept], cb: "Codebook") -> Tuple[Concept, float, Dict[Concept, float]]:
    """
    Nearest-neighbour decode of ``v`` among ``candidates``.

    Ties go to the earliest candidate and report a margin of 0.

    Returns:
        Tuple[Concept, float, Dict[Concept, float]]: best concept, best minus
        second-best cosine, and every candidate's cosine.
    """
    sims = similarities(v, cb.rows(candidates))
    order = np.argsort(-sims, kind="stable")
    best = int(order[0])
    margin = float(sims[best] - sims[order[1]]) if len(candidates) > 1 else float(sims[best])
    return candidates[best], margin, {c: float(s) for c, s in zip(candidates, sims)}


class Codebook:
    """
    Immutable map from each of the fifteen concepts to a random bipolar hypervector.

    Attributes:
        seed (int): Generator seed the entries were drawn from.
        dim (int): Hypervector dimension.
        matrix (np.ndarray): Read-only ``(15, dim)`` float64 array, rows in
            canonical concept order.
    """

    def __init__(self, seed: int, dim: int, matrix: np.ndarray):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.shape != (len(ALL_CONCEPTS), dim):
            raise ValueError(f"codebook matrix must be {(len(ALL_CONCEPTS), dim)}, got {matrix.shape}")
        if not np.all(np.abs(matrix) == 1.0):
            raise ValueError("codebook entries must be bipolar (+1/-1)")
        matrix.setflags(write=False)
        self.seed = int(seed)
        self.dim = int(dim)
        self.matrix = matrix

    def __getitem__(self, concept: Concept) -> HDVector:
        return self.matrix[Concept(concept).order]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.seed == other.seed and self.dim == other.dim and np.array_equal(self.matrix, other.matrix)

    def __repr__(self) -> str:
        return f"Codebook(seed={self.seed}, dim={self.dim})"

    def rows(self, concepts: Sequence[Concept]) -> np.ndarray:
        """Stacks the vectors of ``concepts`` into a matrix."""
        return self.matrix[[Concept(c).order for c in concepts]]

    def pairwise_cosines(self) -> Dict[Tuple[Concept, Concept], float]:
        """Cosine of every distinct pair of entries (105 for fifteen concepts)."""
        gram = self.matrix @ self.matrix.T / self.dim
        return {
            (ALL_CONCEPTS[i], ALL_CONCEPTS[j]): float(gram[i, j])
            for i, j in combinations(range(len(ALL_CONCEPTS)), 2)
        }

    def max_cross_cosine(self) -> float:
        """Largest |cosine| over distinct entry pairs."""
        return max(abs(v) for v in self.pairwise_cosines().values())

    def to_json(self) -> str:
        """Serializes to ``{"seed", "dim", "entries": {name: [±1, ...]}}``."""
        payload = {
            "seed": self.seed,
            "dim": self.dim,
            "entries": {c.value: self[c].astype(int).tolist() for c in ALL_CONCEPTS},
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        data = json.loads(text)
        entries = data["entries"]
        names = list(entries)
        expected = [c.value for c in ALL_CONCEPTS]
        if names != expected:
            raise ValueError(f"codebook concepts must be {expected} in that order, got {names}")
        matrix = np.array([entries[name] for name in names], dtype=np.float64)
        return cls(seed=data["seed"], dim=data["dim"], matrix=matrix)


def make_codebook(
    seed: int,
    dim: int = DEFAULT_DIM,
    max_cross_cosine: Optional[float] = DEFAULT_MAX_CROSS_COSINE,
) -> Codebook:
    """
    Draws a deterministic codebook for ``(seed, dim)``.

    Args:
        seed (int): PCG64 seed.
        dim (int): Hypervector dimension, at least 1.
        max_cross_cosine (Optional[float]): Largest allowed ``|cosine|`` between
            two distinct entries. ``None`` skips the check, for reduced
            dimensions where the bound cannot hold.

    Returns:
        Codebook: The generated codebook.

    Raises:
        QuasiOrthogonalityError: If some pair exceeds ``max_cross_cosine``. The
            seed is not resampled; the caller picks another one.
    """
    if dim < 1:
        raise ValueError(f"dimension must be at least 1, got {dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = [rng.integers(0, 2, size=dim, dtype=np.uint8) for _ in ALL_CONCEPTS]
    matrix = np.where(np.stack(rows) == 1, 1.0, -1.0)
    cb = Codebook(seed=seed, dim=dim, matrix=matrix)

    if max_cross_cosine is not None:
        worst_pair, worst = max(cb.pairwise_cosines().items(), key=lambda kv: abs(kv[1]))
        if abs(worst) > max_cross_cosine:
            a, b = worst_pair
            raise QuasiOrthogonalityError(
                f"seed {seed}: |cos({a}, {b})| = {abs(worst):.4f} exceeds {max_cross_cosine}"
            )
        logger.debug("codebook seed=%d dim=%d max |cos|=%.4f", seed, dim, abs(worst))
    return cb
