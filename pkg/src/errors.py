"""
Exception hierarchy shared by every module of the package.
"""


class HDVQAError(Exception):
    """Base class for all errors raised by the package."""


class DimensionMismatchError(HDVQAError, ValueError):
    """Two hypervectors (or a vector and a codebook) disagree on dimension."""

    def __init__(self, left: int, right: int):
        super().__init__(f"dimension mismatch: {left} != {right}")
        self.left = left
        self.right = right


class ZeroNormError(HDVQAError):
    """Cosine similarity requested for an all-zero vector."""


class NonFiniteError(HDVQAError):
    """NaN or Inf found in weights, activations or losses."""


class QuasiOrthogonalityError(HDVQAError):
    """A generated codebook has two concepts that are too similar."""


class QuestionParseError(HDVQAError, ValueError):
    """A compact question string does not follow the grammar."""


class DatasetFormatError(HDVQAError):
    """A dataset directory is missing files or has inconsistent contents."""


class CheckpointError(HDVQAError):
    """A model checkpoint cannot be read or does not match the expected layout."""


class CodebookMismatchError(HDVQAError):
    """Checkpoint, dataset and flags disagree on codebook seed or dimension."""


class DivergenceError(HDVQAError):
    """Training produced a non-finite loss."""
