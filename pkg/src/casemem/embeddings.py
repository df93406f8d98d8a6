"""Embedding vector validation, cross-modal pairs, and the linear projection head.

Vectors travel through the engine as 1-D float64 numpy arrays; ``as_vector``
is the single choke point that enforces finiteness and (optionally) the
configured dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, SchemaError

DEFAULT_DIM = 768


def as_vector(values, dim: int | None = None, what: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, checking the dimension if given."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise SchemaError(f"{what} must be a non-empty 1-D sequence, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError(f"{what} contains NaN or Inf")
    if dim is not None and v.size != dim:
        raise SchemaError(f"{what} has dim {v.size}, expected {dim}")
    return v


def is_normalized(v: np.ndarray, tol: float = 1e-6) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


@dataclass(frozen=True)
class CrossModalEmbedding:
    """Concatenated image-segment and text-segment vectors for one case."""

    image_segment: np.ndarray
    text_segment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "image_segment", as_vector(self.image_segment, what="image segment"))
        object.__setattr__(self, "text_segment", as_vector(self.text_segment, what="text segment"))

    @property
    def dims(self) -> tuple[int, int]:
        return self.image_segment.size, self.text_segment.size


@dataclass(frozen=True)
class ProjectionHead:
    """Linear map applied to image embeddings before similarity.

    ``weights`` is (dim_out, dim_in); the identity head leaves vectors
    unchanged and is the untrained default everywhere.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or 0 in w.shape:
            raise SchemaError(f"projection weights must be a 2-D matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DataError("projection weights contain NaN or Inf")
        object.__setattr__(self, "weights", w)

    @property
    def dim_in(self) -> int:
        return self.weights.shape[1]

    @property
    def dim_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "ProjectionHead":
        return cls(np.eye(dim))


def project(v, head: ProjectionHead) -> np.ndarray:
    """Apply the head: returns W @ v with dimension head.dim_out."""
    v = as_vector(v, what="input vector")
    if v.size != head.dim_in:
        raise SchemaError(f"vector dim {v.size} does not match head dim_in {head.dim_in}")
    return head.weights @ v
