"""Weighted cross-modal similarity search over a store pair.

A query is a single image-derived vector compared against both stored
segments; the two cosines are blended by the text weight alpha:

    combined = (1 - alpha) * img_similarity + alpha * text_similarity

The scan is exact and deterministic: results sort by combined score
descending, ties broken by lower index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import as_vector
from .errors import (
    AssetError,
    DegenerateInputError,
    EmptyStoreError,
    PreconditionError,
    SchemaError,
)
from .store import CaseRecord, StorePair


@dataclass(frozen=True)
class QueryConfig:
    alpha: float = 0.5
    k: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise PreconditionError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.k < 1:
            raise PreconditionError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class RetrievalResult:
    index: int
    combined: float
    img_similarity: float
    text_similarity: float


def cosine(u, v) -> float:
    """Cosine similarity (u . v) / (|u| |v|); undefined for zero-norm input."""
    u = as_vector(u, what="u")
    v = as_vector(v, what="v")
    if u.size != v.size:
        raise SchemaError(f"dim mismatch: {u.size} vs {v.size}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine is undefined for zero-norm vectors")
    return float(u @ v) / (nu * nv)


def query(q, cfg: QueryConfig, store: StorePair) -> list[RetrievalResult]:
    """Rank all stored cases against the query vector; length min(k, size)."""
    if len(store) == 0:
        raise EmptyStoreError("query against an empty store")
    if store.dim_img != store.dim_txt:
        raise SchemaError(
            f"store dims {store.dims} differ; one query vector cannot be compared "
            "against both segments")
    q = as_vector(q, dim=store.dim_img, what="query vector")
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise DegenerateInputError("query vector has zero norm")

    mats = store.matrices()
    for name, norms in (("image segment", mats["img_norms"]), ("text segment", mats["txt_norms"])):
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise DegenerateInputError(f"stored {name} at index {int(zero[0])} has zero norm")

    img_sims = (mats["img"] @ q) / (mats["img_norms"] * qn)
    txt_sims = (mats["txt"] @ q) / (mats["txt_norms"] * qn)
    combined = (1.0 - cfg.alpha) * img_sims + cfg.alpha * txt_sims

    # lexsort: last key is primary; ties fall back to ascending index
    order = np.lexsort((np.arange(len(store)), -combined))
    top = order[:min(cfg.k, len(store))]
    return [RetrievalResult(index=int(i), combined=float(combined[i]),
                            img_similarity=float(img_sims[i]),
                            text_similarity=float(txt_sims[i]))
            for i in top]


def load_case_image(record: CaseRecord) -> bytes:
    try:
        return Path(record.image_ref).read_bytes()
    except OSError as exc:
        raise AssetError(f"case {record.index}: cannot read image at "
                         f"{record.image_ref!r} ({exc})", index=record.index) from exc


def top1(q, cfg: QueryConfig, store: StorePair) -> tuple[CaseRecord, bytes]:
    """Record and image bytes of the rank-1 result."""
    best = query(q, cfg, store)[0]
    record, _, _ = store.get(best.index)
    return record, load_case_image(record)
