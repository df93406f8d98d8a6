"""casemem: retrieval-augmented corner-case memory engine.

Dual vector stores under a shared index, weighted cross-modal retrieval,
contrastive alignment training for a projection head, prompt/composite
construction for a generator backend, and a hallucination-metrics harness.
"""

from .embeddings import CrossModalEmbedding, ProjectionHead, as_vector, project
from .errors import EngineError
from .gateway import EncoderEndpoint, embed_pair, embed_text, load_precomputed
from .retrieval import QueryConfig, RetrievalResult, cosine, query, top1
from .store import CaseRecord, StorePair, load, persist
from .trainer import (
    TrainConfig,
    TrainReport,
    contrastive_loss,
    loss_gradient,
    mine_hard_negatives,
    mine_semi_hard,
    similarity_matrix,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CaseRecord",
    "CrossModalEmbedding",
    "EncoderEndpoint",
    "EngineError",
    "ProjectionHead",
    "QueryConfig",
    "RetrievalResult",
    "StorePair",
    "TrainConfig",
    "TrainReport",
    "as_vector",
    "contrastive_loss",
    "cosine",
    "embed_pair",
    "embed_text",
    "load",
    "load_precomputed",
    "loss_gradient",
    "mine_hard_negatives",
    "mine_semi_hard",
    "persist",
    "project",
    "query",
    "similarity_matrix",
    "top1",
    "train",
]
