"""Contrastive alignment training for the image-side projection head.

The trainable component is a square linear head applied to image embeddings;
text embeddings stay frozen. Per batch both sides are unit-normalized, so
every similarity matrix entry is a plain dot product equal to the cosine.

The loss is the symmetric temperature-scaled cross-entropy over the batch
similarity matrix: row-wise softmax against the diagonal (image side) plus
column-wise (text side), averaged. Mining restricts, for each anchor, the
softmax denominator to the anchor's positive plus its mined negatives,
falling back to the full batch when nothing was mined for that anchor.

Head file layout: magic "HEAD1", u32 dim_in, u32 dim_out, f32 row-major
weights, CRC32.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import ProjectionHead
from .errors import (
    CorruptionError,
    DataError,
    DegenerateInputError,
    FormatError,
    PreconditionError,
)

HEAD_MAGIC = b"HEAD1"


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.07
    margin: float = 0.2
    eta: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    use_semi_hard: bool = False
    semi_hard_switch_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise PreconditionError("tau must be positive")
        if self.margin < 0:
            raise PreconditionError("margin must be non-negative")
        if self.eta <= 0:
            raise PreconditionError("eta must be positive")
        if self.epochs < 1:
            raise PreconditionError("epochs must be >= 1")
        if self.batch_size < 2:
            raise PreconditionError("batch_size must be >= 2")
        if not 0.0 <= self.semi_hard_switch_fraction <= 1.0:
            raise PreconditionError("semi_hard_switch_fraction must be in [0, 1]")


@dataclass
class TrainReport:
    loss_per_epoch: list[float]
    final_head: ProjectionHead
    mined_counts: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class HardNegatives:
    """Margin-rule pairs plus the per-anchor hardest wrong matches.

    pairs: all (i, j), i != j, with S[i, j] > S[i, i] - margin.
    hardest_text_for_image[i]: argmax_{j != i} S[i, j]  (None when N == 1).
    hardest_image_for_text[j]: argmax_{i != j} S[i, j].
    """

    pairs: list[tuple[int, int]]
    hardest_text_for_image: list[int | None]
    hardest_image_for_text: list[int | None]


def _check_square(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] == 0:
        raise PreconditionError(f"similarity matrix must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DataError("similarity matrix contains NaN or Inf")
    return S


def _rows(vectors, what: str) -> np.ndarray:
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim != 2:
        m = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    if not np.all(np.isfinite(m)):
        raise DataError(f"{what} contain NaN or Inf")
    return m


def similarity_matrix(img_embs, txt_embs) -> np.ndarray:
    """N x N matrix of cosine similarities between image rows and text rows."""
    a = _rows(img_embs, "image embeddings")
    b = _rows(txt_embs, "text embeddings")
    if a.shape != b.shape:
        raise PreconditionError(f"batch shapes differ: {a.shape} vs {b.shape}")
    an = np.linalg.norm(a, axis=1)
    bn = np.linalg.norm(b, axis=1)
    for name, norms in (("image", an), ("text", bn)):
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise DegenerateInputError(f"{name} row {int(zero[0])} has zero norm")
    return (a / an[:, None]) @ (b / bn[:, None]).T


def _masked_loss_grad(S: np.ndarray, tau: float,
                      row_allowed: np.ndarray, col_allowed: np.ndarray):
    """Loss and dL/dS with per-anchor denominator masks (True = in denominator).

    Diagonals of both masks must be True. With all-True masks this is the
    plain full-batch objective. Log-sum-exp keeps tau as small as 0.01 safe.
    """
    n = S.shape[0]
    Z = S / tau

    Zr = np.where(row_allowed, Z, -np.inf)
    mr = Zr.max(axis=1, keepdims=True)
    er = np.exp(Zr - mr)
    sr = er.sum(axis=1, keepdims=True)
    lse_r = (mr + np.log(sr)).ravel()

    Zc = np.where(col_allowed, Z, -np.inf)
    mc = Zc.max(axis=0, keepdims=True)
    ec = np.exp(Zc - mc)
    sc = ec.sum(axis=0, keepdims=True)
    lse_c = (mc + np.log(sc)).ravel()

    diag = np.diag(Z)
    loss = float(((lse_r - diag).mean() + (lse_c - diag).mean()) / 2.0)

    eye = np.eye(n)
    grad = ((er / sr - eye) + (ec / sc - eye)) / (2.0 * n * tau)
    return loss, grad


def _full_masks(n: int) -> np.ndarray:
    return np.ones((n, n), dtype=bool)


def contrastive_loss(S, tau: float) -> float:
    """Symmetric temperature-scaled cross-entropy against the diagonal."""
    S = _check_square(S)
    if tau <= 0:
        raise PreconditionError("tau must be positive")
    mask = _full_masks(S.shape[0])
    loss, _ = _masked_loss_grad(S, tau, mask, mask)
    return loss


def loss_gradient(S, tau: float) -> np.ndarray:
    """Analytic dL/dS: ((rowsoftmax - I) + (colsoftmax - I)) / (2 N tau)."""
    S = _check_square(S)
    if tau <= 0:
        raise PreconditionError("tau must be positive")
    mask = _full_masks(S.shape[0])
    _, grad = _masked_loss_grad(S, tau, mask, mask)
    return grad


def mine_hard_negatives(S, margin: float) -> HardNegatives:
    """All off-diagonal pairs whose similarity crowds the positive's."""
    S = _check_square(S)
    if margin < 0:
        raise PreconditionError("margin must be non-negative")
    n = S.shape[0]
    mask = S > (np.diag(S)[:, None] - margin)
    np.fill_diagonal(mask, False)
    pairs = [(int(i), int(j)) for i, j in zip(*np.nonzero(mask))]

    if n == 1:
        return HardNegatives(pairs, [None], [None])
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    hardest_text = [int(j) for j in off.argmax(axis=1)]
    hardest_image = [int(i) for i in off.argmax(axis=0)]
    return HardNegatives(pairs, hardest_text, hardest_image)


def _rng_for(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, epoch])


def mine_semi_hard(S, epoch: int, cfg: TrainConfig) -> list[tuple[int, int]]:
    """One negative per anchor: random early in training, then the closest
    similarity strictly below the positive's (anchors with no such candidate
    are skipped). Pure function of its arguments, so reruns are identical.
    """
    S = _check_square(S)
    if not 0 <= epoch < cfg.epochs:
        raise PreconditionError(f"epoch {epoch} outside [0, {cfg.epochs})")
    n = S.shape[0]
    if n == 1:
        return []

    if epoch < cfg.semi_hard_switch_fraction * cfg.epochs:
        rng = _rng_for(cfg.seed, epoch)
        pairs = []
        for i in range(n):
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            pairs.append((i, j))
        return pairs

    pairs = []
    for i in range(n):
        row = S[i].copy()
        row[i] = np.inf  # exclude the positive itself
        candidates = row < S[i, i]
        if not candidates.any():
            continue
        masked = np.where(candidates, row, -np.inf)
        pairs.append((i, int(masked.argmax())))
    return pairs


def _anchor_masks(n: int, pairs) -> tuple[np.ndarray, np.ndarray]:
    """Denominator masks from mined pairs; unrestricted anchors get the full batch."""
    row = np.eye(n, dtype=bool)
    col = np.eye(n, dtype=bool)
    for i, j in pairs:
        row[i, j] = True
        col[i, j] = True
    lonely_rows = row.sum(axis=1) == 1
    row[lonely_rows, :] = True
    lonely_cols = col.sum(axis=0) == 1
    col[:, lonely_cols] = True
    return row, col


def _batch_step(W: np.ndarray, x: np.ndarray, t_unit: np.ndarray,
                cfg: TrainConfig, epoch: int) -> tuple[float, np.ndarray, int]:
    """Loss, dL/dW, and mined-pair count for one batch at the current head."""
    with np.errstate(over="ignore", invalid="ignore"):
        p = x @ W.T
        pn = np.linalg.norm(p, axis=1)
    if not np.all(np.isfinite(pn)) or np.any(pn == 0.0):
        raise DataError("projected image vector overflowed or collapsed to zero norm")
    u = p / pn[:, None]
    S = u @ t_unit.T

    if cfg.use_semi_hard:
        pairs = mine_semi_hard(S, epoch, cfg)
    else:
        pairs = mine_hard_negatives(S, cfg.margin).pairs
    row_mask, col_mask = _anchor_masks(S.shape[0], pairs)

    loss, G = _masked_loss_grad(S, cfg.tau, row_mask, col_mask)

    # chain rule: S -> u (through normalization) -> p -> W
    dU = G @ t_unit
    dP = (dU - (dU * u).sum(axis=1, keepdims=True) * u) / pn[:, None]
    gW = dP.T @ x
    return loss, gW, len(pairs)


def train(dataset, cfg: TrainConfig) -> TrainReport:
    """Fit the head by plain gradient descent over seeded-shuffled batches.

    dataset: sequence of (image vector, text vector) pairs, equal dims.
    Trailing items that do not fill a batch are skipped that epoch; the
    shuffle rotates coverage. Deterministic given cfg.seed.
    """
    imgs = _rows([d[0] for d in dataset], "image vectors")
    txts = _rows([d[1] for d in dataset], "text vectors")
    if imgs.shape != txts.shape:
        raise PreconditionError(f"image/text shapes differ: {imgs.shape} vs {txts.shape}")
    n_items, dim = imgs.shape
    if n_items < cfg.batch_size:
        raise PreconditionError(
            f"dataset size {n_items} smaller than batch_size {cfg.batch_size}")
    tn = np.linalg.norm(txts, axis=1)
    if np.any(tn == 0.0):
        raise DegenerateInputError("text vector with zero norm in dataset")
    txts_unit = txts / tn[:, None]

    W = np.eye(dim)
    rng = np.random.default_rng(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    losses: list[float] = []
    mined: list[dict] = []
    mode = "semi_hard" if cfg.use_semi_hard else "hard"

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_items)
        batch_losses = []
        epoch_pairs = 0
        for start in range(0, n_items - cfg.batch_size + 1, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            try:
                loss, gW, n_pairs = _batch_step(W, imgs[idx], txts_unit[idx], cfg, epoch)
            except DataError as exc:
                raise DataError(f"epoch {epoch}, batch at {start}: {exc}") from exc
            if not (np.isfinite(loss) and np.all(np.isfinite(gW))):
                raise DataError(
                    f"epoch {epoch}, batch at {start}: non-finite loss or gradient")
            W = W - cfg.eta * gW
            batch_losses.append(loss)
            epoch_pairs += n_pairs
        losses.append(float(np.mean(batch_losses)))
        mined.append({"hard": epoch_pairs if mode == "hard" else 0,
                      "semi_hard": epoch_pairs if mode == "semi_hard" else 0})

    return TrainReport(loss_per_epoch=losses, final_head=ProjectionHead(W),
                       mined_counts=mined)


def save_head(head: ProjectionHead, path) -> None:
    body = HEAD_MAGIC + struct.pack("<II", head.dim_in, head.dim_out)
    body += np.ascontiguousarray(head.weights, dtype="<f4").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_head(path) -> ProjectionHead:
    data = Path(path).read_bytes()
    if len(data) < len(HEAD_MAGIC) + 8 + 4:
        raise FormatError("head file too short")
    if data[:len(HEAD_MAGIC)] != HEAD_MAGIC:
        raise FormatError(f"bad head magic {data[:len(HEAD_MAGIC)]!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("head file CRC32 mismatch")
    dim_in, dim_out = struct.unpack_from("<II", body, len(HEAD_MAGIC))
    payload = body[len(HEAD_MAGIC) + 8:]
    if len(payload) != dim_in * dim_out * 4:
        raise FormatError(
            f"head payload is {len(payload)} bytes, expected {dim_in * dim_out * 4}")
    w = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dim_out, dim_in)
    return ProjectionHead(w)
