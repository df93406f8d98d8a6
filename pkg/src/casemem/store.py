"""Dual embedding databases under one shared index space.

A ``StorePair`` holds three parallel collections: cross-modal embeddings
(image segment + text segment), text-only embeddings, and case records.
Entry i of each collection always describes the same case. Payloads are
kept as float32 (the on-disk width); all similarity arithmetic upstream
runs on float64 views built by ``matrices()``.

On disk a store is a directory:
    crossmodal.db  magic CMDB1, dims, count, f32 payload, CRC32
    text.db        magic TXDB1, dim, count, f32 payload, CRC32
    manifest.jsonl one JSON object per case, in index order
"""

from __future__ import annotations

import json
import struct
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embeddings import CrossModalEmbedding
from .errors import (
    CorruptionError,
    DataError,
    FormatError,
    NotFoundError,
    PreconditionError,
    SchemaError,
)

CROSSMODAL_MAGIC = b"CMDB1"
TEXT_MAGIC = b"TXDB1"

SOURCE_SEED = "seed_corpus"
SOURCE_HUMAN = "human_correction"
_SOURCES = (SOURCE_SEED, SOURCE_HUMAN)


@dataclass(frozen=True)
class CaseRecord:
    """One corner-case exemplar; ``index`` is shared by both databases."""

    index: int
    image_ref: str
    caption: str
    source: str = SOURCE_SEED
    revision: int = 0
    history: tuple[str, ...] = ()

    def __post_init__(self):
        if self.index < 0:
            raise PreconditionError(f"index must be non-negative, got {self.index}")
        if not self.caption:
            raise PreconditionError("caption must be non-empty")
        if self.source not in _SOURCES:
            raise PreconditionError(f"source must be one of {_SOURCES}, got {self.source!r}")

    def manifest_entry(self) -> dict:
        entry = {
            "index": self.index,
            "image_ref": self.image_ref,
            "caption": self.caption,
            "source": self.source,
        }
        if self.revision:
            entry["revision"] = self.revision
            entry["history"] = list(self.history)
        return entry


class RWLock:
    """Many concurrent readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    @contextmanager
    def read_locked(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write_locked(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


def _as_f32_row(values, dim: int, what: str) -> np.ndarray:
    v = np.asarray(values)
    if v.ndim != 1:
        raise SchemaError(f"{what} must be 1-D, got shape {v.shape}")
    if v.size != dim:
        raise SchemaError(f"{what} has dim {v.size}, expected {dim}")
    row = np.ascontiguousarray(v, dtype=np.float32)
    if not np.all(np.isfinite(row)):
        raise DataError(f"{what} contains NaN or Inf")
    return row


class StorePair:
    """The cross-modal store and the text-only store, index-aligned.

    Not internally synchronized: concurrent use goes through ``self.lock``
    (readers-writer), which the HTTP facade enforces. Library callers in a
    single thread may ignore it.
    """

    def __init__(self, dim_img: int, dim_txt: int):
        if dim_img <= 0 or dim_txt <= 0:
            raise PreconditionError("store dims must be positive")
        self.dim_img = int(dim_img)
        self.dim_txt = int(dim_txt)
        self._records: list[CaseRecord] = []
        self._img_segs: list[np.ndarray] = []
        self._txt_segs: list[np.ndarray] = []
        self._txt_vecs: list[np.ndarray] = []
        self._matrices = None
        self.lock = RWLock()

    @property
    def dims(self) -> tuple[int, int]:
        return self.dim_img, self.dim_txt

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[CaseRecord]:
        return list(self._records)

    def insert(self, image_ref: str, caption: str, cm: CrossModalEmbedding, tv,
               source: str = SOURCE_SEED) -> int:
        """Append one case to all three collections; atomic on failure.

        Vectors are quantized to float32 here, matching the on-disk width.
        Returns the new shared index (== previous size).
        """
        img = _as_f32_row(cm.image_segment, self.dim_img, "image segment")
        seg = _as_f32_row(cm.text_segment, self.dim_txt, "text segment")
        vec = _as_f32_row(tv, self.dim_txt, "text vector")
        record = CaseRecord(index=len(self._records), image_ref=image_ref,
                            caption=caption, source=source)
        appended = []
        try:
            for coll, item in ((self._img_segs, img), (self._txt_segs, seg),
                               (self._txt_vecs, vec), (self._records, record)):
                coll.append(item)
                appended.append(coll)
        except BaseException:
            for coll in appended:
                coll.pop()
            raise
        self._matrices = None
        return record.index

    def get(self, index: int) -> tuple[CaseRecord, CrossModalEmbedding, np.ndarray]:
        if not 0 <= index < len(self._records):
            raise NotFoundError(f"case {index} not in store of size {len(self._records)}")
        cm = CrossModalEmbedding(self._img_segs[index].astype(np.float64),
                                 self._txt_segs[index].astype(np.float64))
        return self._records[index], cm, self._txt_vecs[index].astype(np.float64)

    def correct_caption(self, index: int, caption: str, text_vec,
                        source: str = SOURCE_HUMAN) -> int:
        """Replace the caption and both text vectors at ``index`` in place.

        The previous caption is kept in the record's history; returns the
        new revision number.
        """
        if not 0 <= index < len(self._records):
            raise NotFoundError(f"case {index} not in store of size {len(self._records)}")
        if not caption:
            raise PreconditionError("corrected caption must be non-empty")
        vec = _as_f32_row(text_vec, self.dim_txt, "text vector")
        old = self._records[index]
        updated = replace(old, caption=caption, source=source,
                          revision=old.revision + 1,
                          history=old.history + (old.caption,))
        self._txt_segs[index] = vec
        self._txt_vecs[index] = vec.copy()
        self._records[index] = updated
        self._matrices = None
        return updated.revision

    def matrices(self):
        """Stacked float64 matrices and norms for the scan path (cached)."""
        if self._matrices is None:
            img = np.stack(self._img_segs).astype(np.float64) if self._img_segs \
                else np.empty((0, self.dim_img))
            seg = np.stack(self._txt_segs).astype(np.float64) if self._txt_segs \
                else np.empty((0, self.dim_txt))
            self._matrices = {
                "img": img,
                "txt": seg,
                "img_norms": np.linalg.norm(img, axis=1),
                "txt_norms": np.linalg.norm(seg, axis=1),
            }
        return self._matrices

    def payload_bytes(self) -> tuple[bytes, bytes]:
        """Raw f32 payloads (crossmodal, text) in file order."""
        cm = bytearray()
        for img, seg in zip(self._img_segs, self._txt_segs):
            cm += img.astype("<f4").tobytes()
            cm += seg.astype("<f4").tobytes()
        tx = b"".join(v.astype("<f4").tobytes() for v in self._txt_vecs)
        return bytes(cm), tx

    def content_checksum(self) -> int:
        cm, tx = self.payload_bytes()
        return zlib.crc32(tx, zlib.crc32(cm))

    def __eq__(self, other) -> bool:
        if not isinstance(other, StorePair):
            return NotImplemented
        return (self.dims == other.dims
                and self._records == other._records
                and self.payload_bytes() == other.payload_bytes())


def persist(store: StorePair, directory) -> None:
    """Write the store to ``directory`` (created if needed), deterministically."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cm_payload, tx_payload = store.payload_bytes()

    cm_head = CROSSMODAL_MAGIC + struct.pack("<IIQ", store.dim_img, store.dim_txt, len(store))
    cm_body = cm_head + cm_payload
    (directory / "crossmodal.db").write_bytes(cm_body + struct.pack("<I", zlib.crc32(cm_body)))

    tx_head = TEXT_MAGIC + struct.pack("<IQ", store.dim_txt, len(store))
    tx_body = tx_head + tx_payload
    (directory / "text.db").write_bytes(tx_body + struct.pack("<I", zlib.crc32(tx_body)))

    lines = [json.dumps(r.manifest_entry(), ensure_ascii=False, separators=(",", ":"))
             for r in store.records()]
    (directory / "manifest.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8")


def _read_checked(path: Path, magic: bytes) -> bytes:
    data = path.read_bytes()
    if len(data) < len(magic) + 4:
        raise FormatError(f"{path.name}: file too short ({len(data)} bytes)")
    if data[:len(magic)] != magic:
        raise FormatError(f"{path.name}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError(f"{path.name}: CRC32 mismatch")
    return body[len(magic):]


def load(directory) -> StorePair:
    """Load a store persisted by ``persist``; field-by-field inverse of it."""
    directory = Path(directory)
    cm_body = _read_checked(directory / "crossmodal.db", CROSSMODAL_MAGIC)
    tx_body = _read_checked(directory / "text.db", TEXT_MAGIC)

    if len(cm_body) < 16:
        raise FormatError("crossmodal.db: truncated header")
    dim_img, dim_txt, count = struct.unpack_from("<IIQ", cm_body, 0)
    cm_payload = cm_body[16:]
    expected = count * (dim_img + dim_txt) * 4
    if len(cm_payload) != expected:
        raise FormatError(
            f"crossmodal.db: payload is {len(cm_payload)} bytes, expected {expected}")

    if len(tx_body) < 12:
        raise FormatError("text.db: truncated header")
    t_dim, t_count = struct.unpack_from("<IQ", tx_body, 0)
    tx_payload = tx_body[12:]
    if (t_dim, t_count) != (dim_txt, count):
        raise FormatError(
            f"text.db header ({t_dim}, {t_count}) disagrees with crossmodal.db "
            f"({dim_txt}, {count})")
    if len(tx_payload) != count * dim_txt * 4:
        raise FormatError(
            f"text.db: payload is {len(tx_payload)} bytes, expected {count * dim_txt * 4}")

    manifest_path = directory / "manifest.jsonl"
    if not manifest_path.exists():
        raise FormatError("manifest.jsonl missing")
    records = []
    for lineno, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest.jsonl line {lineno + 1}: invalid JSON") from exc
        records.append(CaseRecord(
            index=obj["index"], image_ref=obj["image_ref"], caption=obj["caption"],
            source=obj.get("source", SOURCE_SEED), revision=obj.get("revision", 0),
            history=tuple(obj.get("history", ()))))
    if len(records) != count:
        raise FormatError(f"manifest has {len(records)} records, databases have {count}")
    for i, rec in enumerate(records):
        if rec.index != i:
            raise FormatError(f"manifest line {i + 1} carries index {rec.index}, expected {i}")

    store = StorePair(dim_img, dim_txt)
    row = np.frombuffer(cm_payload, dtype="<f4").reshape(count, dim_img + dim_txt) \
        if count else np.empty((0, dim_img + dim_txt), dtype=np.float32)
    txt = np.frombuffer(tx_payload, dtype="<f4").reshape(count, dim_txt) \
        if count else np.empty((0, dim_txt), dtype=np.float32)
    for i, rec in enumerate(records):
        store._records.append(rec)
        store._img_segs.append(np.ascontiguousarray(row[i, :dim_img], dtype=np.float32))
        store._txt_segs.append(np.ascontiguousarray(row[i, dim_img:], dtype=np.float32))
        store._txt_vecs.append(np.ascontiguousarray(txt[i], dtype=np.float32))
    return store
