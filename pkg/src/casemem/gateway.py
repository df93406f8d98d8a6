"""Clients for encoder services and the precomputed-batch file format.

Two ways to obtain embeddings: call an external encoder service over HTTP
(the service owns pooling; we only validate shape and finiteness), or load
a precomputed batch file written offline. The batch file is the canonical
test and desk-scale path; no neural encoder ever runs in-process.

Batch file layout (little-endian):
    magic "CMB1"
    u32 dim_img, u32 dim_txt, u64 count
    per record:
        u32 caption byte-length, UTF-8 caption
        u32 image-path byte-length, UTF-8 path
        dim_img f32  image segment
        dim_txt f32  text segment
        dim_txt f32  text-only database vector
"""

from __future__ import annotations

import base64
import io
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import requests
from PIL import Image, UnidentifiedImageError

from .embeddings import CrossModalEmbedding, as_vector
from .errors import FormatError, PreconditionError, TransportError
from .store import CaseRecord

PRECOMPUTED_MAGIC = b"CMB1"

MAX_RETRIES = 3
BACKOFF_S = 0.2
DEFAULT_TIMEOUT_MS = 10_000


@dataclass(frozen=True)
class EncoderEndpoint:
    base_url: str
    kind: Literal["multimodal", "text"]
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self):
        if self.kind not in ("multimodal", "text"):
            raise PreconditionError(f"unknown encoder kind {self.kind!r}")
        if self.timeout_ms <= 0:
            raise PreconditionError("timeout_ms must be positive")


def _post_json(base_url: str, route: str, payload: dict, timeout_ms: int,
               retries: int = MAX_RETRIES, backoff_s: float = BACKOFF_S) -> dict:
    """POST with up to ``retries`` retries on transport-level failures.

    Connection errors, timeouts and 5xx responses back off exponentially
    (backoff_s, 2x each attempt); 4xx responses fail immediately.
    """
    url = base_url.rstrip("/") + route
    delay = backoff_s
    last_exc = None
    for attempt in range(retries + 1):
        try:
            resp = requests.post(url, json=payload, timeout=timeout_ms / 1000.0)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_exc = exc
        else:
            if resp.status_code < 400:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise TransportError(f"{url}: non-JSON response") from exc
            if resp.status_code < 500:
                raise TransportError(f"{url}: HTTP {resp.status_code}")
            last_exc = TransportError(f"{url}: HTTP {resp.status_code}")
        if attempt < retries:
            time.sleep(delay)
            delay *= 2
    raise TransportError(
        f"{url}: unreachable after {retries + 1} attempts ({last_exc})") from last_exc


def _check_decodable(image: bytes) -> None:
    try:
        Image.open(io.BytesIO(image)).verify()
    except (UnidentifiedImageError, OSError) as exc:
        raise PreconditionError(f"image payload is not decodable: {exc}") from exc


def embed_pair(image: bytes, text: str, endpoint: EncoderEndpoint,
               dim_img: int | None = None, dim_txt: int | None = None,
               **transport) -> CrossModalEmbedding:
    """Embed one image-caption pair through a multimodal encoder service."""
    if endpoint.kind != "multimodal":
        raise PreconditionError("embed_pair requires a multimodal endpoint")
    if not text:
        raise PreconditionError("text must be non-empty")
    _check_decodable(image)
    body = _post_json(endpoint.base_url, "/embed",
                      {"image": base64.b64encode(image).decode("ascii"), "text": text},
                      endpoint.timeout_ms, **transport)
    return CrossModalEmbedding(
        as_vector(body.get("image_vector"), dim_img, "encoder image vector"),
        as_vector(body.get("text_vector"), dim_txt, "encoder text vector"))


def embed_image(image: bytes, endpoint: EncoderEndpoint,
                dim: int | None = None, **transport) -> np.ndarray:
    """Image-only embedding for the query path (multimodal encoder, no caption)."""
    if endpoint.kind != "multimodal":
        raise PreconditionError("embed_image requires a multimodal endpoint")
    _check_decodable(image)
    body = _post_json(endpoint.base_url, "/embed",
                      {"image": base64.b64encode(image).decode("ascii"), "text": ""},
                      endpoint.timeout_ms, **transport)
    return as_vector(body.get("image_vector"), dim, "encoder image vector")


def embed_text(text: str, endpoint: EncoderEndpoint,
               dim: int | None = None, **transport) -> np.ndarray:
    """Embed a caption through a text encoder service."""
    if endpoint.kind != "text":
        raise PreconditionError("embed_text requires a text endpoint")
    if not text:
        raise PreconditionError("text must be non-empty")
    body = _post_json(endpoint.base_url, "/embed", {"image": None, "text": text},
                      endpoint.timeout_ms, **transport)
    vec = as_vector(body.get("vector"), dim, "encoder text vector")
    if "dim" in body and body["dim"] != vec.size:
        raise FormatError(f"encoder reported dim {body['dim']} for a {vec.size}-value vector")
    return vec


def write_precomputed(path, entries, dim_img: int, dim_txt: int) -> None:
    """Write a batch file; entries are (caption, image_ref, img_seg, txt_seg, txt_vec)."""
    entries = list(entries)
    buf = bytearray()
    buf += PRECOMPUTED_MAGIC
    buf += struct.pack("<IIQ", dim_img, dim_txt, len(entries))
    for caption, image_ref, img_seg, txt_seg, txt_vec in entries:
        if not caption:
            raise PreconditionError("precomputed entries need non-empty captions")
        img = np.asarray(img_seg, dtype="<f4")
        seg = np.asarray(txt_seg, dtype="<f4")
        vec = np.asarray(txt_vec, dtype="<f4")
        if img.shape != (dim_img,) or seg.shape != (dim_txt,) or vec.shape != (dim_txt,):
            raise PreconditionError("precomputed entry dims do not match header dims")
        cap_b = caption.encode("utf-8")
        ref_b = str(image_ref).encode("utf-8")
        buf += struct.pack("<I", len(cap_b)) + cap_b
        buf += struct.pack("<I", len(ref_b)) + ref_b
        buf += img.tobytes() + seg.tobytes() + vec.tobytes()
    Path(path).write_bytes(bytes(buf))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated {what} at byte {self.pos}: need {n} bytes, "
                f"{len(self.data) - self.pos} remain")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32s(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def load_precomputed(path) -> list[tuple[CaseRecord, CrossModalEmbedding, np.ndarray]]:
    """Read a batch file; records come back in file order with indices 0..N-1."""
    data = Path(path).read_bytes()
    cur = _Cursor(data)
    magic = cur.take(4, "magic")
    if magic != PRECOMPUTED_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PRECOMPUTED_MAGIC!r}")
    dim_img = cur.u32("dim_img")
    dim_txt = cur.u32("dim_txt")
    (count,) = struct.unpack("<Q", cur.take(8, "count"))

    out = []
    for i in range(count):
        cap_len = cur.u32(f"record {i} caption length")
        caption = cur.take(cap_len, f"record {i} caption").decode("utf-8")
        ref_len = cur.u32(f"record {i} image-path length")
        image_ref = cur.take(ref_len, f"record {i} image path").decode("utf-8")
        img_seg = cur.f32s(dim_img, f"record {i} image segment")
        txt_seg = cur.f32s(dim_txt, f"record {i} text segment")
        txt_vec = cur.f32s(dim_txt, f"record {i} text vector")
        out.append((CaseRecord(index=i, image_ref=image_ref, caption=caption),
                    CrossModalEmbedding(img_seg, txt_seg), txt_vec))
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes after record {count - 1}")
    return out
