"""Generation-stage input construction: side-by-side composite and prompt.

The new case image goes on the LEFT, the retrieved exemplar on the RIGHT,
separated by a pure red vertical band 10 px wide. Both halves are scaled
to the smaller height with hand-rolled nearest-neighbor resampling so the
output bytes are identical across platforms.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DegenerateInputError, EmptyOutputError, PreconditionError
from .gateway import _post_json

SEPARATOR_WIDTH = 10
SEPARATOR_COLOR = (255, 0, 0)

PROMPT_TEMPLATE = (
    "The given image has left and right parts separated by a distinct red line. "
    "The corresponding textual description has been given for the scenario on "
    "the right. Please give the textual description of the driving scenario on "
    "the left accordingly."
)

RIGHT_SCENARIO_LABEL = "Description of the right scenario:"

BASELINE_PROMPT = "Please give the textual description of the driving scenario."


@dataclass(frozen=True)
class GeneratorEndpoint:
    base_url: str
    model_name: str = "mock"
    timeout_ms: int = 30_000

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise PreconditionError("timeout_ms must be positive")


@dataclass(frozen=True)
class CompositeImage:
    """RGB raster with the separator band starting at column seam_x."""

    pixels: np.ndarray  # (height, width, 3) uint8
    width: int
    height: int
    seam_x: int

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


def as_raster(image) -> np.ndarray:
    """Accept encoded bytes or an (H, W, 3) uint8 array; return the array."""
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
            raise PreconditionError(
                f"raster must be (H, W, 3) uint8, got {image.shape} {image.dtype}")
        raster = image
    elif isinstance(image, (bytes, bytearray)):
        try:
            with Image.open(io.BytesIO(image)) as img:
                raster = np.asarray(img.convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise PreconditionError(f"image payload is not decodable: {exc}") from exc
    else:
        raise PreconditionError(f"unsupported image type {type(image).__name__}")
    if raster.shape[0] == 0 or raster.shape[1] == 0:
        raise DegenerateInputError("image has zero area")
    return raster


def encode_png(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(raster, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _resize_nearest(raster: np.ndarray, width: int, height: int) -> np.ndarray:
    src_h, src_w = raster.shape[:2]
    if (src_w, src_h) == (width, height):
        return raster
    # dst pixel center maps back to floor((d + 0.5) * src / dst)
    ys = np.minimum(((np.arange(height) + 0.5) * src_h / height).astype(np.int64), src_h - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * src_w / width).astype(np.int64), src_w - 1)
    return raster[np.ix_(ys, xs)]


def concatenate(new_image, retrieved_image) -> CompositeImage:
    """Compose new (left) and retrieved (right) at the common smaller height."""
    left = as_raster(new_image)
    right = as_raster(retrieved_image)
    height = min(left.shape[0], right.shape[0])

    def scaled(raster):
        h, w = raster.shape[:2]
        if h == height:
            return raster
        new_w = max(1, int(w * height / h + 0.5))
        return _resize_nearest(raster, new_w, height)

    left = scaled(left)
    right = scaled(right)
    seam_x = left.shape[1]
    width = seam_x + SEPARATOR_WIDTH + right.shape[1]

    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:, :seam_x] = left
    pixels[:, seam_x:seam_x + SEPARATOR_WIDTH] = SEPARATOR_COLOR
    pixels[:, seam_x + SEPARATOR_WIDTH:] = right
    return CompositeImage(pixels=pixels, width=width, height=height, seam_x=seam_x)


def build_prompt(retrieved_caption: str) -> str:
    """Fixed template, then a labeled line carrying the retrieved caption verbatim."""
    if not retrieved_caption:
        raise PreconditionError("retrieved caption must be non-empty")
    return f"{PROMPT_TEMPLATE}\n{RIGHT_SCENARIO_LABEL}\n{retrieved_caption}"


def _call_generator(png: bytes, prompt: str, endpoint: GeneratorEndpoint, **transport) -> str:
    body = _post_json(endpoint.base_url, "/generate",
                      {"image": base64.b64encode(png).decode("ascii"), "prompt": prompt},
                      endpoint.timeout_ms, **transport)
    text = str(body.get("text", "")).strip()
    if not text:
        raise EmptyOutputError("generator returned empty text")
    return text


def generate(composite: CompositeImage, prompt: str, endpoint: GeneratorEndpoint,
             **transport) -> str:
    """Send the composite and prompt to the generator; whitespace-trimmed reply."""
    return _call_generator(composite.to_png(), prompt, endpoint, **transport)


def generate_single(image, prompt: str, endpoint: GeneratorEndpoint, **transport) -> str:
    """Generator call with one un-composited image (concatenation-off ablation)."""
    return _call_generator(encode_png(as_raster(image)), prompt, endpoint, **transport)


def baseline_generate(image, endpoint: GeneratorEndpoint, **transport) -> str:
    """The no-retrieval arm: single image, fixed baseline prompt."""
    return _call_generator(encode_png(as_raster(image)), BASELINE_PROMPT, endpoint, **transport)
