import io
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from casemem.embeddings import CrossModalEmbedding
from casemem.store import StorePair

FIXTURES = Path(__file__).parent.parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def png_bytes(color=(30, 60, 90), size=(24, 16)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color=color).save(buf, format="PNG")
    return buf.getvalue()


def solid_raster(color, width, height) -> np.ndarray:
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:, :] = color
    return out


def make_store(n: int, dim: int, rng, tmp_path=None, with_assets=False) -> StorePair:
    """Random store; optionally writes a PNG per case so top1 can load assets."""
    store = StorePair(dim, dim)
    for i in range(n):
        img_seg = rng.uniform(-1.0, 1.0, dim)
        txt_seg = rng.uniform(-1.0, 1.0, dim)
        txt_vec = rng.uniform(-1.0, 1.0, dim)
        if with_assets:
            ref = tmp_path / f"case_{i}.png"
            ref.write_bytes(png_bytes(color=(i % 256, (3 * i) % 256, (7 * i) % 256)))
        else:
            ref = Path(f"/nonexistent/case_{i}.png")
        store.insert(str(ref), f"caption for case {i}",
                     CrossModalEmbedding(img_seg, txt_seg), txt_vec)
    return store
