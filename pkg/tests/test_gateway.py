import struct

import numpy as np
import pytest

from casemem import gateway
from casemem.errors import DataError, FormatError, PreconditionError, SchemaError, TransportError
from casemem.gateway import EncoderEndpoint, load_precomputed, write_precomputed
from casemem.mocks import MockModelServer, image_vector, text_vector

from conftest import png_bytes

FAST = {"retries": 1, "backoff_s": 0.01}


@pytest.fixture(scope="module")
def server():
    with MockModelServer(dim_img=8, dim_txt=8) as srv:
        yield srv


@pytest.fixture(autouse=True)
def reset_server(server):
    server.force_nan = False
    server.force_dim = None
    server.fail_requests = 0
    server.delay_s = 0.0
    yield


def multimodal(server):
    return EncoderEndpoint(server.base_url, "multimodal")


def text_ep(server):
    return EncoderEndpoint(server.base_url, "text")


def test_embed_pair_passes_through_stub_vectors(server):
    png = png_bytes()
    cm = gateway.embed_pair(png, "a wet road", multimodal(server), **FAST)
    assert np.array_equal(cm.image_segment, image_vector(png, 8))
    assert np.array_equal(cm.text_segment, text_vector("a wet road", 8))


def test_embed_pair_nan_response_is_data_error(server):
    server.force_nan = True
    with pytest.raises(DataError):
        gateway.embed_pair(png_bytes(), "x", multimodal(server), **FAST)


def test_embed_pair_dimension_mismatch_is_schema_error(server):
    server.force_dim = 12
    with pytest.raises(SchemaError):
        gateway.embed_pair(png_bytes(), "x", multimodal(server), dim_img=8, dim_txt=8, **FAST)


def test_embed_pair_requires_decodable_image(server):
    with pytest.raises(PreconditionError):
        gateway.embed_pair(b"not an image", "x", multimodal(server), **FAST)


def test_embed_text_is_deterministic(server):
    a = gateway.embed_text("hello", text_ep(server), **FAST)
    b = gateway.embed_text("hello", text_ep(server), **FAST)
    assert np.array_equal(a, b)


def test_embed_text_empty_string_rejected(server):
    with pytest.raises(PreconditionError):
        gateway.embed_text("", text_ep(server), **FAST)


def test_embed_text_wrong_endpoint_kind(server):
    with pytest.raises(PreconditionError):
        gateway.embed_text("hello", multimodal(server), **FAST)


def test_transport_timeout_is_retriable_error(server):
    server.delay_s = 0.3
    endpoint = EncoderEndpoint(server.base_url, "text", timeout_ms=50)
    with pytest.raises(TransportError) as err:
        gateway.embed_text("hello", endpoint, retries=0, backoff_s=0.01)
    assert err.value.retriable


def test_transport_retries_through_transient_failures(server):
    server.fail_requests = 2
    vec = gateway.embed_text("hello", text_ep(server), retries=3, backoff_s=0.01)
    assert np.array_equal(vec, text_vector("hello", 8))


def test_transport_gives_up_when_failures_persist(server):
    server.fail_requests = 10
    with pytest.raises(TransportError):
        gateway.embed_text("hello", text_ep(server), retries=2, backoff_s=0.01)
    server.fail_requests = 0


def test_unreachable_endpoint(tmp_path):
    endpoint = EncoderEndpoint("http://127.0.0.1:1", "text", timeout_ms=200)
    with pytest.raises(TransportError):
        gateway.embed_text("hello", endpoint, retries=0, backoff_s=0.01)


# --- precomputed batch files ---

def sample_entries(n, dim_img=4, dim_txt=3, seed=5):
    rng = np.random.default_rng(seed)
    return [(f"caption {i}", f"images/{i}.png",
             rng.uniform(-1, 1, dim_img), rng.uniform(-1, 1, dim_txt),
             rng.uniform(-1, 1, dim_txt)) for i in range(n)]


def test_load_precomputed_roundtrip_in_order(tmp_path):
    path = tmp_path / "batch.cmb"
    entries = sample_entries(3)
    write_precomputed(path, entries, dim_img=4, dim_txt=3)
    rows = load_precomputed(path)
    assert [r.index for r, _, _ in rows] == [0, 1, 2]
    assert [r.caption for r, _, _ in rows] == ["caption 0", "caption 1", "caption 2"]
    for (cap, ref, img, seg, vec), (rec, cm, tv) in zip(entries, rows):
        assert rec.image_ref == ref
        assert np.array_equal(cm.image_segment, img.astype(np.float32).astype(np.float64))
        assert np.array_equal(tv, vec.astype(np.float32).astype(np.float64))


def test_load_precomputed_empty_batch(tmp_path):
    path = tmp_path / "empty.cmb"
    write_precomputed(path, [], dim_img=4, dim_txt=3)
    assert load_precomputed(path) == []


def test_load_precomputed_truncated_payload(tmp_path):
    path = tmp_path / "bad.cmb"
    write_precomputed(path, sample_entries(4), dim_img=4, dim_txt=3)
    data = path.read_bytes()
    # lie about the count: header says 5, payload holds 4
    patched = data[:12] + struct.pack("<Q", 5) + data[20:]
    path.write_bytes(patched)
    with pytest.raises(FormatError) as err:
        load_precomputed(path)
    assert "byte" in str(err.value)


def test_load_precomputed_bad_magic(tmp_path):
    path = tmp_path / "bad_magic.cmb"
    write_precomputed(path, sample_entries(1), dim_img=4, dim_txt=3)
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_precomputed(path)


def test_load_precomputed_pure_function_of_bytes(tmp_path):
    path = tmp_path / "batch.cmb"
    write_precomputed(path, sample_entries(5), dim_img=4, dim_txt=3)
    first = load_precomputed(path)
    second = load_precomputed(path)
    for (r1, cm1, tv1), (r2, cm2, tv2) in zip(first, second):
        assert r1 == r2
        assert np.array_equal(cm1.image_segment, cm2.image_segment)
        assert np.array_equal(cm1.text_segment, cm2.text_segment)
        assert np.array_equal(tv1, tv2)
