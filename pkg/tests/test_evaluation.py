import json
import math

import numpy as np
import pytest

from casemem import mocks
from casemem.augmentation import GeneratorEndpoint, encode_png
from casemem.embeddings import CrossModalEmbedding
from casemem.errors import DegenerateInputError, DegenerateVarianceError, InsufficientDataError
from casemem.evaluation import (
    PairedSample,
    grid_t_tests,
    lcs_length,
    load_metric_grid,
    mean_cosine_metric,
    paired_t_test,
    relative_improvement,
    rouge_l,
    run_comparison,
    student_t_two_tailed_p,
    tokenize,
)
from casemem.gateway import EncoderEndpoint
from casemem.mocks import MockModelServer
from casemem.store import StorePair

from conftest import FIXTURES, solid_raster
from oracles import brute_force_lcs, t_two_tailed_p_by_quadrature


# --- tokenization ---

def test_tokenize_lowercases_and_splits():
    assert tokenize("The cat, the CAT!") == ["the", "cat", "the", "cat"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_hyphen_is_separator():
    assert tokenize("a-b c") == ["a", "b", "c"]


# --- LCS ---

def test_lcs_identical_sequences():
    assert lcs_length(list("abcde"), list("abcde")) == 5


def test_lcs_disjoint_alphabets():
    assert lcs_length(list("aaa"), list("bbb")) == 0


def test_lcs_matches_exhaustive_enumeration(rng):
    for _ in range(200):
        x = [int(v) for v in rng.integers(0, 4, size=int(rng.integers(0, 13)))]
        y = [int(v) for v in rng.integers(0, 4, size=int(rng.integers(0, 13)))]
        assert lcs_length(x, y) == brute_force_lcs(x, y)


# --- ROUGE-L ---

def test_rouge_identical_texts():
    text = "seven tokens in this reference sentence here"
    score = rouge_l(text, text)
    assert (score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0)
    assert score.lcs_len == 7


def test_rouge_hand_case():
    score = rouge_l("a b c d", "a c")
    assert score.lcs_len == 2
    assert score.precision == 0.5
    assert score.recall == 1.0
    assert score.f1 == pytest.approx(2 * 0.5 * 1.0 / 1.5, abs=1e-12)


def test_rouge_empty_candidate_is_degenerate_not_error():
    score = rouge_l("", "a")
    assert (score.precision, score.recall, score.f1) == (0.0, 0.0, 0.0)
    assert score.degenerate


def random_sentence(rng):
    words = ["car", "wet", "road", "dusk", "truck", "light", "lane", "fog"]
    n = int(rng.integers(1, 10))
    return " ".join(words[int(i)] for i in rng.integers(0, len(words), size=n))


def test_rouge_precision_recall_swap_symmetry(rng):
    for _ in range(100):
        a, b = random_sentence(rng), random_sentence(rng)
        assert rouge_l(a, b).precision == rouge_l(b, a).recall
        assert rouge_l(a, b).recall == rouge_l(b, a).precision


def test_rouge_f1_bounds(rng):
    for _ in range(100):
        s = rouge_l(random_sentence(rng), random_sentence(rng))
        assert s.f1 <= min(2 * s.precision, 2 * s.recall) + 1e-12
        assert s.f1 <= max(s.precision, s.recall) + 1e-12
        if s.precision == s.recall:
            assert s.f1 == pytest.approx(s.precision, abs=1e-12)


# --- mean cosine ---

def test_mean_cosine_identical_lists():
    encode = lambda s: mocks.text_vector(s, 12)  # noqa: E731
    texts = ["a wet road", "a stalled truck", "dense fog"]
    assert mean_cosine_metric(texts, list(texts), encode) == pytest.approx(1.0, abs=1e-12)


def test_mean_cosine_orthogonal_pair():
    table = {"g": np.array([1.0, 0.0]), "r": np.array([0.0, 1.0])}
    assert mean_cosine_metric(["g"], ["r"], table.__getitem__) == 0.0


def test_mean_cosine_is_arithmetic_mean():
    table = {
        "g1": np.array([1.0, 0.0]), "r1": np.array([1.0, 0.0]),      # cos 1.0
        "g2": np.array([1.0, 0.0]), "r2": np.array([0.5, math.sqrt(0.75)]),  # cos 0.5
        "g3": np.array([1.0, 0.0]), "r3": np.array([0.0, 1.0]),      # cos 0.0
    }
    value = mean_cosine_metric(["g1", "g2", "g3"], ["r1", "r2", "r3"], table.__getitem__)
    assert value == pytest.approx(0.5, abs=1e-12)


# --- paired t-test ---

def test_t_test_hand_three_point_case():
    samples = [PairedSample("a", 1, 0), PairedSample("b", 2, 1), PairedSample("c", 4, 2)]
    r = paired_t_test(samples)
    assert r.n == 3
    assert r.mean_diff == pytest.approx(4 / 3, abs=1e-12)
    assert r.sd_diff == pytest.approx(math.sqrt(1 / 3), abs=1e-12)
    assert r.t == pytest.approx(4.0, abs=1e-12)
    assert r.p == pytest.approx(t_two_tailed_p_by_quadrature(4.0, 2), abs=1e-8)


def test_t_test_result_invariant():
    samples = [PairedSample(str(i), float(i) + 0.1 * (i % 3), float(i)) for i in range(6)]
    r = paired_t_test(samples)
    assert r.t == pytest.approx(r.mean_diff / (r.sd_diff / math.sqrt(r.n)), abs=1e-12)


def test_t_test_sign_flip_negates_t_keeps_p(rng):
    samples = [PairedSample(str(i), float(x), float(y))
               for i, (x, y) in enumerate(rng.normal(size=(8, 2)))]
    flipped = [PairedSample(s.label, s.without_rag, s.with_rag) for s in samples]
    a, b = paired_t_test(samples), paired_t_test(flipped)
    assert b.t == pytest.approx(-a.t, abs=1e-12)
    assert b.p == pytest.approx(a.p, abs=1e-12)


def test_t_test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        paired_t_test([PairedSample("only", 1.0, 0.5)])


def test_t_test_degenerate_variance():
    samples = [PairedSample(str(i), float(i) + 2.0, float(i)) for i in range(5)]
    with pytest.raises(DegenerateVarianceError):
        paired_t_test(samples)


def test_p_value_t_table_pins():
    assert student_t_two_tailed_p(2.228, 10) == pytest.approx(0.050, abs=5e-4)
    assert student_t_two_tailed_p(2.764, 10) == pytest.approx(0.020, abs=5e-4)


def test_p_value_matches_quadrature_oracle(rng):
    for _ in range(25):
        t = float(rng.uniform(0.1, 8.0))
        df = int(rng.integers(1, 40))
        assert student_t_two_tailed_p(t, df) == pytest.approx(
            t_two_tailed_p_by_quadrature(t, df), abs=1e-7)


def test_published_grid_reproduces_reported_statistics():
    models = load_metric_grid(FIXTURES / "table2.json")
    tests = grid_t_tests(models)
    assert tests["cosine"].t == pytest.approx(2.4937, abs=1e-3)
    assert tests["f1"].t == pytest.approx(5.0753, abs=1e-3)
    assert tests["precision"].t == pytest.approx(4.5177, abs=1e-3)
    assert tests["recall"].t == pytest.approx(7.0715, abs=1e-3)
    assert tests["cosine"].p == pytest.approx(0.0318, rel=0.05)
    assert tests["f1"].p == pytest.approx(0.0005, rel=0.05)
    assert tests["precision"].p == pytest.approx(0.0011, rel=0.05)
    assert tests["recall"].p == pytest.approx(3.4097e-05, rel=0.05)


# --- relative improvement ---

def test_relative_improvement_published_values():
    assert relative_improvement(0.7081, 0.6730) == pytest.approx(5.22, abs=0.01)
    assert relative_improvement(0.1988, 0.1276) == pytest.approx(55.80, abs=0.01)


def test_relative_improvement_identity_is_zero():
    assert relative_improvement(0.37, 0.37) == 0.0


def test_relative_improvement_zero_baseline_rejected():
    with pytest.raises(DegenerateInputError):
        relative_improvement(0.5, 0.0)


# --- comparison runs ---

def seeded_corpus_store(tmp_path, n=4, dim=16):
    """Store where case i's image segment hashes the exact PNG the corpus uses."""
    store = StorePair(dim, dim)
    corpus = []
    captions = [
        "unmarked construction barrier blocking the rightmost lane",
        "overturned cargo trailer spilling boxes across the road",
        "cyclist weaving between stalled vehicles near the crossing",
        "temporary traffic signal mounted on a yellow portable mast",
    ][:n]
    for i, caption in enumerate(captions):
        raster = solid_raster(((i * 53) % 256, (i * 97) % 256, (i * 31) % 256), 20, 14)
        png = encode_png(raster)
        ref = tmp_path / f"case_{i}.png"
        ref.write_bytes(png)
        cm = CrossModalEmbedding(mocks.image_vector(png, dim),
                                 mocks.text_vector(caption, dim))
        store.insert(str(ref), caption, cm, mocks.text_vector(caption, dim))
        corpus.append((raster, caption))
    return store, corpus


def test_with_rag_recall_strictly_exceeds_baseline(tmp_path):
    store, corpus = seeded_corpus_store(tmp_path)
    with MockModelServer(16, 16, generator_reply=lambda p: "ECHO:" + p) as server:
        report = run_comparison(
            corpus, store,
            generator=GeneratorEndpoint(server.base_url),
            multimodal=EncoderEndpoint(server.base_url, "multimodal"),
            text_encoder=lambda s: mocks.text_vector(s, 16),
            alpha=0.0, arms=("with", "without"))
    means_with = report.arms["with"].means()
    means_without = report.arms["without"].means()
    assert means_with["recall"] > means_without["recall"]
    # the echoed prompt ends with the retrieved caption == reference
    assert means_with["recall"] == pytest.approx(1.0, abs=1e-12)
    block = report.t_tests["with_vs_without"]
    assert block["recall"].n == 4


def test_single_item_corpus_marks_t_test_insufficient(tmp_path):
    store, corpus = seeded_corpus_store(tmp_path, n=1)
    with MockModelServer(16, 16, generator_reply=lambda p: "ECHO:" + p) as server:
        report = run_comparison(
            corpus[:1], store,
            generator=GeneratorEndpoint(server.base_url),
            multimodal=EncoderEndpoint(server.base_url, "multimodal"),
            text_encoder=lambda s: mocks.text_vector(s, 16),
            alpha=0.0, arms=("with", "without"))
    block = report.t_tests["with_vs_without"]
    assert block["cosine"] == {"error": "insufficient_data", "n": 1}
    assert report.provenance["n_items"] == 1


def test_concat_off_ablation_sends_uncomposited_image(tmp_path):
    store, corpus = seeded_corpus_store(tmp_path, n=2)
    from PIL import Image
    import base64
    import io

    with MockModelServer(16, 16, generator_reply=lambda p: "ECHO:" + p) as server:
        run_comparison(
            corpus, store,
            generator=GeneratorEndpoint(server.base_url),
            multimodal=EncoderEndpoint(server.base_url, "multimodal"),
            text_encoder=lambda s: mocks.text_vector(s, 16),
            alpha=0.0, arms=("ablation_no_concat", "with"))
        generate_calls = [r for r in server.requests if r["path"] == "/generate"]

    sizes = []
    for call in generate_calls:
        img = Image.open(io.BytesIO(base64.b64decode(call["payload"]["image"])))
        sizes.append(img.size)
    # first two calls: no-concat arm sends the bare 20x14 input;
    # last two: composite is 20 + 10 + 20 wide
    assert sizes[:2] == [(20, 14), (20, 14)]
    assert sizes[2:] == [(50, 14), (50, 14)]
    prompts = [c["payload"]["prompt"] for c in generate_calls]
    assert all("Description of the right scenario:" in p for p in prompts)


def test_generator_failures_are_recorded_as_skips(tmp_path):
    store, corpus = seeded_corpus_store(tmp_path, n=2)
    with MockModelServer(16, 16, generator_reply="") as server:  # empty output
        report = run_comparison(
            corpus, store,
            generator=GeneratorEndpoint(server.base_url),
            multimodal=EncoderEndpoint(server.base_url, "multimodal"),
            text_encoder=lambda s: mocks.text_vector(s, 16),
            alpha=0.0, arms=("with",))
    arm = report.arms["with"]
    assert arm.items == []
    assert len(arm.skipped) == 2
    assert all(s["error"] == "EmptyOutputError" for s in arm.skipped)


def test_report_serializes_to_json(tmp_path):
    store, corpus = seeded_corpus_store(tmp_path, n=3)
    with MockModelServer(16, 16, generator_reply=lambda p: "ECHO:" + p) as server:
        report = run_comparison(
            corpus, store,
            generator=GeneratorEndpoint(server.base_url),
            multimodal=EncoderEndpoint(server.base_url, "multimodal"),
            text_encoder=lambda s: mocks.text_vector(s, 16),
            alpha=0.0, arms=("with", "without", "ablation_no_head", "ablation_no_concat"))
    parsed = json.loads(report.to_json())
    assert set(parsed["arms"]) == {"with", "without", "ablation_no_head", "ablation_no_concat"}
    assert "config_hash" in parsed["provenance"]
    assert parsed["provenance"]["store_checksum"] == store.content_checksum()
