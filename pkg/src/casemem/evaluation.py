"""Hallucination-mitigation metrics and paired significance tests.

Three measurement layers:
  - text overlap: ROUGE-L precision/recall/F1 via longest common subsequence;
  - semantic proximity: mean cosine similarity of generated vs reference
    embeddings from a text encoder;
  - significance: paired t-test over per-item (or per-model) metric
    differences, two-tailed p from the Student t distribution computed with
    a continued-fraction regularized incomplete beta (abs error ~1e-9).

``run_comparison`` drives whole evaluation arms (full pipeline, baseline,
and the two single-mechanism ablations) over a corpus and emits a report.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import augmentation, gateway, retrieval
from .embeddings import ProjectionHead
from .errors import (
    DegenerateInputError,
    DegenerateVarianceError,
    EngineError,
    InsufficientDataError,
    PreconditionError,
)
from .store import StorePair

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumeric characters, drop empties."""
    return _TOKEN_RE.findall(text.lower())


def lcs_length(x: Sequence, y: Sequence) -> int:
    """Longest common subsequence length, O(|x| * |y|) dynamic programming."""
    if not x or not y:
        return 0
    prev = [0] * (len(y) + 1)
    for xi in x:
        curr = [0] * (len(y) + 1)
        for j, yj in enumerate(y, start=1):
            if xi == yj:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


@dataclass(frozen=True)
class RougeLScore:
    precision: float
    recall: float
    f1: float
    lcs_len: int
    cand_len: int
    ref_len: int
    degenerate: bool = False


def rouge_l(candidate: str, reference: str) -> RougeLScore:
    """ROUGE-L over tokenized inputs.

    precision = LCS / |candidate|, recall = LCS / |reference|,
    f1 = 2PR / (P + R). Zero-token inputs yield all-zero scores flagged
    degenerate instead of raising, so corpus runs survive empty generations.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return RougeLScore(0.0, 0.0, 0.0, 0, len(cand), len(ref), degenerate=True)
    lcs = lcs_length(cand, ref)
    p = lcs / len(cand)
    r = lcs / len(ref)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeLScore(p, r, f1, lcs, len(cand), len(ref))


def mean_cosine_metric(generated: Sequence[str], references: Sequence[str],
                       text_encoder) -> float:
    """Arithmetic mean of pairwise embedding cosines.

    ``text_encoder`` is either an EncoderEndpoint or any callable mapping a
    string to a vector.
    """
    if len(generated) != len(references) or not generated:
        raise PreconditionError("generated and reference lists must be equal-length, non-empty")
    if callable(text_encoder):
        encode = text_encoder
    else:
        encode = lambda s: gateway.embed_text(s, text_encoder)  # noqa: E731
    total = 0.0
    for i, (g, r) in enumerate(zip(generated, references)):
        try:
            total += retrieval.cosine(encode(g), encode(r))
        except EngineError as exc:
            raise type(exc)(f"pair {i}: {exc}") from exc
    return total / len(generated)


# ---------------------------------------------------------------------------
# Student t machinery

def _betacf(a: float, b: float, x: float, eps: float = 1e-14,
            max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to roughly 1e-9 absolute over the t-test range."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for T ~ Student t with df degrees of freedom."""
    if df < 1:
        raise PreconditionError("degrees of freedom must be >= 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class PairedSample:
    label: str
    with_rag: float
    without_rag: float


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    mean_diff: float
    sd_diff: float
    n: int


def paired_t_test(samples: Sequence[PairedSample]) -> TTestResult:
    """Paired t-test on with/without differences, two-tailed p, df = n - 1."""
    n = len(samples)
    if n < 2:
        raise InsufficientDataError(f"paired t-test needs n >= 2, got {n}")
    d = np.array([s.with_rag - s.without_rag for s in samples], dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise PreconditionError("paired samples contain non-finite values")
    mean = float(d.mean())
    sd = float(math.sqrt(((d - mean) ** 2).sum() / (n - 1)))
    if sd == 0.0:
        raise DegenerateVarianceError("all paired differences are identical")
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=student_t_two_tailed_p(t, n - 1),
                       mean_diff=mean, sd_diff=sd, n=n)


def relative_improvement(with_rag: float, without_rag: float) -> float:
    """Percent change of the with-retrieval arm over the baseline arm."""
    if without_rag == 0.0:
        raise DegenerateInputError("relative improvement undefined for zero baseline")
    return 100.0 * (with_rag - without_rag) / without_rag


# ---------------------------------------------------------------------------
# Fixture grid (per-model metric table) helpers

METRIC_KEYS = ("cosine", "f1", "precision", "recall")


def load_metric_grid(path) -> list[dict]:
    """Load the per-model with/without metric grid fixture."""
    from .errors import FormatError

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read metric grid {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"metric grid {path} is not valid JSON: {exc}") from exc
    if "models" not in data:
        raise FormatError(f"metric grid {path} has no 'models' key")
    return data["models"]


def grid_t_tests(models: list[dict]) -> dict[str, TTestResult]:
    """One paired t-test per metric across the model grid."""
    out = {}
    for key in METRIC_KEYS:
        samples = [PairedSample(m["name"], m["with_rag"][key], m["without_rag"][key])
                   for m in models]
        out[key] = paired_t_test(samples)
    return out


# ---------------------------------------------------------------------------
# Comparative / ablation runs

@dataclass(frozen=True)
class ArmSpec:
    """One evaluation configuration: retrieval on/off, head on/off, concat on/off."""

    name: str
    use_rag: bool = True
    use_head: bool = True
    use_concat: bool = True


STANDARD_ARMS = {
    "with": ArmSpec("with", True, True, True),
    "without": ArmSpec("without", False, False, False),
    "ablation_no_head": ArmSpec("ablation_no_head", True, False, True),
    "ablation_no_concat": ArmSpec("ablation_no_concat", True, True, False),
}


@dataclass
class ItemScore:
    item: int
    cosine: float
    precision: float
    recall: float
    f1: float
    generated: str


@dataclass
class ArmResult:
    name: str
    items: list[ItemScore] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    def means(self) -> dict:
        if not self.items:
            return {k: None for k in METRIC_KEYS}
        return {k: float(np.mean([getattr(it, k) for it in self.items]))
                for k in METRIC_KEYS}


@dataclass
class EvalReport:
    arms: dict
    t_tests: dict
    provenance: dict

    def to_json(self) -> str:
        def arm_block(arm: ArmResult) -> dict:
            return {"means": arm.means(),
                    "items": [asdict(it) for it in arm.items],
                    "skipped": arm.skipped}

        def test_block(block) -> dict:
            return {k: (asdict(v) if isinstance(v, TTestResult) else v)
                    for k, v in block.items()}

        return json.dumps({
            "provenance": self.provenance,
            "arms": {name: arm_block(arm) for name, arm in self.arms.items()},
            "t_tests": {pair: test_block(block) for pair, block in self.t_tests.items()},
        }, indent=2)


def run_comparison(corpus, store: StorePair, *,
                   generator: augmentation.GeneratorEndpoint,
                   multimodal: gateway.EncoderEndpoint,
                   text_encoder,
                   alpha: float = 0.5,
                   head: ProjectionHead | None = None,
                   arms: Sequence[str] = ("with", "without"),
                   seed: int = 0) -> EvalReport:
    """Evaluate every requested arm over the corpus and attach paired t-tests.

    corpus: list of (image bytes-or-raster, reference caption). Items are
    evaluated sequentially in index order so reports are deterministic.
    Generator failures are recorded per item and skipped, not fatal.
    """
    if not corpus:
        raise PreconditionError("corpus must be non-empty")
    if any(name not in STANDARD_ARMS for name in arms):
        unknown = [n for n in arms if n not in STANDARD_ARMS]
        raise PreconditionError(f"unknown arms {unknown}; choose from {sorted(STANDARD_ARMS)}")
    cfg = retrieval.QueryConfig(alpha=alpha, k=1)
    active_head = head if head is not None else ProjectionHead.identity(store.dim_img)

    if callable(text_encoder):
        encode = text_encoder
    else:
        encode = lambda s: gateway.embed_text(s, text_encoder)  # noqa: E731

    def generate_for(spec: ArmSpec, image, reference) -> str:
        raster = augmentation.as_raster(image)
        if not spec.use_rag:
            return augmentation.baseline_generate(raster, generator)
        q = gateway.embed_image(augmentation.encode_png(raster), multimodal)
        if spec.use_head:
            q = active_head.weights @ q
        best = retrieval.query(q, cfg, store)[0]
        record, _, _ = store.get(best.index)
        prompt = augmentation.build_prompt(record.caption)
        if not spec.use_concat:
            return augmentation.generate_single(raster, prompt, generator)
        exemplar = retrieval.load_case_image(record)
        composite = augmentation.concatenate(raster, exemplar)
        return augmentation.generate(composite, prompt, generator)

    results: dict[str, ArmResult] = {}
    for name in arms:
        spec = STANDARD_ARMS[name]
        arm = ArmResult(name=name)
        for i, (image, reference) in enumerate(corpus):
            try:
                generated = generate_for(spec, image, reference)
            except EngineError as exc:
                arm.skipped.append({"item": i, "error": type(exc).__name__,
                                    "message": str(exc)})
                continue
            score = rouge_l(generated, reference)
            cos = retrieval.cosine(encode(generated), encode(reference))
            arm.items.append(ItemScore(item=i, cosine=cos, precision=score.precision,
                                       recall=score.recall, f1=score.f1,
                                       generated=generated))
        results[name] = arm

    t_tests: dict[str, dict] = {}
    names = list(results)
    for a_idx in range(len(names)):
        for b_idx in range(a_idx + 1, len(names)):
            a, b = results[names[a_idx]], results[names[b_idx]]
            pair_key = f"{a.name}_vs_{b.name}"
            by_item_b = {it.item: it for it in b.items}
            shared = [(it, by_item_b[it.item]) for it in a.items if it.item in by_item_b]
            block = {}
            for key in METRIC_KEYS:
                samples = [PairedSample(f"item{x.item}", getattr(x, key), getattr(y, key))
                           for x, y in shared]
                try:
                    block[key] = paired_t_test(samples)
                except InsufficientDataError:
                    block[key] = {"error": "insufficient_data", "n": len(samples)}
                except DegenerateVarianceError:
                    block[key] = {"error": "degenerate_variance", "n": len(samples)}
            t_tests[pair_key] = block

    config_repr = json.dumps({"alpha": alpha, "arms": list(arms), "seed": seed,
                              "head_dims": [active_head.dim_out, active_head.dim_in]},
                             sort_keys=True)
    provenance = {
        "config_hash": hashlib.sha256(config_repr.encode()).hexdigest(),
        "store_checksum": store.content_checksum(),
        "store_size": len(store),
        "seed": seed,
        "n_items": len(corpus),
    }
    return EvalReport(arms=results, t_tests=t_tests, provenance=provenance)
