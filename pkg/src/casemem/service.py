"""HTTP facade over the engine: query-and-generate, ingestion, correction.

Stage errors map to a structured body {"stage", "message", "retriable"} so
callers can tell a decode failure from an encoder outage. Writes are
serialized through the store's writer lock; reads run under the shared
side, and generation always happens outside any lock.
"""

from __future__ import annotations

import io
import uuid
from pathlib import Path

from fastapi import FastAPI, File, Form, Query, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from . import augmentation, embeddings, gateway, retrieval, store as store_mod
from .embeddings import ProjectionHead
from .errors import (
    DataError,
    EmptyOutputError,
    EmptyStoreError,
    EngineError,
    NotFoundError,
    PreconditionError,
    SchemaError,
    TransportError,
)
from .gateway import EncoderEndpoint
from .store import SOURCE_HUMAN, SOURCE_SEED, StorePair

_STATUS_BY_ERROR = [
    (PreconditionError, 400),
    (NotFoundError, 404),
    (EmptyStoreError, 409),
    (TransportError, 502),
    (EmptyOutputError, 502),
    (SchemaError, 500),
    (DataError, 500),
    (EngineError, 500),
]


def _error_response(stage: str, exc: Exception, status: int | None = None) -> JSONResponse:
    if status is None:
        status = 500
        for cls, code in _STATUS_BY_ERROR:
            if isinstance(exc, cls):
                status = code
                break
    retriable = bool(getattr(exc, "retriable", False))
    return JSONResponse(status_code=status, content={
        "stage": stage, "message": str(exc), "retriable": retriable})


class _Staged(Exception):
    def __init__(self, stage: str, exc: Exception, status: int | None = None):
        self.stage = stage
        self.exc = exc
        self.status = status


def _stage(stage: str, fn, *args, status: int | None = None, **kwargs):
    try:
        return fn(*args, **kwargs)
    except EngineError as exc:
        raise _Staged(stage, exc, status) from exc


class CorrectionRequest(BaseModel):
    corrected_caption: str
    operator_id: str = "anonymous"
    case_index: int | None = None


def create_app(store: StorePair, *,
               multimodal: EncoderEndpoint,
               text: EncoderEndpoint,
               generator: augmentation.GeneratorEndpoint,
               head: ProjectionHead | None = None,
               alpha_default: float = 0.5,
               store_dir=None,
               work_dir=None) -> FastAPI:
    """Build the FastAPI app around one loaded store.

    When ``store_dir`` is set every acknowledged write is persisted there
    before the response goes out. ``work_dir`` (default: a sibling of
    store_dir or a temp-style ./casemem_work) receives uploaded case images
    and generated composites.
    """
    app = FastAPI(title="casemem", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    work = Path(work_dir) if work_dir else (
        Path(store_dir) / "work" if store_dir else Path("casemem_work"))
    assets = work / "assets"
    scratch = work / "composites"
    assets.mkdir(parents=True, exist_ok=True)
    scratch.mkdir(parents=True, exist_ok=True)

    state = app.state
    state.store = store
    state.head = head if head is not None else ProjectionHead.identity(store.dim_img)
    state.multimodal = multimodal
    state.text = text
    state.generator = generator
    state.alpha_default = alpha_default
    state.store_dir = Path(store_dir) if store_dir else None

    def persist_if_configured():
        if state.store_dir is not None:
            store_mod.persist(state.store, state.store_dir)

    @app.exception_handler(_Staged)
    async def staged_handler(request: Request, exc: _Staged):
        return _error_response(exc.stage, exc.exc, exc.status)

    def _decode_upload(data: bytes) -> bytes:
        try:
            Image.open(io.BytesIO(data)).verify()
        except (UnidentifiedImageError, OSError) as exc:
            raise _Staged("decode", PreconditionError(f"image not decodable: {exc}"), 400)
        return data

    @app.get("/health")
    def health():
        st: StorePair = state.store
        with st.lock.read_locked():
            return {
                "status": "ok",
                "size": len(st),
                "dims": list(st.dims),
                "checksum": st.content_checksum(),
                "alpha_default": state.alpha_default,
                "endpoints": {
                    "multimodal": state.multimodal.base_url,
                    "text": state.text.base_url,
                    "generator": state.generator.base_url,
                },
            }

    @app.post("/query")
    async def run_query(image: UploadFile = File(...),
                        alpha: float | None = Query(default=None),
                        k: int = Query(default=1)):
        data = _decode_upload(await image.read())
        a = state.alpha_default if alpha is None else alpha
        cfg = _stage("validate", retrieval.QueryConfig, alpha=a, k=k, status=400)

        q = _stage("embed", gateway.embed_image, data, state.multimodal,
                   dim=state.store.dim_img)
        q = _stage("project", embeddings.project, q, state.head)

        st: StorePair = state.store
        with st.lock.read_locked():
            results = _stage("query", retrieval.query, q, cfg, st)
            record, _, _ = st.get(results[0].index)
        exemplar = _stage("asset", retrieval.load_case_image, record)

        composite = _stage("concatenate", augmentation.concatenate, data, exemplar)
        prompt = _stage("prompt", augmentation.build_prompt, record.caption)
        generated = _stage("generate", augmentation.generate, composite, prompt,
                           state.generator)

        name = f"composite_{uuid.uuid4().hex}.png"
        (scratch / name).write_bytes(composite.to_png())

        best = results[0]
        return {
            "retrieval": {
                "index": best.index,
                "combined": best.combined,
                "img_similarity": best.img_similarity,
                "text_similarity": best.text_similarity,
            },
            "results": [vars(r) for r in results],
            "retrieved_caption": record.caption,
            "retrieved_image_ref": record.image_ref,
            "generated_description": generated,
            "composite_ref": f"/composites/{name}",
        }

    @app.post("/cases")
    async def add_case(image: UploadFile = File(...),
                       caption: str = Form(...),
                       source: str = Form(default=SOURCE_SEED)):
        data = _decode_upload(await image.read())
        if not caption:
            raise _Staged("validate", PreconditionError("caption must be non-empty"), 400)
        if source not in (SOURCE_SEED, SOURCE_HUMAN):
            raise _Staged("validate", PreconditionError(f"unknown source {source!r}"), 400)

        cm = _stage("embed", gateway.embed_pair, data, caption, state.multimodal,
                    dim_img=state.store.dim_img, dim_txt=state.store.dim_txt)
        tv = _stage("embed", gateway.embed_text, caption, state.text,
                    dim=state.store.dim_txt)

        st: StorePair = state.store
        with st.lock.write_locked():
            index = len(st)
            asset_path = assets / f"case_{index:06d}_{uuid.uuid4().hex[:8]}.png"
            asset_path.write_bytes(data)
            try:
                _stage("insert", st.insert, str(asset_path), caption, cm, tv, source)
            except _Staged:
                asset_path.unlink(missing_ok=True)
                raise
            persist_if_configured()
        return {"index": index}

    @app.post("/cases/{index}/correct")
    def correct_case(index: int, body: CorrectionRequest):
        if not body.corrected_caption:
            raise _Staged("validate", PreconditionError("corrected caption must be non-empty"), 400)
        st: StorePair = state.store
        with st.lock.read_locked():
            if not 0 <= index < len(st):
                raise _Staged("lookup", NotFoundError(f"case {index} does not exist"), 404)
        tv = _stage("embed", gateway.embed_text, body.corrected_caption, state.text,
                    dim=st.dim_txt)
        with st.lock.write_locked():
            revision = _stage("correct", st.correct_caption, index,
                              body.corrected_caption, tv)
            persist_if_configured()
        return {"index": index, "revision": revision}

    @app.get("/cases")
    def list_cases(source: str | None = Query(default=None)):
        st: StorePair = state.store
        with st.lock.read_locked():
            records = st.records()
        if source is not None:
            records = [r for r in records if r.source == source]
        return {"cases": [r.manifest_entry() for r in records]}

    @app.get("/cases/{index}")
    def get_case(index: int):
        st: StorePair = state.store
        with st.lock.read_locked():
            try:
                record, _, _ = st.get(index)
            except NotFoundError as exc:
                raise _Staged("lookup", exc, 404)
        return record.manifest_entry()

    @app.get("/cases/{index}/image")
    def get_case_image(index: int):
        st: StorePair = state.store
        with st.lock.read_locked():
            try:
                record, _, _ = st.get(index)
            except NotFoundError as exc:
                raise _Staged("lookup", exc, 404)
        data = _stage("asset", retrieval.load_case_image, record)
        return Response(content=data, media_type="image/png")

    @app.get("/composites/{name}")
    def get_composite(name: str):
        path = scratch / Path(name).name
        if not path.exists():
            raise _Staged("asset", NotFoundError(f"no composite {name}"), 404)
        return Response(content=path.read_bytes(), media_type="image/png")

    return app
