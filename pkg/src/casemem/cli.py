"""Command-line entry points.

    casemem ingest  --pairs batch.cmb --db store_dir
    casemem query   --db store_dir --image x.png --alpha 0.5 --k 3
    casemem train   --pairs batch.cmb --out head.bin [--tau ...]
    casemem eval    --corpus dir --db store_dir --report out.json [--mock]
    casemem stats   --fixture fixtures/table2.json
    casemem serve   --db store_dir --port 8000 [--mock]
    casemem serve-mocks --port 8900

The corpus directory for ``eval`` holds image files with same-stem ``.txt``
reference captions. ``--precomputed-vector`` for ``query`` takes a JSON
file {"vector": [...]} so no encoder service is needed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augmentation, evaluation, gateway, mocks, retrieval, store as store_mod, trainer
from .embeddings import DEFAULT_DIM
from .errors import EngineError, PreconditionError


def _cmd_ingest(args) -> int:
    rows = gateway.load_precomputed(args.pairs)
    if not rows:
        print("batch file is empty; nothing to ingest", file=sys.stderr)
        return 1
    dim_img, dim_txt = rows[0][1].dims
    store = store_mod.StorePair(dim_img, dim_txt)
    for record, cm, tv in rows:
        store.insert(record.image_ref, record.caption, cm, tv, record.source)
    store_mod.persist(store, args.db)
    print(f"ingested {len(store)} cases into {args.db} (dims {store.dims})")
    return 0


def _query_vector(args, store) -> np.ndarray:
    if args.precomputed_vector:
        try:
            payload = json.loads(Path(args.precomputed_vector).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise PreconditionError(f"cannot read query vector file: {exc}") from exc
        if "vector" not in payload:
            raise PreconditionError("query vector file needs a 'vector' key")
        return np.asarray(payload["vector"], dtype=np.float64)
    if not args.multimodal_url:
        raise PreconditionError("need --multimodal-url or --precomputed-vector")
    endpoint = gateway.EncoderEndpoint(args.multimodal_url, "multimodal")
    return gateway.embed_image(Path(args.image).read_bytes(), endpoint,
                               dim=store.dim_img)


def _cmd_query(args) -> int:
    store = store_mod.load(args.db)
    q = _query_vector(args, store)
    if args.head:
        q = trainer.load_head(args.head).weights @ q
    cfg = retrieval.QueryConfig(alpha=args.alpha, k=args.k)
    for result in retrieval.query(q, cfg, store):
        record, _, _ = store.get(result.index)
        print(json.dumps({
            "index": result.index,
            "combined": result.combined,
            "img_similarity": result.img_similarity,
            "text_similarity": result.text_similarity,
            "caption": record.caption,
        }))
    return 0


def _cmd_train(args) -> int:
    rows = gateway.load_precomputed(args.pairs)
    dataset = [(cm.image_segment, tv) for _, cm, tv in rows]
    cfg = trainer.TrainConfig(
        tau=args.tau, margin=args.margin, eta=args.lr, epochs=args.epochs,
        batch_size=args.batch_size, use_semi_hard=args.semi_hard,
        semi_hard_switch_fraction=args.switch_fraction, seed=args.seed)
    report = trainer.train(dataset, cfg)
    trainer.save_head(report.final_head, args.out)
    for epoch, loss in enumerate(report.loss_per_epoch):
        print(f"epoch {epoch}: loss {loss:.6f} mined {report.mined_counts[epoch]}")
    print(f"head written to {args.out}")
    return 0


def _cmd_stats(args) -> int:
    models = evaluation.load_metric_grid(args.fixture)
    tests = evaluation.grid_t_tests(models)
    for key in evaluation.METRIC_KEYS:
        r = tests[key]
        print(f"{key:10s} t={r.t:.4f} p={r.p:.4g} mean_diff={r.mean_diff:.5f} "
              f"sd_diff={r.sd_diff:.5f} n={r.n}")
    return 0


def _load_corpus(corpus_dir: Path) -> list[tuple[bytes, str]]:
    items = []
    for image_path in sorted(corpus_dir.iterdir()):
        if image_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        caption_path = image_path.with_suffix(".txt")
        if not caption_path.exists():
            print(f"skipping {image_path.name}: no caption file", file=sys.stderr)
            continue
        items.append((image_path.read_bytes(),
                      caption_path.read_text(encoding="utf-8").strip()))
    return items


def _cmd_eval(args) -> int:
    store = store_mod.load(args.db)
    corpus = _load_corpus(Path(args.corpus))
    if not corpus:
        print("no (image, caption) pairs found in corpus dir", file=sys.stderr)
        return 1
    arms = []
    for name in (a.strip() for a in args.arms.split(",") if a.strip()):
        # "ablation" covers both single-mechanism arms
        arms.extend(["ablation_no_head", "ablation_no_concat"] if name == "ablation"
                    else [name])
    head = trainer.load_head(args.head) if args.head else None

    mock_server = None
    try:
        if args.mock:
            mock_server = mocks.MockModelServer(
                store.dim_img, store.dim_txt,
                generator_reply=lambda p: mocks.ECHO_PREFIX + p).start()
            base = mock_server.base_url
            multimodal = gateway.EncoderEndpoint(base, "multimodal")
            text = gateway.EncoderEndpoint(base, "text")
            generator = augmentation.GeneratorEndpoint(base)
        else:
            if not (args.multimodal_url and args.encoder_url and args.generator_url):
                print("need --multimodal-url, --encoder-url and --generator-url "
                      "(or --mock)", file=sys.stderr)
                return 1
            multimodal = gateway.EncoderEndpoint(args.multimodal_url, "multimodal")
            text = gateway.EncoderEndpoint(args.encoder_url, "text")
            generator = augmentation.GeneratorEndpoint(args.generator_url)

        report = evaluation.run_comparison(
            corpus, store, generator=generator, multimodal=multimodal,
            text_encoder=text, alpha=args.alpha, head=head, arms=arms)
    finally:
        if mock_server is not None:
            mock_server.stop()

    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    for name, arm in report.arms.items():
        print(f"{name}: means {arm.means()} ({len(arm.items)} items, "
              f"{len(arm.skipped)} skipped)")
    print(f"report written to {args.report}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    store = store_mod.load(args.db) if Path(args.db, "crossmodal.db").exists() \
        else store_mod.StorePair(args.dim_img, args.dim_txt)

    mock_server = None
    if args.mock:
        mock_server = mocks.MockModelServer(
            store.dim_img, store.dim_txt,
            generator_reply=lambda p: mocks.ECHO_PREFIX + p).start()
        base = mock_server.base_url
        multimodal = gateway.EncoderEndpoint(base, "multimodal")
        text = gateway.EncoderEndpoint(base, "text")
        generator = augmentation.GeneratorEndpoint(base)
        print(f"mock model server at {base}")
    else:
        if not (args.multimodal_url and args.encoder_url and args.generator_url):
            print("need --multimodal-url, --encoder-url and --generator-url "
                  "(or --mock)", file=sys.stderr)
            return 1
        multimodal = gateway.EncoderEndpoint(args.multimodal_url, "multimodal")
        text = gateway.EncoderEndpoint(args.encoder_url, "text")
        generator = augmentation.GeneratorEndpoint(args.generator_url)

    head = trainer.load_head(args.head) if args.head else None
    app = create_app(store, multimodal=multimodal, text=text, generator=generator,
                     head=head, alpha_default=args.alpha_default, store_dir=args.db)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        if mock_server is not None:
            mock_server.stop()
    return 0


def _cmd_serve_mocks(args) -> int:
    server = mocks.MockModelServer(args.dim_img, args.dim_txt,
                                   host=args.host, port=args.port)
    print(f"mock encoder+generator listening on {server.base_url}")
    server.start()
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casemem")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a store directory from a batch file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--db", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("query", help="rank stored cases against a query image")
    p.add_argument("--db", required=True)
    p.add_argument("--image")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--precomputed-vector")
    p.add_argument("--multimodal-url")
    p.add_argument("--head")
    p.set_defaults(fn=_cmd_query)

    p = sub.add_parser("train", help="fit the alignment projection head")
    p.add_argument("--pairs", required=True)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--semi-hard", action="store_true")
    p.add_argument("--switch-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="run comparison/ablation arms over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--arms", default="with,without")
    p.add_argument("--report", required=True)
    p.add_argument("--head")
    p.add_argument("--encoder-url")
    p.add_argument("--multimodal-url")
    p.add_argument("--generator-url")
    p.add_argument("--mock", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("stats", help="paired t-tests over a metric grid fixture")
    p.add_argument("--fixture", default="fixtures/table2.json")
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--db", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--encoder-url")
    p.add_argument("--multimodal-url")
    p.add_argument("--generator-url")
    p.add_argument("--alpha-default", type=float, default=0.5)
    p.add_argument("--head")
    p.add_argument("--mock", action="store_true")
    p.add_argument("--dim-img", type=int, default=DEFAULT_DIM)
    p.add_argument("--dim-txt", type=int, default=DEFAULT_DIM)
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("serve-mocks", help="run the deterministic mock model server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8900)
    p.add_argument("--dim-img", type=int, default=DEFAULT_DIM)
    p.add_argument("--dim-txt", type=int, default=DEFAULT_DIM)
    p.set_defaults(fn=_cmd_serve_mocks)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
