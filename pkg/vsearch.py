#!/usr/bin/env python3
"""
Vehicle search command line.

    python vsearch.py build-dataset --source-kind toy --source-root data/toy --spec configs/build_toy.yaml --out data/build
    python vsearch.py pretrain-tokens --config configs/toy.yaml
    python vsearch.py pretrain-teacher --config configs/toy.yaml
    python vsearch.py train --config configs/toy.yaml --ablation full
    python vsearch.py search --config configs/toy.yaml --checkpoint runs/toy/checkpoints/step_0000040.pt
    python vsearch.py eval --detections runs/toy/detections.jsonl --query-embeddings runs/toy/query_embeddings.jsonl
    python vsearch.py index-gallery --detections runs/toy/detections.jsonl --manifest data/build/test.jsonl
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import orjson
from dotenv import load_dotenv

logger = logging.getLogger("vsearch")


def _setup_logging(command: str) -> None:
    log_dir = os.getenv("LOG_DIR", "logs")
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(log_dir, f'{command}.log')),
            logging.StreamHandler()
        ]
    )


def _load_config(args):
    from training.config import load_config

    overrides = list(args.set or [])
    if getattr(args, "ablation", None):
        overrides.append(f"losses.ablation={args.ablation}")
    config = load_config(args.config, overrides)
    if getattr(args, "output_dir", None):
        config = config.model_copy(update={"output_dir": args.output_dir})
    return config


def _encoders(config):
    from providers.encoders import build_encoders

    return build_encoders(**config.encoders.model_dump())


def _train_data(config):
    from datamodel.manifest import load_manifest
    from training.data import resolve_image_root

    manifest = load_manifest(config.data.path("train_manifest"))
    return manifest, resolve_image_root(config.data.build_dir, config.data.image_root)


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2) + b"\n")
    return path


# ---------------------------------------------------------------- commands


def cmd_build_dataset(args) -> int:
    from etl.build_dataset import BuildSpec, DatasetBuilder, write_build
    from providers.tracking import load_tracking_source

    start = time.time()
    spec = BuildSpec.load(Path(args.spec))
    source = load_tracking_source(args.source_kind, args.source_root)
    builder = DatasetBuilder(spec)
    outputs = builder.build(source)
    write_build(outputs, Path(args.out))
    builder.print_stats(time.time() - start)
    return 0


def cmd_pretrain_tokens(args) -> int:
    from prompts.bank import save_bank
    from prompts.token_learning import pretrain_id_tokens

    config = _load_config(args)
    manifest, image_root = _train_data(config)
    text_encoder, image_encoder = _encoders(config)
    history = []
    bank = pretrain_id_tokens(
        manifest, image_root, image_encoder, text_encoder, epochs=args.epochs, config=config.prompts, history=history
    )
    out = Path(args.out or Path(config.output_dir) / "prompt_bank.pt")
    save_bank(bank, out)
    _write_json(out.with_suffix(".history.json"), history)
    logger.info(f"Saved prompt bank for {bank.num_identities} identities to {out}")
    if history:
        logger.info(f"token loss {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}")
    return 0


def cmd_pretrain_teacher(args) -> int:
    from training.stage1 import pretrain_teacher, save_teacher

    config = _load_config(args)
    manifest, image_root = _train_data(config)
    history = []
    teacher = pretrain_teacher(manifest, image_root, config=config.teacher, epochs=args.epochs, history=history)
    out = Path(args.out or Path(config.output_dir) / "teacher.pt")
    save_teacher(teacher, out)
    _write_json(out.with_suffix(".history.json"), history)
    logger.info(f"Saved re-ID teacher to {out}")
    return 0


def cmd_train(args) -> int:
    from prompts.bank import load_bank
    from training.stage1 import load_teacher
    from training.stage2 import Stage2Trainer

    config = _load_config(args)
    manifest, image_root = _train_data(config)
    text_encoder, _ = _encoders(config)

    bank_path = Path(args.bank or Path(config.output_dir) / "prompt_bank.pt")
    bank = load_bank(bank_path, text_encoder, config.prompts.attribute_words) if bank_path.exists() else None
    teacher = None
    if config.losses.toggles.mil_fea:
        teacher = load_teacher(args.teacher or Path(config.output_dir) / "teacher.pt")

    start = time.time()
    if args.resume:
        trainer = Stage2Trainer.resume(args.resume, config, manifest, teacher, text_encoder, image_root, bank)
    else:
        if bank is None:
            logger.error(f"No prompt bank at {bank_path}; run pretrain-tokens first")
            return 1
        trainer = Stage2Trainer(config, manifest, bank, teacher, text_encoder, image_root)
    state = trainer.train(args.max_steps)
    trainer.print_stats(time.time() - start)
    logger.info(f"Last checkpoint: {state.last_checkpoint}")
    return 0


def cmd_search(args) -> int:
    from datamodel.manifest import load_manifest, load_queries
    from evaluation.io import format_report, write_detections, write_query_embeddings, write_report
    from training.data import resolve_image_root
    from training.search import run_search

    config = _load_config(args)
    gallery_manifest = load_manifest(config.data.path("test_manifest"))
    queries = load_queries(config.data.path("queries"), gallery_manifest)
    image_root = resolve_image_root(config.data.build_dir, config.data.image_root)

    run = run_search(
        args.checkpoint,
        queries,
        gallery_manifest,
        image_root,
        Path(config.data.build_dir),
        eval_config=config.eval,
        skip_missing=args.skip_missing,
        device=config.device,
    )
    out_dir = Path(args.out or config.output_dir)
    write_detections(run.gallery, out_dir / "detections.jsonl")
    write_query_embeddings(run.query_embeddings, out_dir / "query_embeddings.jsonl")
    write_report(run.report, out_dir, stem="search_report")
    print(format_report(run.report))
    return 0


def cmd_eval(args) -> int:
    from datamodel.manifest import load_manifest, load_queries
    from evaluation.io import format_report, read_detections, read_query_embeddings, write_report
    from evaluation.report import EncodedQuery, evaluate

    config = _load_config(args)
    gt = load_manifest(args.gt or config.data.path("test_manifest"))
    records = load_queries(args.queries or config.data.path("queries"), gt)
    gallery = read_detections(args.detections)
    gallery.check_against(gt)
    embeddings = read_query_embeddings(args.query_embeddings)

    missing = [q.query_id for q in records if q.query_id not in embeddings]
    if missing:
        logger.warning(f"{len(missing)} queries have no embedding and are skipped: {missing[:5]}")
    encoded = [EncodedQuery(q, embeddings[q.query_id]) for q in records if q.query_id in embeddings]

    report = evaluate(encoded, gallery, gt, config.eval)
    write_report(report, Path(args.out or config.output_dir), stem="eval_report")
    print(format_report(report))
    return 0


def cmd_index_gallery(args) -> int:
    from datamodel.manifest import load_manifest
    from evaluation.io import read_detections
    from indexers.gallery import index_gallery

    gallery = read_detections(args.detections)
    manifest = load_manifest(args.manifest)
    gallery.check_against(manifest)
    created = index_gallery(gallery, manifest, index=args.index, model_tag=args.model_tag)
    logger.info(f"Indexed {created} detections from {len(gallery.frames)} frames")
    return 0


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "pretrain-tokens": cmd_pretrain_tokens,
    "pretrain-teacher": cmd_pretrain_teacher,
    "train": cmd_train,
    "search": cmd_search,
    "eval": cmd_eval,
    "index-gallery": cmd_index_gallery,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Joint vehicle detection and re-identification')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p):
        p.add_argument('--config', help='YAML training config')
        p.add_argument('--set', action='append', metavar='KEY=VALUE',
                       help='Override a config value, e.g. --set optim.lr=0.003 (repeatable)')
        p.add_argument('--output-dir', help='Overrides output_dir of the config')
        return p

    p = sub.add_parser('build-dataset', help='Build train/test manifests and queries from a tracking source')
    p.add_argument('--source-kind', choices=['cityflow', 'synthehicle', 'generic', 'toy'], required=True)
    p.add_argument('--source-root', required=True)
    p.add_argument('--spec', required=True, help='YAML build spec')
    p.add_argument('--out', required=True)

    p = with_config(sub.add_parser('pretrain-tokens', help='Stage 1: learn identity prompt tokens'))
    p.add_argument('--epochs', type=int)
    p.add_argument('--out', help='Bank file (default <output_dir>/prompt_bank.pt)')

    p = with_config(sub.add_parser('pretrain-teacher', help='Stage 1: train the crop re-ID teacher'))
    p.add_argument('--epochs', type=int)
    p.add_argument('--out', help='Teacher file (default <output_dir>/teacher.pt)')

    p = with_config(sub.add_parser('train', help='Stage 2: joint detection and identification training'))
    p.add_argument('--ablation', help='Loss preset: baseline, obj, id, sra, img, box, fea, mil, full')
    p.add_argument('--bank', help='Prompt bank from pretrain-tokens')
    p.add_argument('--teacher', help='Teacher from pretrain-teacher')
    p.add_argument('--resume', help='Checkpoint to resume from')
    p.add_argument('--max-steps', type=int)

    p = with_config(sub.add_parser('search', help='Encode the gallery and queries with a checkpoint and evaluate'))
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--skip-missing', action='store_true', help='Skip frames and crops whose image file is missing')
    p.add_argument('--out')

    p = with_config(sub.add_parser('eval', help='Evaluate a detections file against ground truth'))
    p.add_argument('--detections', required=True)
    p.add_argument('--query-embeddings', required=True)
    p.add_argument('--gt', help='Ground-truth manifest (default: test manifest of the config)')
    p.add_argument('--queries', help='Query list (default: queries of the config)')
    p.add_argument('--out')

    p = sub.add_parser('index-gallery', help='Bulk-index a detections file into Elasticsearch')
    p.add_argument('--detections', required=True)
    p.add_argument('--manifest', required=True, help='Manifest the detections were computed on')
    p.add_argument('--index', help='Index name (default GALLERY_INDEX)')
    p.add_argument('--model-tag', default='', help='Stored with each document and prefixed to its id')

    return parser


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    _setup_logging(args.command.replace('-', '_'))
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return 2


if __name__ == '__main__':
    sys.exit(main())
