"""Command-line entry point: ``amfmn <subcommand> ...``.

Exit codes: 0 on success, 2 on invalid input, 1 on internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DatasetError, diagnostics_report, load_dataset, make_fixture, similarity_diagnostic, split_hash, split_indices
from .evaluation import MODES, evaluate, rank
from .fusion import VARIANTS
from .locate import DEFAULT_SCALES, emit_heatmap, locate, read_scene
from .loss import MarginParams, margin_curve
from .model import Model, ModelConfig
from .pnm import PnmError
from .tensor import FormatError, ShapeError
from .text import Vocabulary
from .train import TrainConfig, train

log = logging.getLogger("amfmn")

VALIDATION_ERRORS = (ValueError, DatasetError, FormatError, PnmError, ShapeError, FileNotFoundError, KeyError)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scales(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"scales must be comma-separated integers: {text!r}") from exc


def _keywords(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [k.strip() for k in text.split(",") if k.strip()]


def _split(dataset, which: str, seed: int):
    if which == "all":
        return dataset, None
    parts = split_indices(len(dataset), seed)
    return dataset.subset(parts[which]), parts


# ------------------------------------------------------------------ commands

def cmd_fixture(args) -> None:
    ds = make_fixture(args.out, seed=args.seed, n_images=args.images, planted=args.planted,
                      image_size=args.image_size)
    print(f"wrote {len(ds)} images to {args.out}")


def cmd_train(args) -> None:
    dataset = load_dataset(args.data)
    parts = split_indices(len(dataset), args.seed)
    if args.split == "all":
        train_set, val_set = dataset, None
    else:
        train_set, val_set = dataset.subset(parts["train"]), dataset.subset(parts["val"])
    vocab = Vocabulary.build([s for e in dataset.entries for s in e.sentences + e.keywords])
    config = ModelConfig(variant=args.variant, word_dim=args.word_dim, hidden=args.hidden,
                         visual_dim=args.dim, joint_dim=args.dim, image_size=args.image_size,
                         use_mvsa=not args.no_mvsa, use_vga=not args.no_vga, seed=args.seed)
    model = Model.create(config, vocab, dataset.keyword_vocab())
    margin = MarginParams(args.loss, alpha=args.alpha, gamma=args.gamma, beta=args.beta, strategy=args.strategy)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                     margin=margin, mode=args.mode, val_every=1 if val_set is not None and len(val_set) else 0)
    result = train(tc, train_set, model, val=val_set)
    out = Path(args.out)
    model.save(out)
    result.write_csv(out.with_suffix(".history.csv"))
    _write_json(out.with_suffix(".split.json"), {"seed": args.seed, "split": args.split,
                                                 "hash": split_hash(parts), "indices": parts})
    print(f"saved {out}; final loss {result.history[-1]['train_loss']:.6f}")


def cmd_eval(args) -> None:
    model = Model.load(args.ckpt)
    dataset, parts = _split(load_dataset(args.data), args.split, args.seed)
    if not len(dataset):
        raise ValueError(f"split {args.split!r} is empty")
    report = evaluate(model, dataset, args.mode)
    out = report.as_dict()
    out.update(mode=args.mode, seed=args.seed, split=args.split,
               split_hash=split_hash(parts) if parts else None, variant=model.config.variant)
    _write_json(args.report, out)
    with open(Path(args.report).with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["variant", "mode", "split", "seed", "text_r1", "text_r5", "text_r10",
                "image_r1", "image_r5", "image_r10", "mR"]
        w.writerow(cols)
        w.writerow([out[c] if isinstance(out[c], str) else repr(out[c]) for c in cols])
    print(json.dumps({k: out[k] for k in ("text_r1", "image_r1", "mR")}, sort_keys=True))


def cmd_query(args) -> None:
    model = Model.load(args.ckpt)
    corpus = load_dataset(args.corpus)
    feats = model.visual_features([corpus.image_path(e) for e in corpus.entries])
    text = model.prepare_text(args.text, _keywords(args.keywords), derive_keywords=args.keywords is None)
    scores = model.score_matrix(feats, [text])[:, 0]
    hits = [{"rank": r + 1, "image_id": corpus.entries[i].image_id, "score": float(scores[i])}
            for r, i in enumerate(rank(scores)[:args.topk])]
    if args.out:
        _write_json(args.out, {"text": args.text, "keywords": _keywords(args.keywords), "results": hits})
    for h in hits:
        print(f"{h['rank']:3d}  {h['image_id']}  {h['score']:.6f}")


def cmd_locate(args) -> None:
    model = Model.load(args.ckpt)
    scene = read_scene(args.scene)
    values, meta = locate(scene, model, args.query, _keywords(args.keywords), args.scales, args.median,
                          args.extra_rounds)
    meta.update(query=args.query, keywords=_keywords(args.keywords), scene=str(args.scene))
    pgm, side = emit_heatmap(values, args.out, meta)
    y, x = np.unravel_index(int(np.argmax(values)), values.shape)
    print(f"wrote {pgm} and {side}; peak at x={x} y={y}")


def cmd_diagnose(args) -> None:
    dataset = load_dataset(args.data)
    report = diagnostics_report(dataset, args.sample, args.seed)
    _write_json(args.out, report)
    diag = similarity_diagnostic(dataset, args.sample, args.seed)
    out = Path(args.out)
    with open(out.with_suffix(".matrix.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["own_image"] + [e.image_id for e in dataset.entries])
        for own, row in zip(diag.own_image, diag.matrix):
            w.writerow([dataset.entries[own].image_id] + [repr(float(v)) for v in row])
    emit_heatmap(diag.matrix, out.with_suffix(".matrix.pgm"), {"rows": "sampled captions", "cols": "images"})
    print(f"diversity {report['diversity_score']:.4f}  average similarity {report['average_similarity']:.4f}")


def cmd_margins(args) -> None:
    curve = margin_curve(args.gamma, args.beta, args.samples)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["S", "alpha_ct"])
        for s, a in curve:
            w.writerow([repr(s), repr(a)])
    print(f"wrote {args.samples} samples to {args.out}")


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amfmn", description="Remote-sensing text-image matching toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fixture", help="write a synthetic dataset")
    f.add_argument("--seed", type=int, default=7)
    f.add_argument("--images", type=int, default=64)
    f.add_argument("--planted", action="store_true")
    f.add_argument("--image-size", type=int, default=256)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fixture)

    t = sub.add_parser("train", help="train the projection heads")
    t.add_argument("--data", required=True)
    t.add_argument("--variant", choices=VARIANTS, default="soft")
    t.add_argument("--loss", choices=("fixed", "dynamic"), default="dynamic")
    t.add_argument("--alpha", type=float, default=0.2)
    t.add_argument("--gamma", type=float, default=0.6)
    t.add_argument("--beta", type=float, default=5.0)
    t.add_argument("--strategy", choices=("all", "hardest"), default="hardest")
    t.add_argument("--epochs", type=int, default=150)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--mode", choices=MODES, default="joint")
    t.add_argument("--split", choices=("train", "all"), default="train",
                   help="train on the 80%% split (validating on 10%%) or on every image")
    t.add_argument("--word-dim", type=int, default=300)
    t.add_argument("--hidden", type=int, default=512)
    t.add_argument("--dim", type=int, default=512, help="visual and joint embedding size")
    t.add_argument("--image-size", type=int, default=256)
    t.add_argument("--no-mvsa", action="store_true", help="ablation: use the raw global visual vector")
    t.add_argument("--no-vga", action="store_true", help="ablation: skip visual guidance of text")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report R@K and mR")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--mode", choices=MODES, default="sentence")
    e.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    e.add_argument("--seed", type=int, default=0, help="split seed")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("query", help="rank corpus images for a text query")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--corpus", required=True)
    q.add_argument("--text", required=True)
    q.add_argument("--keywords", help="comma-separated keyword phrases")
    q.add_argument("--topk", type=int, default=10)
    q.add_argument("--seed", type=int, default=0, help="accepted for uniformity; querying is deterministic")
    q.add_argument("--out", help="optional JSON result file")
    q.set_defaults(func=cmd_query)

    lo = sub.add_parser("locate", help="text-driven localization in a large scene")
    lo.add_argument("--ckpt", required=True)
    lo.add_argument("--scene", required=True)
    lo.add_argument("--query", required=True)
    lo.add_argument("--keywords", help="comma-separated keyword phrases")
    lo.add_argument("--scales", type=_scales, default=list(DEFAULT_SCALES))
    lo.add_argument("--median", type=int, default=3)
    lo.add_argument("--extra-rounds", action="store_true", help="add x-only and y-only half-offset grids")
    lo.add_argument("--seed", type=int, default=0, help="accepted for uniformity; localization is deterministic")
    lo.add_argument("--out", required=True)
    lo.set_defaults(func=cmd_locate)

    d = sub.add_parser("diagnose", help="dataset diversity and similarity diagnostics")
    d.add_argument("--data", required=True)
    d.add_argument("--sample", type=int, default=200)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    m = sub.add_parser("margins", help="tabulate the dynamic margin curve")
    m.add_argument("--gamma", type=float, default=0.5)
    m.add_argument("--beta", type=float, default=4.0)
    m.add_argument("--samples", type=int, default=101)
    m.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the curve is deterministic")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_margins)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
