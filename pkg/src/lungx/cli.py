"""Command-line entry point: ``lungx {synth,train,eval,cam,gradcheck}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .checkpoint import CheckpointError, load_checkpoint
from .config import TrainConfig, coerce, load_config
from .data.manifest import ManifestError, load_manifest
from .data.pgm import ImageFormatError, read_pgm, write_pgm, write_ppm
from .data.synth import SyntheticSpec, synth_dataset

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lungx", description="Hybrid CNN-transformer pneumonia classifier toolkit.")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and results")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a seeded synthetic dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--negatives", type=int, default=50)
    s.add_argument("--positives", type=int, default=50)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--max-blobs", type=int, default=2)
    s.add_argument("--noise", type=float, default=0.03)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train and write best.ckpt + log.csv")
    t.add_argument("--config", type=Path, help="flat TOML file of training keys")
    t.add_argument("--data", required=True, type=Path, help="manifest CSV")
    t.add_argument("--val", type=Path, help="validation manifest (default: stratified split of --data)")
    t.add_argument("--out", required=True, type=Path)
    for f in dataclasses.fields(TrainConfig):
        t.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar="V",
                       help=f"(default {getattr(TrainConfig, f.name)})")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--out", type=Path, help="metrics CSV (default: eval_metrics.csv next to the checkpoint)")

    c = sub.add_parser("cam", help="write Grad-CAM heatmap (PGM) and overlay (PPM)")
    c.add_argument("--ckpt", required=True, type=Path)
    c.add_argument("--image", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)

    g = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--only", nargs="*", default=[], help="restrict to these check names")
    return p


def _train_config(args) -> TrainConfig:
    base = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for f in dataclasses.fields(TrainConfig):
        raw = getattr(args, f"cfg_{f.name}")
        if raw is not None:
            try:
                overrides[f.name] = coerce(f.name, raw, type(getattr(TrainConfig, f.name)))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
    return dataclasses.replace(base, **overrides)


def cmd_synth(args) -> int:
    spec = SyntheticSpec(image_size=args.size, negatives=args.negatives, positives=args.positives,
                         max_blobs=args.max_blobs, noise=args.noise, seed=args.seed)
    path = synth_dataset(spec, args.out)
    print(f"wrote {args.negatives + args.positives} images and {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import split_manifest, train

    config = _train_config(args)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = load_manifest(args.data)
    if args.val is not None:
        train_m, val_m = data, load_manifest(args.val)
    else:
        train_m, val_m = split_manifest(data, config.val_fraction, config.seed)
    result = train(config, train_m, val_m, args.out)
    best = result.best
    print(f"best epoch {best.epoch}: val AUC {best.metrics.auc}")
    print(f"wrote {args.out / 'best.ckpt'} and {args.out / 'log.csv'}")
    return EXIT_OK


def _ckpt_train_config(ckpt) -> TrainConfig:
    raw = ckpt.extra.get("train_config")
    return TrainConfig.from_dict(raw) if raw else TrainConfig(image_size=ckpt.config.image_size)


def cmd_eval(args) -> int:
    from .train import ImageSet, evaluate_model

    ckpt = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.data)
    if len(manifest) == 0:
        raise ManifestError(f"{args.data}: manifest is empty")
    rep = evaluate_model(ckpt.build_model(), ImageSet(manifest), _ckpt_train_config(ckpt))
    rows = [("accuracy", rep.accuracy), ("precision", rep.precision), ("recall", rep.recall),
            ("f1", rep.f1), ("auc", rep.auc), ("loss", rep.loss),
            ("tp", rep.counts.tp), ("fp", rep.counts.fp), ("tn", rep.counts.tn), ("fn", rep.counts.fn)]
    labels = {"accuracy": "ACC", "precision": "PREC", "recall": "REC", "f1": "F1", "auc": "AUC"}
    for key, value in rows[:5]:
        shown = "undefined (single class)" if value is None else f"{value:.4f}"
        print(f"{labels[key]:5s} {shown}")
    print(f"counts tp={rep.counts.tp} fp={rep.counts.fp} tn={rep.counts.tn} fn={rep.counts.fn}")
    out = args.out or args.ckpt.parent / "eval_metrics.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value"))
        for key, value in rows:
            w.writerow((key, "" if value is None else repr(value)))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_cam(args) -> int:
    from .cam import grad_cam, overlay
    from .data.augment import eval_array, normalize

    ckpt = load_checkpoint(args.ckpt)
    cfg = _ckpt_train_config(ckpt)
    model = ckpt.build_model()
    gray = eval_array(read_pgm(args.image), cfg.image_size, cfg.eval_resize_ratio)
    res = grad_cam(model, normalize(gray, cfg.norm_mean, cfg.norm_std))
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.image.stem
    write_pgm(args.out / f"{stem}_cam.pgm", res.heatmap)
    write_ppm(args.out / f"{stem}_overlay.ppm", overlay(gray, res.upsampled))
    print(f"p(pneumonia) = {res.probability:.4f}")
    print(f"wrote {args.out / (stem + '_cam.pgm')} and {args.out / (stem + '_overlay.ppm')}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(args.seed, args.only)
    if args.only and len(results) != len(set(args.only)):
        raise UsageError(f"unknown check name among {args.only}")
    failed = 0
    for r in results:
        status = "PASS" if r.report.passed else "FAIL"
        failed += not r.report.passed
        print(f"{status} {r.name:26s} max rel err {r.report.max_rel_error:.3e}  ({r.seconds:.2f}s)")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "cam": cmd_cam,
            "gradcheck": cmd_gradcheck}


def main(argv: Optional[List[str]] = None) -> int:
    from .train import TrainingError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lungx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, ManifestError, ImageFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"lungx: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
