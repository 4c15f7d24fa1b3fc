"""Command-line entry point: ``hvt train|eval|gradcheck|synth|version``.

Exit codes: 0 success, 1 configuration error, 2 data or file-format error,
3 numeric failure (NaN, failed gradient check). Tabular output is
tab-separated with a header row.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from . import __version__
from . import checkpoint as ckpt_io
from . import gradcheck
from .config import load_config
from .data import SPLIT_FILES, load_split, synth_hierarchy, write_split
from .errors import ConfigError, DataError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("hvt")


def _fmt(v) -> str:
    if v is None:
        return "-"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _row(*cols) -> str:
    return "\t".join(_fmt(c) for c in cols)


def _has_split(data_dir: str, split: str) -> bool:
    return all(os.path.exists(os.path.join(data_dir, f)) for f in SPLIT_FILES[split])


def cmd_train(args) -> int:
    from .plotting import plot_training_curves
    from .train import train

    cfg = load_config(args.config)
    train_ds = load_split(args.data, "train")
    eval_ds = load_split(args.data, "test") if _has_split(args.data, "test") else None
    res = train(cfg, train_ds, epochs=args.epochs, eval_data=eval_ds, out_dir=args.out)
    print(_row("epoch", "train_loss", "train_accuracy", "eval_top1", "eval_top5", "learning_rate", "wall_time"))
    for r in res.metrics.records:
        print(_row(r.epoch, r.train_loss, r.train_accuracy, r.eval_top1, r.eval_top5, r.learning_rate,
                   r.wall_time))
    if res.metrics.records:
        png = plot_training_curves(res.metrics, os.path.join(args.out, "training_curves.png"))
        print(f"# figure: {png}")
    print(f"# checkpoint: {os.path.join(args.out, 'checkpoint.hvt')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate

    try:
        ck = ckpt_io.load(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    split = args.split
    scores = evaluate(ck, load_split(args.data, split))
    print(_row("split", "top1", "top5"))
    print(_row(split, scores["top1"], scores["top5"]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run(args.module, seed=args.seed)
    print(_row("module", "check", "rel_error", "tol", "status"))
    for r in results:
        print(_row(r.module, r.name, f"{r.error:.3e}", f"{r.tol:.0e}", "pass" if r.passed else "FAIL"))
    failed = [r for r in results if not r.passed]
    print(f"# {len(results) - len(failed)}/{len(results)} passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_synth(args) -> int:
    test_n = args.test_per_class if args.test_per_class is not None else max(1, args.per_class // 4)
    for split, n in (("train", args.per_class), ("test", test_n)):
        ds = synth_hierarchy(args.classes, n, image_size=args.image_size, seed=args.seed, split=split)
        write_split(args.out, split, ds)
        print(_row(split, len(ds), os.path.join(args.out, SPLIT_FILES[split][0])))
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"hvt {__version__}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hvt", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on an IDX dataset directory")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--data", required=True, help="directory with train-*.idx (and optionally test-*.idx)")
    p.add_argument("--out", required=True, help="output directory for metrics, figure and checkpoints")
    p.add_argument("--epochs", type=int, default=None, help="override the config's epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1/top-5 accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=sorted(SPLIT_FILES), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", choices=("all",) + gradcheck.MODULES, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic hierarchical dataset as IDX files")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--test-per-class", type=int, default=None, help="default: per-class // 4")
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=cmd_version)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error in op '{exc.op}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
