"""Command-line entry point: ``ttstack <verb> [--config PATH] [--output DIR] [--seed N]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import workflow
from .config import MetaConfig, load_run_config
from .errors import ConfigError, CorpusError, TTStackError
from .synthetic import DEFAULT_COUNTS, write_synthetic

log = logging.getLogger("ttstack")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="flat key = value run config")
    p.add_argument("--output", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="root seed (overrides seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttstack", description="Two-tier transformer stacking ensemble")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-synthetic", help="write a synthetic two-class PGM corpus")
    g.add_argument("--output", type=Path, required=True, help="corpus root to create")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--negatives", type=int, default=DEFAULT_COUNTS[0])
    g.add_argument("--positives", type=int, default=DEFAULT_COUNTS[1])
    g.add_argument("--size", type=int, default=32)

    _common(sub.add_parser("train-base", help="train every configured base learner"))

    e = sub.add_parser("extract-logits", help="write logit CSVs from trained checkpoints")
    _common(e)
    e.add_argument("--split", choices=["train", "val", "all"], default="all")

    for verb, text in (("train-meta", "fit the meta-learner from logit CSVs"),
                       ("evaluate", "reports for every learner and the stack")):
        p = sub.add_parser(verb, help=text)
        _common(p, config_required=False)
        p.add_argument("--train-logits", type=Path, help="defaults to <output>/logits/train.csv")
        p.add_argument("--val-logits", type=Path, help="defaults to <output>/logits/val.csv")

    _common(sub.add_parser("run-all", help="train-base, extract-logits, train-meta, evaluate"))
    return parser


def _run_config(args):
    return load_run_config(args.config, seed_override=args.seed, output_override=args.output)


def _out_and_rc(args):
    if args.config is not None:
        rc = _run_config(args)
        return rc.output_dir, rc
    if args.output is None:
        raise ConfigError("either --config or --output is required")
    return args.output, None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "gen-synthetic":
            ds = write_synthetic(args.output, {0: args.negatives, 1: args.positives}, args.size, args.seed)
            log.info("wrote %d images to %s (counts %s)", len(ds), args.output, ds.class_counts)
        elif args.verb == "train-base":
            workflow.train_base(_run_config(args))
        elif args.verb == "extract-logits":
            splits = ("train", "val") if args.split == "all" else (args.split,)
            workflow.extract_logits(_run_config(args), splits)
        elif args.verb == "train-meta":
            out, rc = _out_and_rc(args)
            _, report = workflow.train_meta(out, rc.meta if rc else MetaConfig(), args.train_logits,
                                            args.val_logits, rc)
            log.info("stack validation: acc=%.6f precision=%.6f recall=%.6f f1=%.6f auc=%.6f",
                     report.accuracy, report.precision, report.recall, report.f1, report.roc_auc)
        elif args.verb == "evaluate":
            out, rc = _out_and_rc(args)
            workflow.evaluate(out, args.train_logits, args.val_logits, rc)
            print((Path(out) / "comparison.csv").read_text(), end="")
        elif args.verb == "run-all":
            workflow.run_all(_run_config(args))
            print((_run_config(args).output_dir / "comparison.csv").read_text(), end="")
    except TTStackError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return CorpusError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
