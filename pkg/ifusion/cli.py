"""
Command line entry point.

    ifusion simulate --n 1000 --drop-rate 0.5 --seed 7 --out plan.json
    ifusion train --config cfg.json --set training.epochs=3 --out runs/demo
    ifusion eval --checkpoint runs/demo/best.pt --drop-rate 0.5 --out runs/demo/eval
    ifusion sweep --checkpoint runs/demo/best.pt --out runs/demo/sweep
    ifusion estimate --checkpoint runs/demo/best.pt --out runs/demo/scatter.csv
    ifusion report --predictions runs/demo/eval/predictions.csv --baseline base.csv --out rep

Exit code 0 on success. Any ifusion error exits 1 with {"error": {...}} on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

from . import tool
from .config import RunConfig, load_config
from .exceptions import IFusionError

logger = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser, *, config: bool) -> None:
    p.add_argument("--seed", type=int, default=None, help="Override the run seed")
    p.add_argument("--out", default=None, help="Output path or directory")
    if config:
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Dotted override, e.g. training.lr=2e-4 (repeatable)",
        )


def _config(args: argparse.Namespace) -> RunConfig:
    overrides: List[str] = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"training.seed={args.seed}")
    if getattr(args, "out", None) and args.command == "train":
        overrides.append(f"output_dir={json.dumps(args.out)}")
    return load_config(args.config, overrides)


def _cmd_simulate(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(args)
    return tool.simulate(
        n=args.n,
        drop_rate=cfg.missingness.drop_rate if args.drop_rate is None else args.drop_rate,
        seed=cfg.training.seed,
        steps=cfg.data.synthetic.steps,
        intra_ratio=cfg.missingness.intra_ratio if args.intra_ratio is None else args.intra_ratio,
        out=args.out,
        archive_out=args.archive_out,
        config=cfg,
    )


def _cmd_train(args: argparse.Namespace) -> Dict[str, Any]:
    return tool.train_run(_config(args), db_path=args.db, resume=args.resume)


def _cmd_eval(args: argparse.Namespace) -> Dict[str, Any]:
    return tool.evaluate(
        args.checkpoint,
        out=args.out or "eval",
        archive=args.archive,
        drop_rate=args.drop_rate,
        mode=args.mode,
        seed=args.seed,
        db_path=args.db,
    )


def _cmd_sweep(args: argparse.Namespace) -> Dict[str, Any]:
    return tool.sweep(
        args.checkpoint,
        out=args.out or "sweep",
        archive=args.archive,
        seed=args.seed,
        db_path=args.db,
    )


def _cmd_estimate(args: argparse.Namespace) -> Dict[str, Any]:
    return tool.estimate(
        args.checkpoint,
        out=args.out or "scatter.csv",
        archive=args.archive,
        drop_rate=args.drop_rate,
        seed=args.seed,
    )


def _cmd_report(args: argparse.Namespace) -> Dict[str, Any]:
    return tool.report(
        args.predictions,
        out=args.out or "report",
        baseline=args.baseline,
        metrics=args.metrics,
        own_tol=args.own_tol,
        base_tol=args.base_tol,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ifusion", description="Integrity-aware multimodal sentiment regression"
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Draw a missingness plan")
    _add_common(p, config=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--drop-rate", type=float, default=None)
    p.add_argument("--intra-ratio", type=float, default=None)
    p.add_argument("--archive-out", default=None, help="Also write synthetic feature archives")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="Two-stage training")
    _add_common(p, config=True)
    p.add_argument("--resume", default=None, help="Checkpoint to resume from")
    p.add_argument("--db", default=":memory:", help="SQLite run record")
    p.set_defaults(func=_cmd_train)

    for name, func, help_text in (
        ("eval", _cmd_eval, "Metrics under one drop rate or retention mode"),
        ("sweep", _cmd_sweep, "Drop-rate sweep and retention modes"),
        ("estimate", _cmd_estimate, "Integrity scatter report"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p, config=False)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--archive", default=None, help="Feature archive directory")
        if name == "eval":
            group = p.add_mutually_exclusive_group()
            group.add_argument("--drop-rate", type=float, default=None)
            group.add_argument("--mode", type=int, default=None, choices=range(6))
        if name == "estimate":
            p.add_argument("--drop-rate", type=float, default=None)
        if name != "estimate":
            p.add_argument("--db", default=":memory:", help="SQLite run record")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="Case filter and reference comparison")
    _add_common(p, config=False)
    p.add_argument("--predictions", required=True, help="CSV with id,prediction,label")
    p.add_argument("--baseline", default=None, help="CSV with id,prediction")
    p.add_argument("--metrics", default=None, help="metrics.csv to compare with the reference")
    p.add_argument("--own-tol", type=float, default=0.25)
    p.add_argument("--base-tol", type=float, default=1.0)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    func: Callable[[argparse.Namespace], Dict[str, Any]] = args.func
    try:
        response = func(args)
    except IFusionError as e:
        print(json.dumps({"error": e.to_dict()}, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(response, sort_keys=True, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
