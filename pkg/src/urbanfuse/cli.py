"""Command-line orchestration of the pipeline.

    urbanfuse <stage> [--config FILE] [--seed N] [--out-dir DIR] [--set key=value ...]

Stages: synth, featurize, graph, embed, train, evaluate, fuse-search,
route.  Configuration is a TOML file over built-in defaults, with dotted
``--set`` overrides on top; the seed is mandatory and nothing falls back
to the wall clock.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from urbanfuse.core import UrbanFuseError
from urbanfuse.pipeline import STAGES, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urbanfuse",
        description="Multimodal classification pipeline for citizen-reported urban micro-events.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name, fn in STAGES.items():
        stage = sub.add_parser(name, help=(fn.__doc__ or "").strip() or None)
        stage.add_argument("--config", help="TOML config file", default=None)
        stage.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        stage.add_argument("--out-dir", default=None, help="run directory (overrides config)")
        stage.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, e.g. --set embed.dims=64",
        )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            config_path=args.config,
            overrides=tuple(args.overrides),
            seed=args.seed,
            out_dir=args.out_dir,
        )
        summary = STAGES[args.stage](cfg)
    except UrbanFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
