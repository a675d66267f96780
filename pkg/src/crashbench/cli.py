"""Command-line orchestrator.

    crashbench --config exp.yaml pipeline            # full loop
    crashbench --config exp.yaml curate              # one stage
    crashbench --config exp.yaml pipeline --schedule 0   # run forever
    crashbench --config exp.yaml serve --port 8800

Global flags override the corresponding config fields. Exit codes:
0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigError, CrashBenchError, StageFailed
from .pipeline import STAGES, run_pipeline, schedule_loop

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crashbench")
    parser.add_argument("--config", required=True, help="experiment config file (YAML/JSON)")
    parser.add_argument("--corpus", help="override corpus path")
    parser.add_argument("--experiment", help="override experiment name")
    parser.add_argument("--backend", choices=["sim", "remote"], help="override backend")
    parser.add_argument("--seed", type=int, help="override experiment seed")

    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--force", action="store_true", help="overwrite despite config drift")

    p = sub.add_parser("pipeline", help="run several stages in order")
    p.add_argument("--stages", help=f"comma list from: {','.join(STAGES)} (default: all)")
    p.add_argument("--force", action="store_true")
    p.add_argument(
        "--schedule",
        type=int,
        metavar="N",
        help="keep re-running on the configured interval; 0 = forever, N = passes",
    )

    p = sub.add_parser("serve", help="serve the dashboard API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--ui", help="directory with built dashboard assets to serve at /")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "corpus": args.corpus,
        "experiment": args.experiment,
        "backend": args.backend,
        "seed": args.seed,
    }
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        if args.command == "serve":
            import uvicorn

            from .api import create_app
            from .store import ResultStore

            app = create_app(ResultStore(config.store), ui_dir=args.ui)
            uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
            return EXIT_OK

        if args.command == "pipeline":
            if args.schedule is not None:
                schedule_loop(config, iterations=args.schedule or None)
                return EXIT_OK
            stages = args.stages.split(",") if args.stages else None
            summary = run_pipeline(config, stages=stages, force=args.force)
        else:
            summary = run_pipeline(config, stages=[args.command], force=args.force)
    except StageFailed as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CrashBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE

    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
