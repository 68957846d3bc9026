"""Command-line entry point.

    drjudge <subcommand> --config CONFIG [--seed N] [--out DIR] [--jobs N]

Subcommands: ingest, project, measure, train, evaluate, rank, metamap,
serve. Exit codes: 0 success, 2 validation error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import NumericalError, ValidationError
from .pipeline import (PipelineConfig, cmd_evaluate, cmd_ingest, cmd_measure,
                       cmd_metamap, cmd_project, cmd_rank, cmd_train)

SUBCOMMANDS = ("ingest", "project", "measure", "train", "evaluate", "rank",
               "metamap", "serve")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drjudge",
                                     description="Projection quality pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", required=True, help="TOML or JSON config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="artifact root (overrides "
                       "DRJUDGE_DATA_DIR and config data_dir)")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel metric workers per dataset")
        if name == "evaluate":
            p.add_argument("--grouping", choices=("by_dataset", "by_technique"),
                           default="by_dataset")
        if name == "rank":
            p.add_argument("--model", default="ranker")
        if name == "serve":
            p.add_argument("--host", default="127.0.0.1")
            p.add_argument("--port", type=int, default=8000)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = PipelineConfig.load(args.config, data_dir_override=args.out,
                              seed_override=args.seed)
    if args.command == "ingest":
        ids = cmd_ingest(cfg)
        print(f"ingested {len(ids)} dataset(s): {', '.join(ids)}")
    elif args.command == "project":
        produced = cmd_project(cfg)
        for ds, ids in produced.items():
            print(f"{ds}: {len(ids)} embeddings")
    elif args.command == "measure":
        measured = cmd_measure(cfg, jobs=args.jobs)
        for ds, n in measured.items():
            print(f"{ds}: measured {n} embeddings")
    elif args.command == "train":
        for kind in cmd_train(cfg):
            print(f"trained {kind}")
    elif args.command == "evaluate":
        for kind, report in cmd_evaluate(cfg, grouping=args.grouping).items():
            print(f"{kind} {report.scheme}: mean={report.mean:.4f} "
                  f"ci95=[{report.ci95_low:.4f}, {report.ci95_high:.4f}]")
    elif args.command == "rank":
        for ds, n in cmd_rank(cfg, model_id=args.model).items():
            print(f"{ds}: ranked {n} embeddings")
    elif args.command == "metamap":
        for ds in cmd_metamap(cfg):
            print(f"{ds}: metamap written")
    elif args.command == "serve":
        import uvicorn

        from .service import create_app
        uvicorn.run(create_app(cfg), host=args.host, port=args.port)
    return 0


def main() -> None:
    try:
        sys.exit(run())
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        sys.exit(3)


if __name__ == "__main__":
    main()
