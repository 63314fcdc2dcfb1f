"""Command line: run a pipeline, manage cards, replay transcripts, serve HTTP.

Exit codes for `run`: 0 success, 2 configuration error, 3 guard refusal,
4 pipeline failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import EngineConfig
from .errors import ConfigError, EmptyQuery, NotFound, UniPilotError
from .pipeline import Engine
from .registry import FixtureCardSource, HubCardSource
from .replay import verify_replay
from .report import write_report
from .session import Status

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REFUSED = 3
EXIT_FAILED = 4


def _load_config(args) -> EngineConfig:
    config = EngineConfig.load(args.config)
    overrides = {}
    for name in ("budget", "strategy", "seed", "executor"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "interactive", False):
        overrides["interactive"] = True
    if getattr(args, "headless", False):
        overrides["interactive"] = False
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def cmd_run(args) -> int:
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dataset and not Path(args.dataset).exists():
        print(f"config error: dataset not found: {args.dataset}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        engine = Engine(config)
        runtime = engine.new_session(args.query, dataset_path=args.dataset)
    except (ConfigError, EmptyQuery) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    session = runtime.session
    while session.status in (Status.Running, Status.AwaitingUser):
        if session.status is Status.Running:
            runtime.run_stage()
            continue
        if not config.interactive:
            break
        briefing = next((e for e in reversed(session.transcript)
                         if e.kind == "StageBriefing"), None)
        if briefing:
            print(f"\n[{briefing.payload['completed']} done] {briefing.payload['text']}")
        try:
            text = input("directive (enter to continue): ").strip()
        except EOFError:
            text = ""
        runtime.resume(text or None)

    if session.status is Status.Refused:
        print(f"refused: {session.inputs.get('refusal_reason', '')}", file=sys.stderr)
        return EXIT_REFUSED
    if session.status is not Status.Completed:
        last_error = next((e for e in reversed(session.transcript)
                           if e.kind == "Error"), None)
        message = last_error.payload.get("message") if last_error else session.status.value
        print(f"pipeline failed: {message}", file=sys.stderr)
        return EXIT_FAILED

    out_dir = Path(args.out or "report")
    report_path = write_report(session, out_dir)
    print(f"report written to {report_path}")
    print(f"session stored at {engine.store.session_dir(session.session_id)}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    try:
        config = EngineConfig.load(args.config)
        engine = Engine(config)
        if args.fixture:
            source = FixtureCardSource(args.fixture)
        elif args.hub:
            source = HubCardSource(args.hub, task_tag=args.tag)
        else:
            print("ingest needs --fixture PATH or --hub URL", file=sys.stderr)
            return EXIT_CONFIG
        changed = engine.registry.ingest(source)
    except UniPilotError as exc:
        print(f"ingest failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{changed} cards ingested or refreshed")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        config = EngineConfig.load(args.config)
        verdict = verify_replay(config, args.path)
    except (ConfigError, NotFound) as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(verdict.message)
    if verdict.detail:
        print(verdict.detail, file=sys.stderr)
    return EXIT_OK if verdict.ok else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    try:
        config = EngineConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    app = create_app(config)
    uvicorn.run(app, host=args.host or config.host, port=args.port or config.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unipilot",
                                     description="conversational AutoML pipeline engine")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one pipeline from a query")
    run.add_argument("--config", help="engine config JSON (or $UNIPILOT_CONFIG)")
    run.add_argument("--query", required=True)
    run.add_argument("--dataset", help="CSV/TSV file or image directory")
    run.add_argument("--out", help="report output directory")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--headless", action="store_true")
    mode.add_argument("--interactive", action="store_true")
    run.add_argument("--budget", type=int)
    run.add_argument("--strategy", choices=["grid", "random"])
    run.add_argument("--seed", type=int)
    run.add_argument("--executor", choices=["mock", "subprocess"])
    run.set_defaults(func=cmd_run)

    ingest = sub.add_parser("ingest", help="ingest model cards into the registry")
    ingest.add_argument("--config", help="engine config JSON")
    ingest.add_argument("--fixture", help="directory of card JSON files")
    ingest.add_argument("--hub", help="model hub base URL")
    ingest.add_argument("--tag", help="task tag filter for hub listing")
    ingest.set_defaults(func=cmd_ingest)

    replay = sub.add_parser("replay", help="verify a stored session transcript")
    replay.add_argument("--config", help="engine config JSON")
    replay.add_argument("path", help="session directory or its transcript.jsonl")
    replay.set_defaults(func=cmd_replay)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", help="engine config JSON")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
