"""Command-line entry point.

    tapsb run --app NAME [app flags] [--executor KIND ...] [--config FILE]
    tapsb bench makespan|scaling|transfer [...] --output PREFIX
    tapsb store --bind HOST:PORT
    tapsb serve --run-dir DIR
    tapsb failures --list

Exit status: 0 on success, 1 when a run fails, 2 for usage and validation
errors.
"""
import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from .errors import RegistrationError, TapsbError
from .harness import LOG_FORMAT, build_app_config, default_run_root, load_run_config, run_app
from .registry import app_names, get_app_config
from .schemas import AppSpec, FilterSpec, RunConfig

logger = logging.getLogger(__name__)

EXECUTOR_KINDS = ["serial", "thread-pool", "worker-pool", "latency-sim"]
USAGE_ERROR = 2
RUN_ERROR = 1
FAILURE_APP = "failures"
DEFAULT_FAILURE_BASE = "synthetic"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _csv(cast):
    def parse(text: str) -> List[Any]:
        return [cast(item) for item in text.split(",") if item.strip()]
    return parse


def _is_mapping(annotation) -> bool:
    origin = getattr(annotation, "__origin__", None)
    return annotation is dict or origin is dict


def add_app_options(parser: argparse.ArgumentParser, config_cls,
                    dest_prefix: str = "app__") -> None:
    """One --flag per AppConfig field; values are coerced by pydantic later.

    A field whose flag is taken by a run option gets ``--<app>-<field>``.
    """
    group = parser.add_argument_group(f"{config_cls.app_name} options")
    for name, field in config_cls.model_fields.items():
        if name == "seed":
            continue
        kwargs: Dict[str, Any] = {"dest": f"{dest_prefix}{name}", "default": argparse.SUPPRESS}
        if _is_mapping(field.annotation):
            kwargs["type"] = json.loads
            kwargs["metavar"] = "JSON"
        default = field.get_default(call_default_factory=True)
        kwargs["help"] = f"default: {default!r}"
        try:
            group.add_argument(_flag(name), **kwargs)
        except argparse.ArgumentError:
            group.add_argument(_flag(f"{config_cls.app_name}_{name}"), **kwargs)


def add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--app", help="application to run")
    parser.add_argument("--config", help="saved config.json to start from")
    parser.add_argument("--executor", choices=EXECUTOR_KINDS)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--inner", choices=["serial", "thread-pool", "worker-pool"],
                        help="executor behind latency-sim")
    parser.add_argument("--sched-latency", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--bandwidth", type=float, help="latency-sim bytes per second")
    parser.add_argument("--max-payload", type=int, help="latency-sim payload limit in bytes")
    parser.add_argument("--transformer", choices=["none", "file", "store"])
    parser.add_argument("--store-addr", default=os.getenv("TAPSB_STORE_ADDR"))
    parser.add_argument("--filter", help="never, always, min-size:BYTES or type-tag:TAG[,TAG]")
    parser.add_argument("--record-sink", choices=["jsonl", "sqlite", "null"])
    parser.add_argument("--run-dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--repeat", type=int)


def _executor_data(args, base: Dict[str, Any]) -> Dict[str, Any]:
    data = dict(base)
    if args.executor is not None and args.executor != data.get("kind"):
        data = {"kind": args.executor}
    if data.get("kind") == "latency-sim":
        inner = dict(data.get("inner") or {"kind": "thread-pool"})
        if args.inner is not None:
            inner["kind"] = args.inner
        if args.workers is not None:
            inner["workers"] = args.workers
        data["inner"] = inner
        for name in ("sched_latency", "batch_size", "bandwidth", "max_payload"):
            if getattr(args, name) is not None:
                data[name] = getattr(args, name)
    elif args.workers is not None:
        data["workers"] = args.workers
    return data


def build_run_config(args, saved: Optional[Dict[str, Any]] = None,
                     app_name: Optional[str] = None,
                     base_name: Optional[str] = None) -> RunConfig:
    """Merge defaults, a saved config and command-line flags, in that order.

    ``base_name`` is the application wrapped by failure injection; its flags
    arrive as ``base__<field>`` and land in ``base_params``.
    """
    data: Dict[str, Any] = json.loads(json.dumps(saved or {}))
    app = data.setdefault("app", {})
    app_name = app_name or args.app
    if app_name and app.get("name") not in (None, app_name):
        if app_name == FAILURE_APP and app.get("name") == base_name:
            app["params"] = {"base": base_name, "base_params": app.get("params", {})}
        else:
            app["params"] = {}
    if app_name:
        app["name"] = app_name
    params = app.setdefault("params", {})
    if base_name is not None:
        if params.get("base") not in (None, base_name):
            params["base_params"] = {}
        params["base"] = base_name
    options = vars(args)
    for key, value in options.items():
        if key.startswith("app__"):
            params[key[len("app__"):]] = value
    for key, value in options.items():
        if key.startswith("base__"):
            params.setdefault("base_params", {})[key[len("base__"):]] = value

    data["executor"] = _executor_data(args, data.get("executor") or {})
    if args.transformer == "none":
        data["transformer"] = None
        data["filter"] = {"kind": "never"}
    elif args.transformer is not None:
        data["transformer"] = {"kind": args.transformer}
    transformer = data.get("transformer")
    if transformer and transformer.get("kind") == "store" and args.store_addr:
        transformer["address"] = args.store_addr
    if args.filter is not None:
        data["filter"] = FilterSpec.parse(args.filter).model_dump()
    if args.record_sink is not None:
        data["record_sink"] = {"kind": args.record_sink}
    if args.run_dir is not None:
        data["run_dir"] = args.run_dir
    data.setdefault("run_dir", default_run_root())
    if args.seed is not None:
        data["seed"] = args.seed
    if args.repeat is not None:
        data["repeat"] = args.repeat
    return RunConfig.model_validate(data)


def _validation_message(exc: ValidationError) -> str:
    fields = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "config"
        fields.append(f"{location}: {error['msg']}")
    return "validation error: " + "; ".join(fields)


def typed_app_spec(config: RunConfig) -> RunConfig:
    """Validate the app parameters and store them with their declared types."""
    app_config = build_app_config(config.app, config.seed)
    return config.model_copy(update={
        "app": AppSpec(name=config.app.name, params=app_config.saved_params())})


def _resolve_apps(known, saved: Optional[Dict[str, Any]]):
    """The application to run and, under failure injection, the one it wraps."""
    saved_app = (saved or {}).get("app", {})
    app_name = known.app or saved_app.get("name")
    base_name = None
    injecting = known.failure_type is not None or known.failure_rate is not None
    if app_name is not None and app_name != FAILURE_APP and injecting:
        base_name, app_name = app_name, FAILURE_APP
    elif app_name == FAILURE_APP:
        saved_base = saved_app.get("params", {}).get("base") \
            if saved_app.get("name") == FAILURE_APP else None
        base_name = known.base or saved_base or DEFAULT_FAILURE_BASE
    return app_name, base_name


def cmd_run(argv: Sequence[str]) -> int:
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--app")
    pre.add_argument("--config")
    pre.add_argument("--base")
    pre.add_argument("--failure-type")
    pre.add_argument("--failure-rate")
    known, _ = pre.parse_known_args(argv)

    saved = None
    if known.config:
        try:
            saved = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {known.config}: {exc}", file=sys.stderr)
            return USAGE_ERROR
    app_name, base_name = _resolve_apps(known, saved)

    parser = argparse.ArgumentParser(prog="tapsb run", description="Run one application.")
    add_run_options(parser)
    if app_name is None:
        parser.error(f"--app is required; choose from {', '.join(app_names())}")
    try:
        add_app_options(parser, get_app_config(app_name))
        if base_name is not None:
            add_app_options(parser, get_app_config(base_name), dest_prefix="base__")
    except RegistrationError as exc:
        parser.error(str(exc))
    args = parser.parse_args(argv)

    try:
        config = typed_app_spec(build_run_config(args, saved, app_name, base_name))
    except ValidationError as exc:
        print(_validation_message(exc), file=sys.stderr)
        return USAGE_ERROR
    except RegistrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    status = 0
    for _ in range(config.repeat):
        try:
            result = run_app(config)
        except Exception as exc:
            print(f"error: run failed: {exc}", file=sys.stderr)
            status = RUN_ERROR
            continue
        summary = result.summary
        print(f"{result.run_dir}\t{summary['status']}\t"
              f"makespan={summary['makespan_s']:.3f}s\ttasks={summary.get('task_count')}")
    return status


def _bench_common(parser: argparse.ArgumentParser, output: str) -> None:
    parser.add_argument("--repetitions", type=int, default=3)
    parser.add_argument("--output", default=output, help="CSV path prefix")
    parser.add_argument("--run-dir", default=default_run_root())
    parser.add_argument("--seed", type=int, default=0)


def cmd_bench(argv: Sequence[str]) -> int:
    from .bench import (
        bench_makespan, bench_scaling, bench_transfer, executor_spec, report_write,
    )

    parser = argparse.ArgumentParser(prog="tapsb bench")
    sub = parser.add_subparsers(dest="driver", required=True)

    makespan = sub.add_parser("makespan", help="application makespan per configuration")
    makespan.add_argument("--config", action="append", default=[],
                          help="config.json to benchmark (repeatable)")
    _bench_common(makespan, "makespan")

    scaling = sub.add_parser("scaling", help="bag-of-tasks throughput")
    scaling.add_argument("--executors", type=_csv(str),
                         default=["serial", "thread-pool", "worker-pool", "latency-sim"])
    scaling.add_argument("--workers", type=_csv(int), default=[1, 2, 4, 8])
    scaling.add_argument("--task-count", type=int, default=1000)
    scaling.add_argument("--sleep", type=float, default=0.0)
    scaling.add_argument("--sched-latency", type=float, default=0.01)
    scaling.add_argument("--batch-size", type=int, default=32)
    _bench_common(scaling, "scaling")

    transfer = sub.add_parser("transfer", help="round-trip time against payload size")
    transfer.add_argument("--executor", choices=EXECUTOR_KINDS, default="latency-sim")
    transfer.add_argument("--inner", default="thread-pool")
    transfer.add_argument("--workers", type=int, default=min(32, os.cpu_count() or 1))
    transfer.add_argument("--sched-latency", type=float, default=0.01)
    transfer.add_argument("--bandwidth", type=float,
                          help="bytes/s for inline payloads on latency-sim (default 1e8)")
    transfer.add_argument("--sizes", type=_csv(int),
                          default=[1_000, 10_000, 100_000, 1_000_000, 10_000_000])
    transfer.add_argument("--transformers", type=_csv(str), default=["none", "file", "store"])
    transfer.add_argument("--store-addr", default=os.getenv("TAPSB_STORE_ADDR"))
    _bench_common(transfer, "transfer")

    args = parser.parse_args(argv)
    try:
        if args.driver == "makespan":
            if args.config:
                configs = [load_run_config(path) for path in args.config]
            else:
                configs = [
                    RunConfig(app=AppSpec(name="synthetic", params={
                        "structure": "bag", "task_count": 32, "sleep": 0.1}),
                        executor=executor_spec(kind, 8), run_dir=args.run_dir, seed=args.seed)
                    for kind in ("serial", "thread-pool")
                ]
            report = bench_makespan(configs, args.repetitions)
        elif args.driver == "scaling":
            report = bench_scaling(args.executors, args.workers, task_count=args.task_count,
                                   sleep=args.sleep, repetitions=args.repetitions,
                                   run_root=args.run_dir, sched_latency=args.sched_latency,
                                   batch_size=args.batch_size, seed=args.seed)
        else:
            spec = executor_spec(args.executor, args.workers, args.sched_latency,
                                 inner=args.inner, bandwidth=args.bandwidth)
            kinds = [None if kind == "none" else kind for kind in args.transformers]
            report = bench_transfer(spec, args.sizes, kinds, repetitions=args.repetitions,
                                    run_root=args.run_dir, store_address=args.store_addr,
                                    seed=args.seed)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    path = report_write(report, args.output)
    print(report.summary().to_string(index=False))
    print(f"wrote {path}")
    return RUN_ERROR if any(row.failed for row in report.rows) else 0


def cmd_store(argv: Sequence[str]) -> int:
    from .store import StoreServer

    parser = argparse.ArgumentParser(prog="tapsb store", description="Run the key-value store.")
    parser.add_argument("--bind", default="127.0.0.1:7890")
    args = parser.parse_args(argv)
    try:
        server = StoreServer(args.bind).start()
    except (TapsbError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUN_ERROR
    print(f"store listening on {server.address}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_serve(argv: Sequence[str]) -> int:
    import uvicorn
    from .main import create_app

    parser = argparse.ArgumentParser(prog="tapsb serve", description="Browse run directories.")
    parser.add_argument("--run-dir", default=default_run_root())
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)
    uvicorn.run(create_app(args.run_dir), host=args.host, port=args.port)
    return 0


def cmd_failures(argv: Sequence[str]) -> int:
    from .apps.failures import FAILURE_TAXONOMY

    parser = argparse.ArgumentParser(prog="tapsb failures")
    parser.add_argument("--list", action="store_true", help="list failure types")
    args = parser.parse_args(argv)
    if not args.list:
        parser.print_help()
        return 0
    for name, status in FAILURE_TAXONOMY.items():
        print(f"{name}\t{status}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "bench": cmd_bench,
    "store": cmd_store,
    "serve": cmd_serve,
    "failures": cmd_failures,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(level=os.getenv("TAPSB_LOG_LEVEL", "INFO").upper(),
                        format=LOG_FORMAT, stream=sys.stderr)
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in COMMANDS:
        print(f"usage: tapsb {{{','.join(COMMANDS)}}} ...", file=sys.stderr)
        return USAGE_ERROR
    try:
        return COMMANDS[argv[0]](argv[1:])
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    except Exception as exc:
        logger.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
