"""Command line entry point.

    polymerlab {simulate,verify,scaling,report,validate} --config PATH
               [--seed U64] [--threads N] [--out DIR] [--format json|csv]

Exit codes: 0 ok, 1 a check failed, 2 invalid configuration, 3 I/O error.
Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import platform
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, Diagnostic, RunConfig, validate_file
from .workflows import MissingInputError, run_report, run_scaling, run_simulate, run_verify

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
COMMANDS = ("simulate", "verify", "scaling", "report", "validate")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polymerlab", description="Directed polymer laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, metavar="PATH")
    parser.add_argument("--seed", type=_u64, metavar="U64", help="overrides the environment seed")
    parser.add_argument("--threads", type=_positive, metavar="N")
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--format", choices=("json", "csv"))
    return parser


def _error(kind: str, message: str, diagnostics: list[Diagnostic] | None = None) -> None:
    payload = {"error": kind, "message": message}
    if diagnostics is not None:
        payload["diagnostics"] = [d.to_dict() for d in diagnostics]
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _write_meta(out: Path, args: argparse.Namespace, started: str, status: int) -> None:
    meta = {
        "command": args.command,
        "config": str(args.config),
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "exit": status,
        "version": __version__,
        "python": platform.python_version(),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        diags = validate_file(args.config)
    except OSError as exc:
        _error("io-error", f"cannot read config: {exc}")
        return EXIT_IO
    if args.command == "validate":
        print(json.dumps([d.to_dict() for d in diags], sort_keys=True))
        return EXIT_CONFIG if diags else EXIT_OK
    if diags:
        _error("config-error", "invalid configuration", diags)
        return EXIT_CONFIG
    try:
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
        cfg = cfg.with_overrides(args.seed, args.threads, args.out, args.format)
    except (ConfigError, ValueError) as exc:
        _error("config-error", str(exc), getattr(exc, "diagnostics", None))
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        out.mkdir(parents=True, exist_ok=True)
        status = EXIT_OK
        if args.command == "simulate":
            run_simulate(cfg, out)
        elif args.command == "verify":
            reports = run_verify(cfg, out)
            for r in reports:
                print(f"{r.check:<14} {'PASS' if r.passed else 'FAIL'}")
            status = EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK
        elif args.command == "scaling":
            _, ok = run_scaling(cfg, out)
            status = EXIT_OK if ok else EXIT_CHECK
        else:
            for line in run_report(cfg, out):
                print(line)
        _write_meta(out, args, started, status)
        return status
    except MemoryError as exc:
        _error("config-error", str(exc))
        return EXIT_CONFIG
    except (OSError, MissingInputError) as exc:
        _error("io-error", str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
