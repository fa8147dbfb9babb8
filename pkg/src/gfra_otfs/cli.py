"""Command-line surface: run, validate, and sweep experiments."""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, build_config, load_config, parse_config_text
from .experiments import emit_results, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfra",
        description="Grant-free NOMA-OTFS uplink link-level simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment in a config file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--workers", type=int, default=None)
    run_p.add_argument("--quiet", action="store_true")

    val_p = sub.add_parser("validate", help="validate a config file")
    val_p.add_argument("--config", required=True)

    sweep_p = sub.add_parser("sweep", help="run with a sweep override")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--var", required=True)
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated sweep values")
    sweep_p.add_argument("--out", required=True)
    sweep_p.add_argument("--workers", type=int, default=None)
    sweep_p.add_argument("--quiet", action="store_true")
    return parser


def _load(path: str, overrides: dict[str, str]):
    with open(path, "r", encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())
    raw.update(overrides)
    env_seed = os.environ.get("GFRA_SEED")
    if env_seed is not None:
        raw["seed"] = env_seed
    return build_config(raw)


def _progress(quiet: bool):
    if quiet:
        return None

    def show(var, value, records):
        schemes = sorted({r.scheme for r in records})
        print(f"[gfra] {var}={value}: {len(records)} records over "
              f"{len(schemes)} scheme(s)", file=sys.stderr)
    return show


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            _load(args.config, {})
            print("ok")
            return 0
        overrides: dict[str, str] = {}
        if args.command == "sweep":
            overrides["sweep_var"] = args.var
            overrides["sweep_values"] = args.values
        if args.workers is not None:
            overrides["workers"] = str(args.workers)
        cfg = _load(args.config, overrides)
        table = run_experiment(cfg, progress=_progress(args.quiet))
        csv_path, json_path = emit_results(table, args.out)
        if not args.quiet:
            print(csv_path)
            print(json_path)
        return 0
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line machine-parsable failure
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
