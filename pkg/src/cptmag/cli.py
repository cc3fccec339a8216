"""Command-line entry point: ``cptmag <scenario> --config <path> [...]``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import SCENARIOS, ScenarioConfig, load_config, parse_config
from .errors import CptMagError
from .output import write_result
from .scenarios import run_scenario


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cptmag", description="Simulate adaptive and locked CPT-Ramsey magnetometry.")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", type=Path, help="INI-style config; defaults apply when omitted")
    p.add_argument("--seed", type=int, help="override [scenario] seed")
    p.add_argument("--runs", type=int, help="override [scenario] runs")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    return p


def resolve(args) -> ScenarioConfig:
    cfg = load_config(args.config, args.scenario) if args.config else parse_config("", args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.runs is not None:
        overrides["runs"] = args.runs
    return dataclasses.replace(cfg, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        result = run_scenario(cfg)
        paths = write_result(result, args.out)
        if not args.no_figures:
            from .plotting import render
            paths += render(result, args.out)
    except CptMagError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: OSError: {exc}", file=sys.stderr)
        return 3
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
