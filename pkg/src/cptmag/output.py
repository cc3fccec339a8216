"""CSV tables and the JSON sidecar written for every scenario."""

from __future__ import annotations

import csv
import json
import math
from numbers import Integral, Real
from pathlib import Path

from .config import config_as_dict, serialize_config
from .scenarios import RUNLOG_COLUMNS, RunLog, ScenarioResult, Table

SCHEMA_VERSION = "cptmag-runlog/1"


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, Integral):
        return str(int(v))
    if isinstance(v, Real):
        f = float(v)
        return "" if math.isnan(f) else repr(f)
    return str(v)


def write_csv(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_runlog(path: Path, log: RunLog) -> Path:
    return write_csv(path, RUNLOG_COLUMNS, log.rows)


def write_table(path: Path, table: Table) -> Path:
    return write_csv(path, table.columns, table.rows)


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, bool):
        return value
    if isinstance(value, Integral):
        return int(value)
    if isinstance(value, Real):
        f = float(value)
        return f if math.isfinite(f) else None
    return value


def write_result(result: ScenarioResult, out_dir: Path) -> list[Path]:
    """Write every table, every run log and the sidecar; return the paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    name = cfg.scenario
    written = []
    for key, table in result.tables.items():
        written.append(write_table(out_dir / f"{name}_{key}.csv", table))
    if result.runlogs:
        run_dir = out_dir / f"{name}_runlogs"
        run_dir.mkdir(exist_ok=True)
        for log in result.runlogs:
            written.append(write_runlog(run_dir / f"run_{log.run_index:04d}.csv", log))
    comparator = result.meta.get("comparator")
    if isinstance(comparator, RunLog):
        written.append(write_runlog(out_dir / f"{name}_comparator_lock.csv", comparator))
    run_flags = [{k: _json_safe(v) for k, v in log.meta.items() if k != "estimates"} for log in result.runlogs]
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "scenario": name,
        "seed": cfg.seed,
        "runs": cfg.runs,
        "config": config_as_dict(cfg),
        "config_text": serialize_config(cfg),
        "summary": _json_safe({k: v for k, v in result.meta.items() if k != "comparator"}),
        "run_flags": run_flags,
        "outputs": sorted(str(p.relative_to(out_dir)) for p in written),
    }
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written
