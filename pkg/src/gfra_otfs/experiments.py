"""Monte-Carlo harness: seed splitting, trial execution, aggregation, and
deterministic CSV/JSON emission.

Per-trial randomness comes from ``SeedSequence(root, spawn_key=(sweep_idx,
trial_idx, purpose))``, so records are bit-identical no matter how trials are
distributed over workers.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .config import ExperimentConfig, config_to_dict, sweep_points
from .pipeline import ExperimentContext, TrialResult, run_trial

CSV_COLUMNS = ("sweep_var", "sweep_value", "scheme", "adc_bits", "metric",
               "mean", "stderr", "trials", "root_seed")


@dataclass
class TrialRecord:
    sweep_idx: int
    trial_idx: int
    scheme: str
    misses: int
    false_alarms: int
    aer: float | None
    nmse: float | None
    ber: float | None
    runtimes: dict[str, float]


@dataclass
class ExperimentTable:
    rows: list[dict]
    records: list[TrialRecord]
    config: ExperimentConfig


def _run_chunk(cfg: ExperimentConfig, sweep_idx: int, trial_indices: list[int]):
    ctx = ExperimentContext.from_config(cfg)
    out = []
    for ti in trial_indices:
        results = run_trial(ctx, sweep_idx, ti)
        for scheme, r in results.items():
            out.append(TrialRecord(sweep_idx, ti, scheme, r.misses, r.false_alarms,
                                   r.aer, r.nmse, r.ber, r.runtimes))
    return out


def _chunks(n: int, pieces: int) -> list[list[int]]:
    idx = list(range(n))
    size = max(1, (n + pieces - 1) // pieces)
    return [idx[i:i + size] for i in range(0, n, size)]


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentTable:
    """Run every sweep point; deterministic given the config."""
    rows: list[dict] = []
    records: list[TrialRecord] = []
    for sweep_idx, (var, value, point_cfg) in enumerate(sweep_points(cfg)):
        if cfg.workers > 1 and point_cfg.trials > 1:
            chunks = _chunks(point_cfg.trials, cfg.workers * 4)
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(_run_chunk, point_cfg, sweep_idx, c)
                           for c in chunks]
                point_records = [r for f in futures for r in f.result()]
        else:
            point_records = _run_chunk(point_cfg, sweep_idx,
                                       list(range(point_cfg.trials)))
        point_records.sort(key=lambda r: (r.trial_idx, r.scheme))
        records.extend(point_records)
        if progress is not None:
            progress(var, value, point_records)
        for scheme in point_cfg.scheme:
            scheme_recs = [r for r in point_records if r.scheme == scheme]
            for metric in point_cfg.metrics:
                values = [getattr(r, metric) for r in scheme_recs
                          if getattr(r, metric) is not None]
                arr = np.array(values, dtype=float)
                mean = float(arr.mean()) if arr.size else float("nan")
                stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 \
                    else 0.0
                rows.append({
                    "sweep_var": var, "sweep_value": value, "scheme": scheme,
                    "adc_bits": point_cfg.adc_bits, "metric": metric,
                    "mean": mean, "stderr": stderr, "trials": int(arr.size),
                    "root_seed": cfg.seed,
                })
    return ExperimentTable(rows, records, cfg)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def emit_results(table: ExperimentTable, out_dir: str) -> tuple[str, str]:
    """Write results.csv and results.json (bit-identical given the config)."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    json_path = os.path.join(out_dir, "results.json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rows_to_csv(table.rows))
    payload = {"config": config_to_dict(table.config), "rows": table.rows}
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def parse_results_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        row = dict(zip(header, parts))
        for key in ("sweep_value", "mean", "stderr"):
            row[key] = float(row[key])
        for key in ("adc_bits", "trials", "root_seed"):
            row[key] = int(row[key])
        out.append(row)
    return out


def record_dicts(table: ExperimentTable) -> list[dict]:
    return [asdict(r) for r in table.records]
