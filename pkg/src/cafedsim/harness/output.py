"""Result files: per-round CSV, metrics JSON, estimator snapshots and bound sweeps.

Floats are written with ``repr`` so every value read back is bit-identical
to the one computed.  Each file carries the config hash and the seed.
"""

from __future__ import annotations

import csv
import io
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..config import ExperimentConfig
from .metrics import RunMetrics, compute_metrics, running_average

ENV_OUTPUT_DIR = "CAFEDSIM_OUTPUT_DIR"

ROUND_COLUMNS = (
    "config_hash",
    "seed",
    "round",
    "strategy",
    "n_active",
    "n_participating",
    "q",
    "test_accuracy",
    "test_loss",
    "running_accuracy",
)


def output_dir(explicit: str | None = None) -> Path:
    """Explicit path, else ``$CAFEDSIM_OUTPUT_DIR``, else ``./results``."""
    return Path(explicit or os.environ.get(ENV_OUTPUT_DIR) or "results")


def _f(x: float) -> str:
    return repr(float(x))


def compact_q(q) -> str:
    """Non-zero weights as ``index:value`` pairs separated by spaces."""
    q = np.asarray(q, dtype=float)
    return " ".join(f"{k}:{_f(q[k])}" for k in np.flatnonzero(q))


def parse_compact_q(text: str, n_clients: int) -> np.ndarray:
    q = np.zeros(n_clients)
    for item in text.split():
        k, v = item.split(":")
        q[int(k)] = float(v)
    return q


def round_csv_text(logs, config: ExperimentConfig, seed: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROUND_COLUMNS)
    h = config.config_hash()
    run_avg = running_average([g.test_accuracy for g in logs])
    for g, avg in zip(logs, run_avg):
        writer.writerow(
            [
                h,
                seed,
                g.round,
                config.strategy,
                int(g.active.sum()),
                int(g.participating.sum()),
                compact_q(g.weights),
                _f(g.test_accuracy),
                _f(g.test_loss),
                _f(avg),
            ]
        )
    return buf.getvalue()


def write_round_csv(path, logs, config: ExperimentConfig, seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(round_csv_text(logs, config, seed))
    return path


def read_round_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def metrics_from_csv(path) -> RunMetrics:
    rows = read_round_csv(path)
    return compute_metrics([float(r["test_accuracy"]) for r in rows])


def metrics_record(
    metrics: RunMetrics, config: ExperimentConfig, seed: int, timestamp: bool = True
) -> dict:
    rec = {
        "config_hash": config.config_hash(),
        "seed": seed,
        "strategy": config.strategy,
        "metrics": metrics.to_dict(),
        "config": config.to_dict(),
    }
    if timestamp:
        rec["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return rec


def write_json(path, record: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def write_estimates_jsonl(path, logs, config: ExperimentConfig, seed: int) -> Path:
    """One JSON object per round with the strategy's estimator snapshot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = config.config_hash()
    with open(path, "w") as fh:
        for g in logs:
            rec = {"config_hash": h, "seed": seed, "round": g.round, "estimates": g.estimates}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def write_table_csv(path, rows: list[dict], columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _f(v) if isinstance(v, float) else v for k, v in r.items()})
    return path
