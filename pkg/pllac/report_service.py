"""
Run outputs
===========
Append-only JSON-lines metrics, CSV curve exports, the grid summary as
CSV and Excel, and the per-trial summary JSON.

Layout of a run folder:
  summary.json      last trial summary (EvalReport, theta_hat, status)
  epochs.jsonl      one line per (cell, trial, epoch) plus one summary line per cell
  epochs.csv        per-epoch curve of the last saved trial
  theta_curve.csv   (lambda, distance) diagnostic curve
  grid.csv / .xlsx  one row per grid cell
  checkpoint.json   final parameters of the last saved trial
"""

import json
import logging
import os
import threading
from dataclasses import asdict, is_dataclass

import numpy as np
import pandas as pd

from pllac.config import CHECKPOINT_FILE, EPOCHS_FILE, GRID_CSV, GRID_XLSX, OUTPUT_FOLDER, SUMMARY_FILE
from pllac.model import save_checkpoint

logger = logging.getLogger(__name__)

THETA_CURVE_FILE = "theta_curve.csv"
EPOCHS_CSV = "epochs.csv"

# one lock per output path, shared by every writer in the process
_locks = {}
_locks_guard = threading.Lock()


def _lock_for(path):
    path = os.path.abspath(path)
    with _locks_guard:
        return _locks.setdefault(path, threading.Lock())


def to_jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class JsonLinesWriter:
    """Appends one JSON object per line; concurrent writers to one file are serialized."""

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._lock = _lock_for(path)

    def write(self, record):
        line = json.dumps(to_jsonable(record))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    def read(self):
        if not os.path.exists(self.path):
            return []
        with open(self.path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


def open_sink(folder=OUTPUT_FOLDER):
    return JsonLinesWriter(os.path.join(folder, EPOCHS_FILE))


def save_trial(result, folder=OUTPUT_FOLDER):
    """Summary JSON, per-epoch CSV and, when parameters exist, the checkpoint."""
    os.makedirs(folder, exist_ok=True)

    summary_path = os.path.join(folder, SUMMARY_FILE)
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(result.to_dict()), f, indent=2)
    logger.info(f"📄 Trial summary saved: {summary_path}")

    if result.epochs:
        save_curve(result.epochs, os.path.join(folder, EPOCHS_CSV))
    if result.params is not None:
        metadata = {"method": result.method, "seed": result.seed}
        if result.standardizer is not None:
            metadata["standardizer"] = result.standardizer
        save_checkpoint(result.params, os.path.join(folder, CHECKPOINT_FILE), metadata=metadata)
    return summary_path


def save_curve(records, path):
    df = pd.DataFrame([to_jsonable(r) for r in records])
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False)
    return path


def save_theta_curve(estimate, path):
    df = pd.DataFrame({
        "lambda": estimate.lambdas,
        "distance": estimate.distances,
        "raw_distance": estimate.raw_distances if len(estimate.raw_distances) else estimate.distances,
    })
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"θ curve saved: {path}")
    return path


def save_grid(df, folder=OUTPUT_FOLDER):
    os.makedirs(folder, exist_ok=True)
    csv_path = os.path.join(folder, GRID_CSV)
    excel_path = os.path.join(folder, GRID_XLSX)

    df.to_csv(csv_path, index=False)
    df.to_excel(excel_path, index=False)

    logger.info(f"📊 Grid saved: {csv_path}, {excel_path}")
    return csv_path, excel_path
