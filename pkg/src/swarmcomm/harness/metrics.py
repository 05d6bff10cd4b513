"""Per-iteration metrics as CSV: one header line, then one row per iteration.

Columns:
    stage_agents      team size being trained
    iteration         PPO update count (global across curriculum stages)
    wall_time         seconds since the run started
    timesteps         environment steps consumed in this iteration (N*T)
    mean_reward       mean shared reward per step over the rollout
    train_success     % of training episodes finished this iteration that succeeded
    train_length      mean length of those episodes
    eval_success      % success of greedy evaluation (blank if not evaluated)
    eval_time         mean steps per evaluation episode, failures counted as the horizon
    eval_avg_distance mean landmark-to-nearest-agent distance at episode end (coverage only)
    eval_reward       mean shared reward at the final step of evaluation episodes
    policy_loss, value_loss, entropy, clip_fraction, approx_kl, grad_norm
                      update diagnostics averaged over all minibatches
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

COLUMNS = (
    "stage_agents",
    "iteration",
    "wall_time",
    "timesteps",
    "mean_reward",
    "train_success",
    "train_length",
    "eval_success",
    "eval_time",
    "eval_avg_distance",
    "eval_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
    "grad_norm",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


class MetricsWriter:
    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not (append and self.path.exists())
        self._fh = open(self.path, "w" if fresh else "a", newline="")
        self._w = csv.writer(self._fh)
        if fresh:
            self._w.writerow(COLUMNS)
            self._fh.flush()

    def write(self, row: dict) -> None:
        unknown = set(row) - set(COLUMNS)
        if unknown:
            raise KeyError(f"unknown metrics columns {sorted(unknown)}")
        self._w.writerow([_fmt(row.get(c)) for c in COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"unexpected metrics header in {path}")
        rows = []
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in ("stage_agents", "iteration", "timesteps"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
        return rows
