"""Offline metrics and plot-ready curve files."""
from __future__ import annotations

import csv
from typing import Dict, List, Mapping, Sequence, Tuple

from .discriminator import Discriminator, offline_metrics
from .domain import Dialog
from .errors import DataError

CURVE_COLUMNS = ("episode", "success_rate", "reward_mean", "d_accuracy", "pool_size")
_LOG_KEYS = {"episode": "episodes", "reward_mean": "mean_reward"}


def offline_eval_discriminator(disc: Discriminator, dialogs: Sequence[Dialog]) -> Tuple[float, float, float]:
    """(accuracy at 0.5, mean D on successful dialogs, mean D on failed dialogs)."""
    if not dialogs:
        raise DataError("offline evaluation needs at least one labeled dialog")
    if any(d.success is None for d in dialogs):
        raise DataError("offline evaluation needs dialogs with a known success flag")
    m = offline_metrics(disc, dialogs, [d.success for d in dialogs])
    return m["accuracy"], m["success_prob"], m["fail_prob"]


def _cell(value) -> str:
    # repr round-trips float64 exactly
    if isinstance(value, float):
        return repr(value)
    return str(value)


def curve_rows(log: Sequence[Mapping]) -> List[Dict[str, object]]:
    return [{col: rec[_LOG_KEYS.get(col, col)] for col in CURVE_COLUMNS} for rec in log]


def emit_curves(log: Sequence[Mapping], path) -> None:
    if not log:
        raise DataError("training log is empty")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in curve_rows(log):
            writer.writerow([_cell(row[c]) for c in CURVE_COLUMNS])


def read_curves(path) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in reader]
