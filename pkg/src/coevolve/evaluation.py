"""Item-ranking and return-time evaluation with teacher forcing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .events import EventLog, split_by_proportion
from .prediction import average_rank, log_density_scores, predict_return_time
from .state import DynamicState, ModelParams, apply_event, replay
from .training import TrainConfig, train

SWEEP_PROPORTIONS = (0.7, 0.72, 0.74, 0.76, 0.78)


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


@dataclass
class Metrics:
    mar: float = math.nan
    mae_hours: float = math.nan
    per_bin_mar: list[float] = field(default_factory=list)
    per_bin_counts: list[int] = field(default_factory=list)
    bin_edges: list[float] = field(default_factory=list)
    recurring_mar: float = math.nan
    recurring_mae: float = math.nan
    n_events: int = 0
    n_time_predictions: int = 0
    n_cold_start: int = 0
    n_recurring: int = 0
    details: list[dict] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("details")
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)

    def write_details(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("user", "time", "item", "rank", "predicted_time"))
            writer.writeheader()
            writer.writerows(self.details)


def time_bins(times: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bins over ``[min, max]`` of ``times``; returns (edges, bin index per time)."""
    lo, hi = float(times.min()), float(times.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    if hi == lo:
        return edges, np.zeros(len(times), dtype=int)
    idx = np.clip(((times - lo) / (hi - lo) * n_bins).astype(int), 0, n_bins - 1)
    return edges, idx


def evaluate(train_log: EventLog, test_log: EventLog, params: ModelParams,
             n_bins: int = 10, predict_time: bool = True, keep_details: bool = False) -> Metrics:
    """Score every test event before absorbing it into the state.

    The true item is ranked among all items by conditional density, ties
    taking their average rank. Return-time error only covers pairs observed earlier; the
    others are counted in ``n_cold_start``.
    """
    if (train_log.m, train_log.n, train_log.d) != (test_log.m, test_log.n, test_log.d):
        raise ValueError("train and test logs must share (m, n, d)")
    if len(test_log) == 0:
        return Metrics(per_bin_mar=[math.nan] * n_bins, per_bin_counts=[0] * n_bins)
    state, _ = replay(train_log, params)
    return evaluate_from_state(state, test_log, params, train_log.dims(),
                               n_bins=n_bins, predict_time=predict_time, keep_details=keep_details)


def evaluate_from_state(state: DynamicState, test_log: EventLog, params: ModelParams,
                        train_dims: set, n_bins: int = 10, predict_time: bool = True,
                        keep_details: bool = False) -> Metrics:
    state = state.copy()
    seen = set(train_dims)
    ranks, errors = [], []
    recurring_ranks, recurring_errors = [], []
    details = []
    for e in test_log.events:
        rank = average_rank(log_density_scores(state, e.user, e.time), e.item)
        ranks.append(rank)
        recurring = e.dim in train_dims
        if recurring:
            recurring_ranks.append(rank)
        pred = math.nan
        if predict_time and e.dim in seen:
            pred = predict_return_time(e.user, e.item, state)
            err = abs(pred - e.time)
            errors.append(err)
            if recurring:
                recurring_errors.append(err)
        if keep_details:
            details.append({"user": e.user, "time": e.time, "item": e.item,
                            "rank": rank, "predicted_time": pred})
        apply_event(state, params, e)
        seen.add(e.dim)

    ranks_arr = np.asarray(ranks, dtype=float)
    edges, idx = time_bins(test_log.times, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    per_bin = [float(ranks_arr[idx == b].mean()) if counts[b] else math.nan for b in range(n_bins)]
    return Metrics(
        mar=_mean(ranks_arr),
        mae_hours=_mean(errors),
        per_bin_mar=per_bin,
        per_bin_counts=counts.tolist(),
        bin_edges=edges.tolist(),
        recurring_mar=_mean(recurring_ranks),
        recurring_mae=_mean(recurring_errors),
        n_events=len(ranks),
        n_time_predictions=len(errors),
        n_cold_start=len(ranks) - len(errors) if predict_time else 0,
        n_recurring=len(recurring_ranks),
        details=details,
    )


SWEEP_FIELDS = ("p", "n_train", "n_test", "mar", "mae_hours", "recurring_mar",
                "recurring_mae", "init_mar", "init_mae_hours")


def sweep_splits(log: EventLog, cfg: TrainConfig,
                 proportions: Sequence[float] = SWEEP_PROPORTIONS,
                 n_bins: int = 10) -> list[dict]:
    """Train and evaluate once per split; the last row holds the column means."""
    rows = []
    for p in proportions:
        if not 0.0 < p < 1.0:
            raise ValueError(f"proportion {p} outside (0, 1)")
        train_log, test_log = split_by_proportion(log, p)
        result = train(train_log, cfg)
        trained = evaluate(train_log, test_log, result.params, n_bins=n_bins)
        init = evaluate(train_log, test_log, result.initial_params, n_bins=n_bins)
        rows.append({
            "p": p, "n_train": len(train_log), "n_test": len(test_log),
            "mar": trained.mar, "mae_hours": trained.mae_hours,
            "recurring_mar": trained.recurring_mar, "recurring_mae": trained.recurring_mae,
            "init_mar": init.mar, "init_mae_hours": init.mae_hours,
        })
    mean = {"p": "mean"}
    for key in SWEEP_FIELDS[1:]:
        mean[key] = float(np.nanmean([r[key] for r in rows])) if rows else math.nan
    rows.append(mean)
    return rows


def write_sweep(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
