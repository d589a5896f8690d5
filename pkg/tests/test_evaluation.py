import csv
import json
import math

import numpy as np
import pytest

from coevolve.evaluation import (
    SWEEP_PROPORTIONS,
    SWEEP_FIELDS,
    evaluate,
    sweep_splits,
    time_bins,
    write_sweep,
)
from coevolve.events import Event, EventLog, split_by_proportion
from coevolve.prediction import average_rank, log_density_scores
from coevolve.simulation import SimConfig, simulate
from coevolve.state import ModelParams, apply_event, replay
from coevolve.training import TrainConfig


@pytest.fixture(scope="module")
def sim():
    return simulate(SimConfig(m=5, n=6, k=3, horizon=1e9, max_events=300, seed=8, param_scale=1.0))


def test_zero_model_ties_share_average_rank():
    # untouched state: every item ties at (n + 1) / 2; afterwards item 0 has the
    # shorter lapse (1 vs 2) and so the higher density, and 1-3 tie behind it
    log = EventLog((Event(0, 0, 1.0), Event(1, 3, 2.0)), 2, 4)
    train, test = EventLog((), 2, 4, horizon=0.5), log
    m = evaluate(train, test, ModelParams.zeros(2), keep_details=True)
    assert [d["rank"] for d in m.details] == [2.5, 3.0]
    assert m.n_cold_start == 2 and math.isnan(m.mae_hours)


def test_teacher_forcing_matches_manual_loop(sim):
    train, test = split_by_proportion(sim.log, 0.7)
    m = evaluate(train, test, sim.params, keep_details=True)
    state, _ = replay(train, sim.params)
    ranks = []
    for e in test:
        ranks.append(average_rank(log_density_scores(state, e.user, e.time), e.item))
        apply_event(state, sim.params, e)
    assert m.mar == pytest.approx(np.mean(ranks), rel=1e-12)
    assert [d["rank"] for d in m.details] == ranks
    assert m.n_events == len(test)
    assert sum(m.per_bin_counts) == len(test)
    assert m.n_time_predictions + m.n_cold_start == len(test)
    assert m.n_recurring == sum(e.dim in train.dims() for e in test)


def test_true_model_beats_random(sim):
    train, test = split_by_proportion(sim.log, 0.7)
    good = evaluate(train, test, sim.params).mar
    bad = evaluate(train, test, ModelParams.random(3, rng=np.random.default_rng(0), scale=1.0)).mar
    assert good < bad


def test_time_bins():
    times = np.array([0.0, 1.0, 5.0, 10.0])
    edges, idx = time_bins(times, 10)
    assert edges[0] == 0.0 and edges[-1] == 10.0
    assert list(idx) == [0, 1, 5, 9]
    _, idx = time_bins(np.array([3.0, 3.0]), 10)
    assert list(idx) == [0, 0]


def test_empty_test_log():
    log = EventLog((Event(0, 0, 1.0),), 1, 1)
    m = evaluate(log, EventLog((), 1, 1), ModelParams.zeros(2))
    assert math.isnan(m.mar) and m.per_bin_counts == [0] * 10


def test_mismatched_logs():
    with pytest.raises(ValueError):
        evaluate(EventLog((), 1, 1), EventLog((), 1, 2), ModelParams.zeros(2))


def test_metrics_files(sim, tmp_path):
    train, test = split_by_proportion(sim.log, 0.7)
    m = evaluate(train, test, sim.params, keep_details=True)
    m.to_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["n_events"] == len(test)
    m.write_details(tmp_path / "d.csv")
    with open(tmp_path / "d.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(test)


def test_sweep(sim, tmp_path):
    assert SWEEP_PROPORTIONS == (0.7, 0.72, 0.74, 0.76, 0.78)
    rows = sweep_splits(sim.log, TrainConfig(k=3, epochs=1), proportions=(0.7, 0.8))
    assert [r["p"] for r in rows] == [0.7, 0.8, "mean"]
    assert rows[-1]["mar"] == pytest.approx((rows[0]["mar"] + rows[1]["mar"]) / 2)
    write_sweep(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(SWEEP_FIELDS)
    with pytest.raises(ValueError):
        sweep_splits(sim.log, TrainConfig(k=3), proportions=(1.0,))


@pytest.mark.xfail(strict=True, reason=(
    "an untrained model still ranks with the (t - t') lapse factor of the density, which carries "
    "real timing information, so its MAR sits well below the uniform (n + 1) / 2"))
def test_random_model_matches_uniform_null():
    mars = []
    for s in range(20):
        sim = simulate(SimConfig(m=10, n=20, k=4, horizon=1e9, max_events=500, seed=s))
        train, test = split_by_proportion(sim.log, 0.7)
        params = ModelParams.random(4, rng=np.random.default_rng(1000 + s))
        mars.append(evaluate(train, test, params, predict_time=False).mar)
    se = np.std(mars, ddof=1) / np.sqrt(len(mars))
    assert abs(np.mean(mars) - 10.5) < 3 * se


def test_random_scores_match_uniform_null():
    # the rank arithmetic itself is unbiased: scores independent of the truth give (n + 1) / 2
    rng = np.random.default_rng(0)
    n = 20
    ranks = [average_rank(rng.standard_normal(n), int(rng.integers(n))) for _ in range(20_000)]
    se = np.std(ranks) / np.sqrt(len(ranks))
    assert abs(np.mean(ranks) - (n + 1) / 2) < 3 * se


def test_trained_beats_init_on_every_split():
    from coevolve.simulation import preference_params
    sim = simulate(SimConfig(m=10, n=20, k=4, d=4, horizon=1e9, max_events=2000, seed=3,
                             params=preference_params(4, 4), context_mode="gaussian"))
    cfg = TrainConfig(k=4, window_size=64, epochs=15, learning_rate=1e-2, seed=0)
    rows = sweep_splits(sim.log, cfg)
    for row in rows[:-1]:
        assert row["mar"] < row["init_mar"], row
