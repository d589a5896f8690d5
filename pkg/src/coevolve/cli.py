"""Command line entry point: ``coevolve {simulate,train,evaluate,predict}``.

Configuration comes from an optional YAML file, then ``--set section.key=value``
overrides, then the dedicated flags. ``COEVOLVE_OUTPUT_DIR`` overrides the
output directory from the file; ``--out`` beats both.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .events import EventLog, EventLogError, load_event_log, split_by_proportion
from .evaluation import SWEEP_PROPORTIONS, evaluate, sweep_splits, write_sweep
from .graph import NumericalError
from .prediction import ReplayFrontierError, predict_return_time, rank_items
from .simulation import SimConfig, simulate, write_simulation
from .state import DynamicState, ModelParams, OutOfOrderEvent, apply_event, replay
from .training import DegenerateEventError, TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUTPUT_ENV = "COEVOLVE_OUTPUT_DIR"

DEFAULTS = {
    "seed": 0,
    "paths": {"events": None, "checkpoint": None, "output_dir": "coevolve-out"},
    "simulate": {"m": 10, "n": 20, "k": 4, "d": 0, "horizon": 200.0, "max_events": 10_000,
                 "param_scale": 0.5, "activation": "tanh", "context_mode": "none",
                 "param_mode": "random"},
    "train": {"k": 4, "activation": "tanh", "window_size": 32, "nce_samples": None,
              "scale_survival": True, "learning_rate": 1e-3, "clip_norm": 5.0, "epochs": 1,
              "init_scale": 0.1, "proportion": None},
    "evaluate": {"proportion": 0.7, "n_bins": 10, "details": False, "sweep": None},
    "predict": {"user": 0, "time": 0.0, "top": 10, "queries": None},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be a section")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = _coerce(base[key], value)
    return base


def _coerce(default, value):
    # YAML 1.1 reads "1e9" (no dot) as a string; accept it where a number is expected
    numeric = isinstance(default, (int, float)) and not isinstance(default, bool)
    if numeric and isinstance(value, str):
        try:
            number = float(value)
        except ValueError:
            return value
        return int(number) if isinstance(default, int) and number.is_integer() else number
    return value


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        _merge(cfg, loaded)
    if os.environ.get(OUTPUT_ENV):
        cfg["paths"]["output_dir"] = os.environ[OUTPUT_ENV]
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse value in {item!r}") from None
        nested = value
        for part in reversed(key.split(".")):
            nested = {part: nested}
        _merge(cfg, nested)
    for flag, (section, key) in {"events": ("paths", "events"),
                                 "checkpoint": ("paths", "checkpoint"),
                                 "out": ("paths", "output_dir")}.items():
        if getattr(args, flag, None) is not None:
            cfg[section][key] = getattr(args, flag)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _require_file(cfg: dict, key: str) -> Path:
    value = cfg["paths"][key]
    if value is None:
        raise ConfigError(f"paths.{key} is required for this command")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"paths.{key}: {path} does not exist")
    return path


def _train_config(cfg: dict) -> TrainConfig:
    options = {f.name: cfg["train"][f.name] for f in fields(TrainConfig) if f.name in cfg["train"]}
    options["seed"] = cfg["seed"]
    try:
        return TrainConfig(**options)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from None


def _write_manifest(out: Path, command: str, cfg: dict, artifacts: dict) -> None:
    manifest = {"command": command, "version": __version__, "seed": cfg["seed"],
                "config": cfg, "artifacts": artifacts}
    (out / f"{command}.manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def cmd_simulate(cfg: dict, out: Path) -> str:
    section = dict(cfg["simulate"])
    try:
        sim_cfg = SimConfig(seed=cfg["seed"], **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulate section: {exc}") from None
    sim = simulate(sim_cfg)
    events_path, manifest_path = write_simulation(sim, sim_cfg, out)
    _write_manifest(out, "simulate", cfg, {"events": str(events_path),
                                           "simulation": str(manifest_path)})
    return f"simulated {len(sim.log)} events over T={sim.log.horizon:.3f} -> {events_path}"


def cmd_train(cfg: dict, out: Path) -> str:
    log = load_event_log(_require_file(cfg, "events"))
    train_cfg = _train_config(cfg)
    p = cfg["train"]["proportion"]
    if p is not None:
        log, _ = split_by_proportion(log, p)
    result = train(log, train_cfg)
    ckpt = out / "checkpoint.json"
    result.params.save(ckpt)
    result.write_trace(out / "trace.csv")
    _write_manifest(out, "train", cfg, {"checkpoint": str(ckpt), "trace": str(out / "trace.csv")})
    last = result.trace[-1]
    return f"trained on {len(log)} events, {len(result.trace)} steps, last window loss {last['total']:.4f} -> {ckpt}"


def cmd_evaluate(cfg: dict, out: Path) -> str:
    log = load_event_log(_require_file(cfg, "events"))
    section = cfg["evaluate"]
    if section["sweep"] is not None:
        proportions = SWEEP_PROPORTIONS if section["sweep"] is True else section["sweep"]
        rows = sweep_splits(log, _train_config(cfg), proportions, n_bins=section["n_bins"])
        write_sweep(rows, out / "sweep.csv")
        (out / "metrics.json").write_text(json.dumps(rows, indent=2))
        _write_manifest(out, "evaluate", cfg, {"sweep": str(out / "sweep.csv")})
        mean = rows[-1]
        return f"sweep over {len(rows) - 1} splits: mean MAR {mean['mar']:.3f}, mean MAE {mean['mae_hours']:.3f} h"
    params = ModelParams.load(_require_file(cfg, "checkpoint"))
    train_log, test_log = split_by_proportion(log, section["proportion"])
    metrics = evaluate(train_log, test_log, params, n_bins=section["n_bins"],
                       keep_details=bool(section["details"]))
    metrics.to_json(out / "metrics.json")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "start", "end", "count", "mar"])
        for b, (count, mar) in enumerate(zip(metrics.per_bin_counts, metrics.per_bin_mar)):
            writer.writerow([b, metrics.bin_edges[b], metrics.bin_edges[b + 1], count, mar])
    artifacts = {"metrics": str(out / "metrics.json"), "bins": str(out / "metrics.csv")}
    if section["details"]:
        metrics.write_details(out / "details.csv")
        artifacts["details"] = str(out / "details.csv")
    _write_manifest(out, "evaluate", cfg, artifacts)
    return (f"evaluated {metrics.n_events} test events: MAR {metrics.mar:.3f}, "
            f"MAE {metrics.mae_hours:.3f} h ({metrics.n_time_predictions} timed)")


def cmd_predict(cfg: dict, out: Path) -> str:
    log = load_event_log(_require_file(cfg, "events"))
    params = ModelParams.load(_require_file(cfg, "checkpoint"))
    section = cfg["predict"]
    state = DynamicState.initial(log.m, log.n, params.k)
    if section["queries"] is not None:
        return _predict_batch(log, params, state, Path(section["queries"]), out, cfg)

    u, t, top = int(section["user"]), float(section["time"]), int(section["top"])
    if not 0 <= u < log.m:
        raise EventLogError(f"user {u} outside [0, {log.m})")
    # history strictly before the query time
    history = log.subset((e for e in log.events if e.time < t), horizon=max(t, 0.0))
    state, _ = replay(history, params)
    ranking = rank_items(u, t, state)
    path = out / "predictions.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "time", "rank", "item", "density", "predicted_time"])
        for r, item in enumerate(ranking.top(top), start=1):
            writer.writerow([u, t, r, int(item), ranking.scores[item],
                             predict_return_time(u, int(item), state)])
    _write_manifest(out, "predict", cfg, {"predictions": str(path)})
    items = " ".join(str(int(i)) for i in ranking.top(top))
    return f"user {u} at t={t}: top-{top} items {items}"


def _predict_batch(log: EventLog, params, state, queries: Path, out: Path, cfg: dict) -> str:
    if not queries.exists():
        raise ConfigError(f"predict.queries: {queries} does not exist")
    rows = np.atleast_2d(np.loadtxt(queries, delimiter=",", ndmin=2))
    order = np.argsort(rows[:, 1], kind="stable")
    events, pos = log.events, 0
    path = out / "predictions.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_user", "query_time", "true_item", "rank", "predicted_time"])
        for row in rows[order]:
            u, t = int(row[0]), float(row[1])
            while pos < len(events) and events[pos].time < t:
                apply_event(state, params, events[pos])
                pos += 1
            ranking = rank_items(u, t, state)
            if row.shape[0] > 2:
                item = int(row[2])
                writer.writerow([u, t, item, ranking.average_rank(item),
                                 predict_return_time(u, item, state)])
            else:
                writer.writerow([u, t, "", "", ""])
    _write_manifest(out, "predict", cfg, {"predictions": str(path)})
    return f"answered {len(rows)} queries -> {path}"


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train,
            "evaluate": cmd_evaluate, "predict": cmd_predict}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coevolve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value, e.g. train.epochs=5")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--events", help="event CSV path")
        p.add_argument("--checkpoint", help="parameter checkpoint path")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["paths"]["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DegenerateEventError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EventLogError, OutOfOrderEvent, ReplayFrontierError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
