"""Interaction event records, CSV ingestion and log projections."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class EventLogError(ValueError):
    """Raised when an event file or event sequence fails validation."""


@dataclass(frozen=True)
class Event:
    user: int
    item: int
    time: float
    context: tuple[float, ...] | None = None

    @property
    def dim(self) -> tuple[int, int]:
        return (self.user, self.item)

    def context_array(self, d: int) -> np.ndarray:
        if d == 0 or self.context is None:
            return np.zeros(0)
        return np.asarray(self.context, dtype=np.float64)


@dataclass(frozen=True)
class EventLog:
    """Time-ordered interaction events over ``m`` users and ``n`` items.

    Events are sorted by time; simultaneous events keep their input order.
    ``horizon`` defaults to the last event time (0 for an empty log).
    """

    events: tuple[Event, ...]
    m: int
    n: int
    d: int = 0
    horizon: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda e: e.time))
        object.__setattr__(self, "events", events)
        if self.horizon is None:
            object.__setattr__(self, "horizon", events[-1].time if events else 0.0)
        _validate(events, self.m, self.n, self.d, self.horizon)

    @classmethod
    def from_arrays(cls, users, items, times, m, n, context=None, horizon=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        if context is None or np.size(context) == 0:
            ctx = [None] * len(times)
            d = 0
        else:
            context = np.asarray(context, dtype=np.float64)
            d = context.shape[1]
            ctx = [tuple(map(float, row)) for row in context]
        events = tuple(
            Event(int(u), int(i), float(t), c) for u, i, t, c in zip(users, items, times, ctx)
        )
        return cls(events, m, n, d, horizon)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, idx):
        return self.events[idx]

    @property
    def times(self) -> np.ndarray:
        return np.fromiter((e.time for e in self.events), dtype=np.float64, count=len(self))

    @property
    def users(self) -> np.ndarray:
        return np.fromiter((e.user for e in self.events), dtype=np.int64, count=len(self))

    @property
    def items(self) -> np.ndarray:
        return np.fromiter((e.item for e in self.events), dtype=np.int64, count=len(self))

    def dims(self) -> set[tuple[int, int]]:
        return {e.dim for e in self.events}

    def for_user(self, u: int) -> list[Event]:
        return [e for e in self.events if e.user == u]

    def for_item(self, i: int) -> list[Event]:
        return [e for e in self.events if e.item == i]

    def subset(self, events: Iterable[Event], horizon: float | None = None) -> "EventLog":
        return EventLog(tuple(events), self.m, self.n, self.d, horizon)

    def metadata(self) -> dict:
        return {"m": self.m, "n": self.n, "d": self.d, "T": self.horizon, "N": len(self)}


def _validate(events: Sequence[Event], m: int, n: int, d: int, horizon: float) -> None:
    if m < 0 or n < 0 or d < 0:
        raise EventLogError("m, n and d must be nonnegative")
    for pos, e in enumerate(events):
        if not (0 <= e.user < m):
            raise EventLogError(f"event {pos}: user id {e.user} outside [0, {m})")
        if not (0 <= e.item < n):
            raise EventLogError(f"event {pos}: item id {e.item} outside [0, {n})")
        if not np.isfinite(e.time) or e.time < 0:
            raise EventLogError(f"event {pos}: invalid time {e.time}")
        width = 0 if e.context is None else len(e.context)
        if width != d:
            raise EventLogError(f"event {pos}: context length {width}, expected {d}")
    if events and events[-1].time > horizon:
        raise EventLogError(f"horizon {horizon} precedes last event time {events[-1].time}")


def _parse_row(row: list[str], lineno: int) -> tuple[int, int, float, tuple[float, ...] | None]:
    if len(row) < 3:
        raise EventLogError(f"line {lineno}: expected at least 3 fields, got {len(row)}")
    try:
        user = int(row[0])
        item = int(row[1])
        time = float(row[2])
        ctx = tuple(float(x) for x in row[3:]) if len(row) > 3 else None
    except ValueError as exc:
        raise EventLogError(f"line {lineno}: {exc}") from None
    return user, item, time, ctx


def load_event_log(path, m: int | None = None, n: int | None = None) -> EventLog:
    """Read ``user_id,item_id,time[,c_1..c_d]`` rows into a validated log.

    A header row is skipped when its first field is not an integer. When
    ``m``/``n`` are omitted they are taken from a ``<path>.json`` sidecar if
    present, otherwise inferred as ``max id + 1``.
    """
    path = Path(path)
    meta = read_metadata(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [x.strip() for x in row]
            if not row or all(x == "" for x in row):
                continue
            if lineno == 1 and not _is_int(row[0]):
                continue
            rows.append(_parse_row(row, lineno))

    widths = {0 if r[3] is None else len(r[3]) for r in rows}
    if len(widths) > 1:
        raise EventLogError(f"inconsistent context dimensions {sorted(widths)}")
    d = widths.pop() if widths else int(meta.get("d", 0))

    if m is None:
        m = int(meta["m"]) if "m" in meta else (max((r[0] for r in rows), default=-1) + 1)
    if n is None:
        n = int(meta["n"]) if "n" in meta else (max((r[1] for r in rows), default=-1) + 1)
    horizon = meta.get("T")
    if horizon is not None and rows and max(r[2] for r in rows) > horizon:
        horizon = None
    events = tuple(Event(*r) for r in rows)
    return EventLog(events, m, n, d, horizon)


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def save_event_log(log: EventLog, path, sidecar: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for e in log.events:
            row = [e.user, e.item, repr(e.time)]
            if e.context is not None:
                row.extend(repr(c) for c in e.context)
            writer.writerow(row)
    if sidecar:
        write_metadata(log, path)


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_metadata(log: EventLog, path) -> None:
    meta = {"m": log.m, "n": log.n, "d": log.d, "T": log.horizon}
    metadata_path(path).write_text(json.dumps(meta, indent=2))


def read_metadata(path) -> dict:
    side = metadata_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise EventLogError(f"bad metadata sidecar {side}: {exc}") from None


def split_by_proportion(log: EventLog, p: float) -> tuple[EventLog, EventLog]:
    """Train on events with ``time <= T * p``; the rest form the test log."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    cut = log.horizon * p
    train = [e for e in log.events if e.time <= cut]
    test = [e for e in log.events if e.time > cut]
    return (
        EventLog(tuple(train), log.m, log.n, log.d, cut),
        EventLog(tuple(test), log.m, log.n, log.d, log.horizon),
    )


def relevant_times(log: EventLog, u: int, i: int, window: tuple[float, float]) -> list[float]:
    """Breakpoints of the (u, i) intensity inside ``window``.

    Returns the window start, every distinct event time strictly inside the
    window that touches ``u`` or ``i``, and the window end.
    """
    start, end = window
    if start > end:
        raise ValueError(f"window start {start} after end {end}")
    inner = sorted(
        {e.time for e in log.events if (e.user == u or e.item == i) and start < e.time < end}
    )
    if start == end:
        return [start]
    return [start, *inner, end]
