"""Coevolving user/item embeddings and their event-driven recurrent updates."""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .events import Event, EventLog

BLOCKS = ("W1", "W2", "W3", "W4", "V1", "V2", "V3", "V4")
ACTIVATIONS = ("tanh", "sigmoid")


def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    if activation == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    raise ValueError(f"unknown activation {activation!r}")


def activation_grad(h: np.ndarray, activation: str) -> np.ndarray:
    """Derivative of the activation expressed through its output ``h``."""
    if activation == "tanh":
        return 1.0 - h * h
    return h * (1.0 - h)


@dataclass
class ModelParams:
    """The eight weight blocks of the user and item update networks.

    ``W*`` drive user updates and ``V*`` item updates: ``*1`` scales the
    elapsed time, ``*2`` the entity's own previous embedding, ``*3`` the
    counterpart's embedding and ``*4`` the event context (``k x d``).
    """

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    W4: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray
    V4: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        for name in BLOCKS:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        k, d = self.k, self.d
        expected = {"1": (k,), "2": (k, k), "3": (k, k), "4": (k, d)}
        for name in BLOCKS:
            arr = getattr(self, name)
            if arr.shape != expected[name[1]]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name[1]]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def k(self) -> int:
        return self.W1.shape[0]

    @property
    def d(self) -> int:
        return self.W4.shape[1]

    @classmethod
    def zeros(cls, k: int, d: int = 0, activation: str = "tanh") -> "ModelParams":
        return cls(**{name: np.zeros(block_shape(name, k, d)) for name in BLOCKS},
                   activation=activation)

    @classmethod
    def random(cls, k: int, d: int = 0, scale: float = 0.1, activation: str = "tanh",
               rng: np.random.Generator | None = None) -> "ModelParams":
        """Uniform draw in ``[-scale/sqrt(k), scale/sqrt(k)]`` for every block."""
        rng = np.random.default_rng() if rng is None else rng
        bound = scale / np.sqrt(k)
        blocks = {name: rng.uniform(-bound, bound, size=block_shape(name, k, d))
                  for name in BLOCKS}
        return cls(**blocks, activation=activation)

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCKS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: a.copy() for n, a in self.blocks().items()},
                           activation=self.activation)

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in BLOCKS])

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        out, pos = {}, 0
        for name in BLOCKS:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = np.asarray(flat[pos:pos + size], dtype=np.float64).reshape(shape)
            pos += size
        return ModelParams(**out, activation=self.activation)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "activation": self.activation,
            "blocks": {n: getattr(self, n).ravel().tolist() for n in BLOCKS},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        k, d = int(data["k"]), int(data["d"])
        blocks = {n: np.asarray(data["blocks"][n], dtype=np.float64).reshape(block_shape(n, k, d))
                  for n in BLOCKS}
        return cls(**blocks, activation=data.get("activation", "tanh"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.activation == other.activation and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in BLOCKS
        )


def block_shape(name: str, k: int, d: int) -> tuple[int, ...]:
    return {"1": (k,), "2": (k, k), "3": (k, k), "4": (k, d)}[name[1]]


class OutOfOrderEvent(ValueError):
    """An event is older than the last update of one of its entities."""


@dataclass
class DynamicState:
    f: np.ndarray
    g: np.ndarray
    last_user_time: np.ndarray
    last_item_time: np.ndarray

    @classmethod
    def initial(cls, m: int, n: int, k: int) -> "DynamicState":
        return cls(np.zeros((m, k)), np.zeros((n, k)), np.zeros(m), np.zeros(n))

    @property
    def frontier(self) -> float:
        """Time of the latest event absorbed into this state (0 if none)."""
        tmax = 0.0
        if self.last_user_time.size:
            tmax = max(tmax, float(self.last_user_time.max()))
        if self.last_item_time.size:
            tmax = max(tmax, float(self.last_item_time.max()))
        return tmax

    def copy(self) -> "DynamicState":
        return DynamicState(self.f.copy(), self.g.copy(),
                            self.last_user_time.copy(), self.last_item_time.copy())

    def last_change(self, u: int, i: int) -> float:
        return max(self.last_user_time[u], self.last_item_time[i])


def update_pair(params: ModelParams, f_old, g_old, dt_user, dt_item, q):
    """New (f, g) from pre-event embeddings; both sides read the old values."""
    zu = params.W1 * dt_user + params.W2 @ f_old + params.W3 @ g_old
    zi = params.V1 * dt_item + params.V2 @ g_old + params.V3 @ f_old
    if params.d:
        zu = zu + params.W4 @ q
        zi = zi + params.V4 @ q
    return activate(zu, params.activation), activate(zi, params.activation)


def apply_event(state: DynamicState, params: ModelParams, e: Event) -> DynamicState:
    """Absorb one event into ``state`` in place and return it."""
    u, i, t = e.user, e.item, e.time
    tu, ti = state.last_user_time[u], state.last_item_time[i]
    if t < tu or t < ti:
        raise OutOfOrderEvent(f"event at t={t} precedes last update ({tu}, {ti}) of ({u}, {i})")
    q = e.context_array(params.d)
    f_new, g_new = update_pair(params, state.f[u], state.g[i], t - tu, t - ti, q)
    state.f[u] = f_new
    state.g[i] = g_new
    state.last_user_time[u] = t
    state.last_item_time[i] = t
    return state


class EmbeddingTimeline:
    """Append-only per-entity record of post-event embedding snapshots."""

    def __init__(self, count: int, k: int):
        self.k = k
        self.times: list[list[float]] = [[] for _ in range(count)]
        self.values: list[list[np.ndarray]] = [[] for _ in range(count)]

    def __len__(self) -> int:
        return len(self.times)

    def record(self, entity: int, t: float, value: np.ndarray) -> None:
        times = self.times[entity]
        if times and t < times[-1]:
            raise OutOfOrderEvent(f"snapshot at {t} before {times[-1]}")
        if times and t == times[-1]:
            # simultaneous events: the later one supersedes
            self.values[entity][-1] = value.copy()
            return
        times.append(t)
        self.values[entity].append(value.copy())

    def at(self, entity: int, t: float) -> np.ndarray:
        """Embedding in force at ``t`` (right-continuous: includes an update at ``t``)."""
        idx = bisect_right(self.times[entity], t)
        return self.values[entity][idx - 1] if idx else np.zeros(self.k)

    def before(self, entity: int, t: float) -> np.ndarray:
        """Embedding just before ``t`` (excludes an update at ``t``)."""
        idx = bisect_left(self.times[entity], t)
        return self.values[entity][idx - 1] if idx else np.zeros(self.k)

    def last_time(self, entity: int, t: float, inclusive: bool = True) -> float:
        """Time of the latest update at or before ``t`` (0 if none)."""
        finder = bisect_right if inclusive else bisect_left
        idx = finder(self.times[entity], t)
        return self.times[entity][idx - 1] if idx else 0.0

    def change_times(self, entity: int, start: float, end: float) -> list[float]:
        times = self.times[entity]
        return times[bisect_right(times, start):bisect_left(times, end)]

    def snapshot_count(self) -> int:
        return sum(len(t) for t in self.times)


class Timelines(NamedTuple):
    users: EmbeddingTimeline
    items: EmbeddingTimeline


def embedding_at(timeline: EmbeddingTimeline, entity: int, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("query time must be nonnegative")
    return timeline.at(entity, t)


def replay(log: EventLog, params: ModelParams, state: DynamicState | None = None,
           timelines: Timelines | None = None) -> tuple[DynamicState, Timelines]:
    """Apply every event of ``log`` in order, recording each snapshot.

    Passing ``state``/``timelines`` continues an earlier replay.
    """
    k = params.k
    state = DynamicState.initial(log.m, log.n, k) if state is None else state
    if timelines is None:
        timelines = Timelines(EmbeddingTimeline(log.m, k), EmbeddingTimeline(log.n, k))
    for e in log.events:
        apply_event(state, params, e)
        timelines.users.record(e.user, e.time, state.f[e.user])
        timelines.items.record(e.item, e.time, state.g[e.item])
    return state, timelines
