"""Sliding-window maximum-likelihood training with sampled survival terms."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .events import Event, EventLog
from .graph import LAPSE_EPS, GradBundle, NumericalError, backward, build_window_graph
from .process import SCORE_CLAMP
from .state import BLOCKS, DynamicState, ModelParams, activate

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    k: int = 4
    activation: str = "tanh"
    window_size: int = 32
    nce_samples: int | None = None  # None: 5 x distinct event dims in the window
    scale_survival: bool = True
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    epochs: int = 1
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.nce_samples is not None and self.nce_samples < 0:
            raise ValueError("nce_samples must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.epochs < 1 or self.k < 1:
            raise ValueError("epochs and k must be >= 1")


@dataclass
class LossBreakdown:
    event_term: float
    survival_term: float

    @property
    def total(self) -> float:
        return self.event_term + self.survival_term


class DegenerateEventError(ValueError):
    """An observed event has zero elapsed time since its pair's last change."""


def window_dims(events: Sequence[Event]) -> list[tuple[int, int]]:
    """Distinct (user, item) pairs observed in ``events``, in first-seen order."""
    return list(dict.fromkeys(e.dim for e in events))


def sample_survival_dims(event_dims, m: int, n: int, count: int,
                         rng: np.random.Generator) -> tuple[list[tuple[int, int]], int]:
    """Uniformly draw ``count`` pairs without replacement from the non-event pairs.

    Returns the sample and the number of non-event pairs it was drawn from.
    """
    taken = {u * n + i for u, i in event_dims}
    pool = m * n - len(taken)
    count = min(count, pool)
    if count <= 0:
        return [], pool
    if count * 4 < pool:
        # rejection keeps cost O(count) for the sparse case, independent of m * n
        chosen: dict[int, None] = {}
        while len(chosen) < count:
            draw = rng.integers(0, m * n, size=2 * (count - len(chosen)))
            for x in draw.tolist():
                if x not in taken and x not in chosen:
                    chosen[x] = None
                    if len(chosen) == count:
                        break
        flat = np.fromiter(chosen, dtype=np.int64, count=count)
    else:
        free = np.ones(m * n, dtype=bool)
        free[list(taken)] = False
        flat = np.flatnonzero(free)
        if count < pool:
            flat = rng.choice(flat, size=count, replace=False)
    return [(int(x // n), int(x % n)) for x in flat], pool


def survival_plan(events, m, n, nce_samples, scale_survival, rng):
    """Pairs whose survival is integrated for a window, with their weights."""
    dims = window_dims(events)
    count = 5 * len(dims) if nce_samples is None else nce_samples
    sampled, pool = sample_survival_dims(dims, m, n, count, rng)
    scale = pool / len(sampled) if (scale_survival and sampled) else 1.0
    return dims + sampled, [1.0] * len(dims) + [scale] * len(sampled)


def window_objective(events: Sequence[Event], entry_state: DynamicState, params: ModelParams,
                     sampled_dims=(), scale_survival: bool = True,
                     span: tuple[float, float] | None = None,
                     allow_degenerate: bool = True) -> LossBreakdown:
    """Negative log-likelihood of a window.

    The event term sums ``-log intensity`` over observed events; the survival
    term integrates every observed pair plus ``sampled_dims`` over the span.
    With ``scale_survival`` the sampled part is reweighted by
    ``(non-event pairs) / len(sampled_dims)``.
    """
    dims = window_dims(events)
    sampled = list(sampled_dims)
    if set(sampled) & set(dims):
        raise ValueError("sampled dims must exclude the window's event dims")
    weight = 1.0
    if scale_survival and sampled:
        m, n = entry_state.f.shape[0], entry_state.g.shape[0]
        weight = (m * n - len(dims)) / len(sampled)
    graph = build_window_graph(events, entry_state, params, dims + sampled,
                               [1.0] * len(dims) + [weight] * len(sampled), span)
    if graph.degenerate_events and not allow_degenerate:
        raise DegenerateEventError(f"{graph.degenerate_events} events with zero lapse")
    return LossBreakdown(graph.event_term, graph.survival_term)


class Adam:
    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(a) for n, a in params.blocks().items()}
        self.v = {n: np.zeros_like(a) for n, a in params.blocks().items()}
        self.t = 0

    def step(self, params: ModelParams, grads: GradBundle) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in BLOCKS:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            setattr(params, name, getattr(params, name) - update)


def clip_gradients(grads: GradBundle, clip_norm: float) -> tuple[GradBundle, float, bool]:
    """Rescale to global norm ``clip_norm`` when exceeded; returns (grads, pre-clip norm, clipped)."""
    norm = grads.norm()
    if norm > clip_norm:
        return grads.scaled(clip_norm / norm), norm, True
    return grads, norm, False


TRACE_FIELDS = ("epoch", "window", "event_term", "survival_term", "total",
                "grad_norm", "clipped", "clamp_events", "degenerate_events")


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[dict] = field(default_factory=list)
    initial_params: ModelParams | None = None

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
            writer.writeheader()
            for row in self.trace:
                writer.writerow({k: row[k] for k in TRACE_FIELDS})


def windows(events: Sequence[Event], size: int):
    for start in range(0, len(events), size):
        yield events[start:start + size]


def train_step(batch, state: DynamicState, params: ModelParams, opt: Adam, cfg: TrainConfig,
               m: int, n: int, rng: np.random.Generator):
    """One window: sample survival pairs, differentiate, clip and update ``params`` in place.

    Returns (graph, loss, pre-clip gradient norm, clipped flag).
    """
    dims, weights = survival_plan(batch, m, n, cfg.nce_samples, cfg.scale_survival, rng)
    graph = build_window_graph(batch, state, params, dims, weights)
    loss, grads = backward(graph)
    grads, norm, clipped = clip_gradients(grads, cfg.clip_norm)
    opt.step(params, grads)
    return graph, loss, norm, clipped


def train(log: EventLog, cfg: TrainConfig, init: ModelParams | None = None) -> TrainResult:
    """Fit model parameters to ``log`` by truncated BPTT over consecutive windows.

    Each epoch replays the log from the zero state; a window's entry state is
    the forward state left by the previous window.
    """
    if len(log) == 0:
        raise ValueError("cannot train on an empty event log")
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        params = ModelParams.random(cfg.k, log.d, scale=cfg.init_scale,
                                    activation=cfg.activation, rng=rng)
    else:
        params = init.copy()
    result = TrainResult(params=params, initial_params=params.copy())
    opt = Adam(params, lr=cfg.learning_rate)
    events = log.events

    for epoch in range(cfg.epochs):
        state = DynamicState.initial(log.m, log.n, params.k)
        for w, batch in enumerate(windows(events, cfg.window_size)):
            try:
                graph, loss, norm, clipped = train_step(batch, state, params, opt, cfg,
                                                        log.m, log.n, rng)
            except NumericalError:
                logger.error("numerical failure in epoch %d window %d", epoch, w)
                raise
            state = graph.exit_state()
            result.trace.append({
                "epoch": epoch, "window": w,
                "event_term": graph.event_term, "survival_term": graph.survival_term,
                "total": loss, "grad_norm": norm, "clipped": int(clipped),
                "clamp_events": graph.clamp_events,
                "degenerate_events": graph.degenerate_events,
            })
        logger.info("epoch %d: mean window loss %.4f", epoch,
                    np.mean([r["total"] for r in result.trace if r["epoch"] == epoch]))
    result.params = params
    return result


def sequence_nll(log: EventLog, params: ModelParams, state: DynamicState | None = None,
                 span_end: float | None = None) -> LossBreakdown:
    """Exact negative log-likelihood of ``log`` with every pair's survival.

    Continues from ``state`` (zero state by default); the survival span runs
    from the state's frontier to ``span_end`` (last event time by default).
    Costs O(m + n) per event.
    """
    m, n = log.m, log.n
    state = DynamicState.initial(m, n, params.k) if state is None else state.copy()
    start = state.frontier
    end = (log.events[-1].time if len(log) else start) if span_end is None else span_end

    def scores(rows=None, cols=None):
        if rows is not None:
            return np.exp(np.clip(state.g @ state.f[rows], -SCORE_CLAMP, SCORE_CLAMP))
        return np.exp(np.clip(state.f @ state.g[cols], -SCORE_CLAMP, SCORE_CLAMP))

    alpha = np.exp(np.clip(state.f @ state.g.T, -SCORE_CLAMP, SCORE_CLAMP))
    t_prime = np.maximum.outer(state.last_user_time, state.last_item_time)
    acc = np.full((m, n), start)
    survival = 0.0
    event_term = 0.0
    for e in log.events:
        u, i, t = e.user, e.item, e.time
        for sl in ((u, slice(None)), (slice(None), i)):
            a, tp = acc[sl], t_prime[sl]
            survival += float(np.sum(0.5 * alpha[sl] * (t - a) * (t + a - 2.0 * tp)))
            acc[sl] = t
        lapse = t - t_prime[u, i]
        if lapse <= 0.0:
            lapse = LAPSE_EPS
        event_term -= math.log(alpha[u, i]) + math.log(lapse)
        q = e.context_array(params.d)
        f_old, g_old = state.f[u].copy(), state.g[i].copy()
        zu = params.W1 * (t - state.last_user_time[u]) + params.W2 @ f_old + params.W3 @ g_old
        zi = params.V1 * (t - state.last_item_time[i]) + params.V2 @ g_old + params.V3 @ f_old
        if params.d:
            zu, zi = zu + params.W4 @ q, zi + params.V4 @ q
        state.f[u] = activate(zu, params.activation)
        state.g[i] = activate(zi, params.activation)
        state.last_user_time[u] = state.last_item_time[i] = t
        alpha[u, :] = scores(rows=u)
        alpha[:, i] = scores(cols=i)
        t_prime[u, :] = t
        t_prime[:, i] = t
    survival += float(np.sum(0.5 * alpha * (end - acc) * (end + acc - 2.0 * t_prime)))
    return LossBreakdown(event_term, survival)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
