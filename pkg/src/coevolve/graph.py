"""Per-window computation graph and truncated backpropagation through time.

A graph holds two kinds of nodes:

* embedding nodes -- constants for embeddings entering the window, and one
  node per user or item update performed by a window event;
* terminal nodes -- log-intensities of observed events and survival segment
  contributions, each reading one user and one item embedding node.

Terminals only feed the scalar loss, so their adjoints are accumulated in a
single vectorised pass before embedding nodes are swept in reverse order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .events import Event
from .process import SCORE_CLAMP
from .state import BLOCKS, DynamicState, ModelParams, OutOfOrderEvent, activate, activation_grad

ENTRY, USER_UPDATE, ITEM_UPDATE = 0, 1, 2
LOG_INTENSITY, SURVIVAL = 0, 1
LAPSE_EPS = 1e-9

_KIND_NAMES = {
    "entry": ("embed", ENTRY),
    "user_update": ("embed", USER_UPDATE),
    "item_update": ("embed", ITEM_UPDATE),
    "log_intensity": ("term", LOG_INTENSITY),
    "survival": ("term", SURVIVAL),
}


class NumericalError(ArithmeticError):
    def __init__(self, node_kind: str, detail: str = ""):
        super().__init__(f"non-finite value at {node_kind} node{': ' + detail if detail else ''}")
        self.node_kind = node_kind


@dataclass
class GradBundle:
    grads: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "GradBundle":
        return cls({name: np.zeros_like(arr) for name, arr in params.blocks().items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.grads[n].ravel() for n in BLOCKS])

    def norm(self) -> float:
        return float(math.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle({n: g * factor for n, g in self.grads.items()})


class CompGraph:
    """Forward values of one window plus everything needed to differentiate them."""

    def __init__(self, params: ModelParams, entry_state: DynamicState):
        self.params = params
        self.entry_state = entry_state
        k = params.k
        self._values: list[np.ndarray] = []
        self._kind: list[int] = []
        self._self_in: list[int] = []
        self._other_in: list[int] = []
        self._dt: list[float] = []
        self._ctx: list[np.ndarray] = []
        self._entity: list[int] = []
        self.k = k

        self._t_kind: list[int] = []
        self._t_f: list[int] = []
        self._t_g: list[int] = []
        self._t_coef: list[float] = []
        self._t_weight: list[float] = []

        self.cur_user: dict[int, int] = {}
        self.cur_item: dict[int, int] = {}
        self.user_changes: dict[int, list[tuple[float, int]]] = {}
        self.item_changes: dict[int, list[tuple[float, int]]] = {}
        self.last_user: dict[int, float] = {}
        self.last_item: dict[int, float] = {}
        self.span: tuple[float, float] = (entry_state.frontier, entry_state.frontier)
        self.degenerate_events = 0
        self.survival_slices: dict[tuple[int, int], list[slice]] = {}
        self._term_cache = None

    # -- construction -------------------------------------------------------

    def _add_embed(self, kind, value, entity, self_in=-1, other_in=-1, dt=0.0, ctx=None) -> int:
        self._values.append(value)
        self._kind.append(kind)
        self._entity.append(entity)
        self._self_in.append(self_in)
        self._other_in.append(other_in)
        self._dt.append(dt)
        self._ctx.append(ctx)
        return len(self._values) - 1

    def _user_node(self, u: int) -> int:
        node = self.cur_user.get(u)
        if node is None:
            node = self._add_embed(ENTRY, self.entry_state.f[u].copy(), u)
            self.cur_user[u] = node
            t = float(self.entry_state.last_user_time[u])
            self.last_user[u] = t
            self.user_changes[u] = [(t, node)]
        return node

    def _item_node(self, i: int) -> int:
        node = self.cur_item.get(i)
        if node is None:
            node = self._add_embed(ENTRY, self.entry_state.g[i].copy(), i)
            self.cur_item[i] = node
            t = float(self.entry_state.last_item_time[i])
            self.last_item[i] = t
            self.item_changes[i] = [(t, node)]
        return node

    def _add_terminal(self, kind, f_node, g_node, coef, weight) -> None:
        self._t_kind.append(kind)
        self._t_f.append(f_node)
        self._t_g.append(g_node)
        self._t_coef.append(coef)
        self._t_weight.append(weight)
        self._term_cache = None

    def add_event(self, e: Event) -> None:
        params = self.params
        u, i, t = e.user, e.item, e.time
        fu, gi = self._user_node(u), self._item_node(i)
        tu, ti = self.last_user[u], self.last_item[i]
        if t < tu or t < ti:
            raise OutOfOrderEvent(f"event at t={t} precedes last update ({tu}, {ti}) of ({u}, {i})")
        lapse = t - max(tu, ti)
        if lapse <= 0.0:
            lapse = LAPSE_EPS
            self.degenerate_events += 1
        # log-intensity reads the pre-event embeddings
        self._add_terminal(LOG_INTENSITY, fu, gi, lapse, -1.0)

        q = e.context_array(params.d)
        f_old, g_old = self._values[fu], self._values[gi]
        zu = params.W1 * (t - tu) + params.W2 @ f_old + params.W3 @ g_old
        zi = params.V1 * (t - ti) + params.V2 @ g_old + params.V3 @ f_old
        if params.d:
            zu = zu + params.W4 @ q
            zi = zi + params.V4 @ q
        act = params.activation
        new_u = self._add_embed(USER_UPDATE, activate(zu, act), u, fu, gi, t - tu, q)
        new_i = self._add_embed(ITEM_UPDATE, activate(zi, act), i, gi, fu, t - ti, q)
        self.cur_user[u], self.cur_item[i] = new_u, new_i
        self.last_user[u], self.last_item[i] = t, t
        self.user_changes[u].append((t, new_u))
        self.item_changes[i].append((t, new_i))

    def add_survival(self, u: int, i: int, weight: float = 1.0) -> int:
        """Append the segment nodes integrating the (u, i) intensity over the span.

        Returns the number of segment nodes added.
        """
        self._user_node(u)
        self._item_node(i)
        start, end = self.span
        uch, ich = self.user_changes[u], self.item_changes[i]
        breaks = sorted({t for t, _ in uch if start < t < end} | {t for t, _ in ich if start < t < end})
        points = [start, *breaks, end]
        pu = pi = 0
        added = 0
        first = len(self._t_kind)
        for a, b in zip(points[:-1], points[1:]):
            while pu + 1 < len(uch) and uch[pu + 1][0] <= a:
                pu += 1
            while pi + 1 < len(ich) and ich[pi + 1][0] <= a:
                pi += 1
            if b <= a:
                continue
            t_prime = max(uch[pu][0], ich[pi][0])
            coef = 0.5 * (b - a) * (b + a - 2.0 * t_prime)
            self._add_terminal(SURVIVAL, uch[pu][1], ich[pi][1], coef, weight)
            added += 1
        self.survival_slices.setdefault((u, i), []).append(slice(first, first + added))
        return added

    # -- inspection ---------------------------------------------------------

    def count(self, kind: str) -> int:
        group, code = _KIND_NAMES[kind]
        source = self._kind if group == "embed" else self._t_kind
        return sum(1 for c in source if c == code)

    def inputs_of(self, node: int) -> tuple[int, int]:
        return self._self_in[node], self._other_in[node]

    def value(self, node: int) -> np.ndarray:
        return self._values[node]

    def update_nodes(self, kind: str = "user_update") -> list[int]:
        code = _KIND_NAMES[kind][1]
        return [n for n, c in enumerate(self._kind) if c == code]

    def duplicate_terminal(self, index: int) -> None:
        self._add_terminal(self._t_kind[index], self._t_f[index], self._t_g[index],
                           self._t_coef[index], self._t_weight[index])

    @property
    def n_terminals(self) -> int:
        return len(self._t_kind)

    def _terminals(self):
        if self._term_cache is None:
            values = np.array(self._values) if self._values else np.zeros((0, self.k))
            f_idx = np.array(self._t_f, dtype=np.intp)
            g_idx = np.array(self._t_g, dtype=np.intp)
            kind = np.array(self._t_kind, dtype=np.int8)
            coef = np.array(self._t_coef, dtype=np.float64)
            weight = np.array(self._t_weight, dtype=np.float64)
            if len(kind):
                raw = np.einsum("ij,ij->i", values[f_idx], values[g_idx])
            else:
                raw = np.zeros(0)
            clamped = np.abs(raw) > SCORE_CLAMP
            score = np.clip(raw, -SCORE_CLAMP, SCORE_CLAMP)
            is_log = kind == LOG_INTENSITY
            with np.errstate(over="ignore", invalid="ignore"):
                term = np.where(is_log, score + np.log(np.where(is_log, coef, 1.0)),
                                coef * np.exp(score))
            self._term_cache = (values, f_idx, g_idx, is_log, coef, weight, score, clamped, term)
        return self._term_cache

    @property
    def event_term(self) -> float:
        c = self._terminals()
        is_log, weight, term = c[3], c[5], c[8]
        return float(np.sum(weight[is_log] * term[is_log]))

    @property
    def survival_term(self) -> float:
        c = self._terminals()
        is_log, weight, term = c[3], c[5], c[8]
        return float(np.sum(weight[~is_log] * term[~is_log]))

    @property
    def loss(self) -> float:
        c = self._terminals()
        return float(np.sum(c[5] * c[8]))

    def survival_of(self, u: int, i: int) -> float:
        """Unweighted integrated intensity recorded for pair (u, i)."""
        term = self._terminals()[8]
        return float(sum(term[s].sum() for s in self.survival_slices.get((u, i), [])))

    @property
    def clamp_events(self) -> int:
        return int(np.sum(self._terminals()[7]))

    def exit_state(self) -> DynamicState:
        """Entry state advanced by every event of the window."""
        state = self.entry_state.copy()
        for u, node in self.cur_user.items():
            state.f[u] = self._values[node]
            state.last_user_time[u] = self.last_user[u]
        for i, node in self.cur_item.items():
            state.g[i] = self._values[node]
            state.last_item_time[i] = self.last_item[i]
        return state


def build_window_graph(events: Sequence[Event], entry_state: DynamicState, params: ModelParams,
                       survival_dims: Iterable[tuple[int, int]] = (),
                       weights: Iterable[float] | None = None,
                       span: tuple[float, float] | None = None) -> CompGraph:
    """Record the window's updates, event log-intensities and survival segments.

    ``span`` defaults to ``(entry_state.frontier, last event time)`` so that
    consecutive windows tile the timeline without gaps. Embeddings entering
    the window are constants.
    """
    graph = CompGraph(params, entry_state)
    for e in events:
        graph.add_event(e)
    if span is None:
        end = events[-1].time if len(events) else entry_state.frontier
        span = (entry_state.frontier, end)
    if span[0] < entry_state.frontier or span[1] < span[0]:
        raise ValueError(f"span {span} invalid for entry frontier {entry_state.frontier}")
    graph.span = (float(span[0]), float(span[1]))
    dims = list(survival_dims)
    weights = [1.0] * len(dims) if weights is None else list(weights)
    if len(weights) != len(dims):
        raise ValueError("weights must match survival_dims")
    for (u, i), w in zip(dims, weights):
        graph.add_survival(u, i, w)
    return graph


def backward(graph: CompGraph) -> tuple[float, GradBundle]:
    """Loss of the window and its exact gradient for every parameter block."""
    params = graph.params
    values, f_idx, g_idx, is_log, coef, weight, score, clamped, term = graph._terminals()
    if not np.all(np.isfinite(term)):
        bad = int(np.flatnonzero(~np.isfinite(term))[0])
        raise NumericalError("log_intensity" if is_log[bad] else "survival")
    loss = float(np.sum(weight * term))
    if not math.isfinite(loss):
        raise NumericalError("loss")

    k = graph.k
    n_nodes = len(graph._values)
    adj = np.zeros((n_nodes, k))
    if len(term):
        dscore = weight * np.where(is_log, 1.0, term)
        dscore[clamped] = 0.0
        np.add.at(adj, f_idx, dscore[:, None] * values[g_idx])
        np.add.at(adj, g_idx, dscore[:, None] * values[f_idx])

    grads = GradBundle.zeros_like(params)
    gw = grads.grads
    act = params.activation
    kinds, self_in, other_in = graph._kind, graph._self_in, graph._other_in
    for node in range(n_nodes - 1, -1, -1):
        kind = kinds[node]
        if kind == ENTRY:
            continue
        h = values[node]
        if not np.all(np.isfinite(h)):
            raise NumericalError("user_update" if kind == USER_UPDATE else "item_update")
        dz = adj[node] * activation_grad(h, act)
        if not dz.any():
            continue
        s_node, o_node = self_in[node], other_in[node]
        if kind == USER_UPDATE:
            n1, n2, n3, n4 = "W1", "W2", "W3", "W4"
            m2, m3 = params.W2, params.W3
        else:
            n1, n2, n3, n4 = "V1", "V2", "V3", "V4"
            m2, m3 = params.V2, params.V3
        gw[n1] += dz * graph._dt[node]
        gw[n2] += np.outer(dz, values[s_node])
        gw[n3] += np.outer(dz, values[o_node])
        if params.d:
            gw[n4] += np.outer(dz, graph._ctx[node])
        adj[s_node] += m2.T @ dz
        adj[o_node] += m3.T @ dz
    for name, g in gw.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError("gradient", name)
    return loss, grads
