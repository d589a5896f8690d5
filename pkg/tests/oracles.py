"""Independent reference computations used by the test-suite.

Nothing here calls into the package's update, graph or likelihood code; the
update and likelihood formulas are re-derived directly so that agreement is meaningful.
"""

import math

import numpy as np

from coevolve.events import Event
from coevolve.state import DynamicState, ModelParams


def _act(z, activation):
    return np.tanh(z) if activation == "tanh" else 1.0 / (1.0 + np.exp(-z))


def naive_history(events, params, entry=None, m=None, n=None):
    """Per-entity change lists [(time, embedding)] after replaying ``events``.

    Each list starts with the entry snapshot (time, value); ``pre`` holds
    (t', f_u(t-), g_i(t-)) for every event in order.
    """
    if entry is None:
        entry = DynamicState.initial(m, n, params.k)
    users = {u: [(float(entry.last_user_time[u]), entry.f[u].copy())] for u in range(entry.f.shape[0])}
    items = {i: [(float(entry.last_item_time[i]), entry.g[i].copy())] for i in range(entry.g.shape[0])}
    pre = []
    for e in events:
        tu, fu = users[e.user][-1]
        ti, gi = items[e.item][-1]
        pre.append((max(tu, ti), fu, gi))
        q = np.asarray(e.context if e.context is not None else (), dtype=float)
        zu = params.W1 * (e.time - tu) + params.W2.dot(fu) + params.W3.dot(gi)
        zi = params.V1 * (e.time - ti) + params.V2.dot(gi) + params.V3.dot(fu)
        if params.d:
            zu = zu + params.W4.dot(q)
            zi = zi + params.V4.dot(q)
        users[e.user].append((e.time, _act(zu, params.activation)))
        items[e.item].append((e.time, _act(zi, params.activation)))
    return users, items, pre


def _in_force(changes, t):
    """Latest (time, value) with time <= t; later duplicates at equal time win."""
    best = changes[0]
    for c in changes:
        if c[0] <= t:
            best = c
    return best


def brute_force_nll(events, params, m, n, span, entry=None, dims=None, weights=None):
    """Negative log-likelihood with every pair's survival, evaluated pointwise.

    For each pair, the set of times where either embedding changes is
    collected by scanning the full history; between consecutive cut points
    the intensity is exp(f.g) * (tau - t') with t' the last change at or
    before the segment start.
    """
    users, items, pre = naive_history(events, params, entry, m, n)
    event_term = 0.0
    for e, (t_prime, fu, gi) in zip(events, pre):
        s = float(np.clip(fu.dot(gi), -30, 30))
        lapse = e.time - t_prime
        event_term -= s + math.log(lapse if lapse > 0 else 1e-9)
    start, end = span
    dims = [(u, i) for u in range(m) for i in range(n)] if dims is None else dims
    weights = [1.0] * len(dims) if weights is None else weights
    survival = 0.0
    for (u, i), w in zip(dims, weights):
        cuts = sorted({t for t, _ in users[u] + items[i] if start < t < end})
        points = [start] + cuts + [end]
        total = 0.0
        for a, b in zip(points[:-1], points[1:]):
            if b <= a:
                continue
            tu, fu = _in_force(users[u], a)
            ti, gi = _in_force(items[i], a)
            tp = max(tu, ti)
            alpha = math.exp(float(np.clip(fu.dot(gi), -30, 30)))
            total += alpha * ((b - tp) ** 2 - (a - tp) ** 2) / 2.0
        survival += w * total
    return event_term, survival


def pointwise_intensity(timelines, u, i, tau):
    """exp(f.g) * (tau - t') read from replay timelines at a single instant."""
    users, items = timelines
    t_prime = max(users.last_time(u, tau, inclusive=False), items.last_time(i, tau, inclusive=False))
    f = users.before(u, tau)
    g = items.before(i, tau)
    return math.exp(float(np.clip(f.dot(g), -30, 30))) * (tau - t_prime)


def random_events(rng, m, n, count, d=0, t0=0.0, t1=10.0, ties=False):
    times = np.sort(rng.uniform(t0, t1, size=count))
    if ties and count > 1:
        times[1] = times[0]
    return [
        Event(int(rng.integers(m)), int(rng.integers(n)), float(t),
              tuple(rng.standard_normal(d).tolist()) if d else None)
        for t in times
    ]


def random_state(rng, m, n, k, tmax=1.0):
    return DynamicState(rng.uniform(-1, 1, (m, k)), rng.uniform(-1, 1, (n, k)),
                        rng.uniform(0, tmax, m), rng.uniform(0, tmax, n))


def random_params(rng, k, d=0, scale=1.0, activation="tanh"):
    return ModelParams.random(k, d, scale=scale, activation=activation, rng=rng)


def central_difference(fn, flat, rel_step=1e-4, richardson=True):
    """Central differences per coordinate.

    With ``richardson`` the steps h and h/2 are combined as (4 D(h/2) - D(h)) / 3,
    cancelling the O(h^2) truncation term that otherwise dominates on small,
    strongly curved entries.
    """
    def diff(j, h):
        up = flat.copy()
        up[j] += h
        down = flat.copy()
        down[j] -= h
        return (fn(up) - fn(down)) / (2.0 * h)

    grad = np.empty_like(flat)
    for j in range(flat.size):
        h = rel_step * max(1.0, abs(flat[j]))
        grad[j] = (4.0 * diff(j, h / 2) - diff(j, h)) / 3.0 if richardson else diff(j, h)
    return grad
