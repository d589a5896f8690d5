"""Rayleigh intensity, survival integral, density and expected return time.

For a user/item pair the intensity after its last embedding change ``t'`` is
``alpha * (t - t')`` with ``alpha = exp(f_u . g_i)``, so every inter-event
gap of a pair is Rayleigh distributed while both embeddings stay frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .events import EventLog
from .state import Timelines

SCORE_CLAMP = 30.0


def clamp_score(s):
    return np.clip(s, -SCORE_CLAMP, SCORE_CLAMP)


def compatibility(f: np.ndarray, g: np.ndarray) -> float:
    """``exp(f . g)`` with the inner product clamped to +-30."""
    return math.exp(float(clamp_score(float(np.dot(f, g)))))


def _check_lapse(t_prime, t):
    if t < t_prime:
        raise ValueError(f"t={t} precedes segment start t'={t_prime}")


def intensity(alpha: float, t_prime: float, t: float) -> float:
    _check_lapse(t_prime, t)
    return alpha * (t - t_prime)


def cumulative_intensity(alpha: float, t_prime: float, a: float, b: float) -> float:
    """Integral of ``alpha * (tau - t')`` over ``[a, b]`` with ``t' <= a <= b``."""
    _check_lapse(t_prime, a)
    _check_lapse(a, b)
    return 0.5 * alpha * (b - a) * (b + a - 2.0 * t_prime)


def conditional_density(alpha: float, t_prime: float, t: float) -> float:
    _check_lapse(t_prime, t)
    lapse = t - t_prime
    return alpha * lapse * math.exp(-0.5 * alpha * lapse * lapse)


def expected_return_time(alpha: float, t_prime: float) -> float:
    """Mean of the Rayleigh next-event time, offset from ``t'``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return t_prime + math.sqrt(math.pi / (2.0 * alpha))


@dataclass
class Segment:
    start: float
    end: float
    t_prime: float
    alpha: float
    contribution: float


@dataclass
class SurvivalBreakdown:
    segments: list[Segment] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(s.contribution for s in self.segments))


def survival_integral(log: EventLog | None, timelines: Timelines, u: int, i: int,
                      window: tuple[float, float], extra_breaks=()) -> SurvivalBreakdown:
    """Integrated (u, i) intensity over ``window``, split where it is linear.

    Breakpoints are the update times of ``u`` or ``i`` inside the window
    (read from ``timelines``; ``log`` is accepted for symmetry with
    :func:`coevolve.events.relevant_times` and may be None). ``extra_breaks``
    inserts additional cut points, which leave the total unchanged.

    Within a segment ``alpha`` comes from the embeddings in force at the
    segment start and ``t'`` is the most recent update of either entity at
    or before that start, which may lie before the window.
    """
    start, end = window
    if end < start:
        raise ValueError(f"window start {start} after end {end}")
    users, items = timelines
    breaks = set(users.change_times(u, start, end))
    breaks.update(items.change_times(i, start, end))
    breaks.update(b for b in extra_breaks if start < b < end)
    points = [start, *sorted(breaks), end]

    out = SurvivalBreakdown()
    if start == end:
        return out
    for a, b in zip(points[:-1], points[1:]):
        t_prime = max(users.last_time(u, a), items.last_time(i, a))
        alpha = compatibility(users.at(u, a), items.at(i, a))
        out.segments.append(Segment(a, b, t_prime, alpha, cumulative_intensity(alpha, t_prime, a, b)))
    return out
