"""Time-sensitive next-item ranking and return-time prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .process import SCORE_CLAMP
from .state import DynamicState


class ReplayFrontierError(ValueError):
    """The query time precedes events already absorbed into the state."""


@dataclass
class PredictionRanking:
    user: int
    time: float
    scores: np.ndarray
    log_scores: np.ndarray
    order: np.ndarray
    rank_of: np.ndarray

    def top(self, count: int = 10) -> np.ndarray:
        return self.order[:count]

    def average_rank(self, item: int) -> float:
        return average_rank(self.log_scores, item)


def item_alphas(state: DynamicState, u: int) -> np.ndarray:
    return np.exp(np.clip(state.g @ state.f[u], -SCORE_CLAMP, SCORE_CLAMP))


def pair_lapses(state: DynamicState, u: int, t: float) -> tuple[np.ndarray, np.ndarray]:
    t_prime = np.maximum(state.last_user_time[u], state.last_item_time)
    return t_prime, t - t_prime


def _check_frontier(state: DynamicState, t: float) -> None:
    if t < 0:
        raise ValueError("query time must be nonnegative")
    if state.frontier > t:
        raise ReplayFrontierError(f"query time {t} precedes state frontier {state.frontier}")


def log_density_scores(state: DynamicState, u: int, t: float) -> np.ndarray:
    """Log conditional density at ``t`` of user ``u`` interacting with each item.

    Ranking on the log scale avoids spurious ties when densities underflow.
    """
    _check_frontier(state, t)
    score = np.clip(state.g @ state.f[u], -SCORE_CLAMP, SCORE_CLAMP)
    alpha = np.exp(score)
    _, lapse = pair_lapses(state, u, t)
    with np.errstate(divide="ignore"):
        return score + np.log(lapse) - 0.5 * alpha * lapse * lapse


def density_scores(state: DynamicState, u: int, t: float) -> np.ndarray:
    """Conditional density at ``t`` of user ``u`` interacting with each item."""
    return np.exp(log_density_scores(state, u, t))


def average_rank(scores: np.ndarray, item: int) -> float:
    """Rank of ``item`` (1 = best), ties sharing the mean of the ranks they span."""
    above = int(np.sum(scores > scores[item]))
    tied = int(np.sum(scores == scores[item]))
    return 1.0 + above + 0.5 * (tied - 1)


def intensity_scores(state: DynamicState, u: int, t: float) -> np.ndarray:
    _check_frontier(state, t)
    _, lapse = pair_lapses(state, u, t)
    return item_alphas(state, u) * lapse


def rank_items(u: int, t: float, state: DynamicState) -> PredictionRanking:
    """Rank every item for user ``u`` at time ``t`` by conditional density.

    ``state`` must hold the embeddings just before ``t``. Ties go to the
    lower item id.
    """
    log_scores = log_density_scores(state, u, t)
    scores = np.exp(log_scores)
    ids = np.arange(scores.shape[0])
    order = np.lexsort((ids, -log_scores))
    rank_of = np.empty_like(order)
    rank_of[order] = np.arange(1, len(order) + 1)
    return PredictionRanking(u, t, scores, log_scores, order, rank_of)


def predict_return_time(u: int, i: int, state: DynamicState, t_now: float | None = None) -> float:
    """Expected next (u, i) interaction time from the pair's last change."""
    if t_now is not None:
        _check_frontier(state, t_now)
    alpha = float(np.exp(np.clip(state.f[u] @ state.g[i], -SCORE_CLAMP, SCORE_CLAMP)))
    t_prime = float(max(state.last_user_time[u], state.last_item_time[i]))
    return t_prime + float(np.sqrt(np.pi / (2.0 * alpha)))
