"""Scikit-learn compatible wrapper around training, replay and prediction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import evaluate_from_state
from .prediction import predict_return_time, rank_items
from .state import ModelParams, replay
from .training import TrainConfig, train
from .validation import check_events, check_queries


class CoevolveRecommender(BaseEstimator):
    """Recommend items and interaction times from a timestamped event stream.

    ``fit`` learns the update networks and leaves the embeddings replayed to
    the end of the training events; ``update`` absorbs later events. Queries
    never mutate the fitted state.

    Parameters
    ----------
    k : int
        Embedding dimension.
    activation : {"tanh", "sigmoid"}
    window_size : int
        Events per truncated-BPTT window.
    nce_samples : int or None
        Non-event pairs sampled per window for the survival term; None
        samples five per observed pair.
    scale_survival : bool
        Reweight sampled survival terms to an unbiased estimate.
    learning_rate, clip_norm : float
        Adam step size and global gradient-norm bound.
    epochs : int
    n_users, n_items : int or None
        Catalogue sizes; inferred from the training ids when None.
    random_state : int
    """

    def __init__(self, k=4, activation="tanh", window_size=32, nce_samples=None,
                 scale_survival=True, learning_rate=1e-3, clip_norm=5.0, epochs=1,
                 n_users=None, n_items=None, random_state=0):
        self.k = k
        self.activation = activation
        self.window_size = window_size
        self.nce_samples = nce_samples
        self.scale_survival = scale_survival
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.epochs = epochs
        self.n_users = n_users
        self.n_items = n_items
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(k=self.k, activation=self.activation, window_size=self.window_size,
                           nce_samples=self.nce_samples, scale_survival=self.scale_survival,
                           learning_rate=self.learning_rate, clip_norm=self.clip_norm,
                           epochs=self.epochs, seed=self.random_state)

    def fit(self, X, y=None):
        log = check_events(X, self.n_users, self.n_items)
        result = train(log, self._train_config())
        self.params_: ModelParams = result.params
        self.trace_ = result.trace
        self.n_users_, self.n_items_, self.n_features_ = log.m, log.n, log.d
        self.state_, _ = replay(log, self.params_)
        self.seen_dims_ = log.dims()
        return self

    def update(self, X):
        """Absorb events that follow the fitted history."""
        check_is_fitted(self, "params_")
        log = check_events(X, self.n_users_, self.n_items_)
        self.state_, _ = replay(log, self.params_, state=self.state_)
        self.seen_dims_ |= log.dims()
        return self

    def rank(self, X) -> np.ndarray:
        """Item ids ordered best-first for each ``(user, time)`` query row."""
        check_is_fitted(self, "params_")
        users, times = check_queries(X, self.n_users_)
        return np.stack([rank_items(int(u), float(t), self.state_).order
                         for u, t in zip(users, times)])

    def predict(self, X) -> np.ndarray:
        """Most likely item for each ``(user, time)`` query row."""
        return self.rank(X)[:, 0]

    def predict_time(self, X) -> np.ndarray:
        """Expected next interaction time for each ``(user, item)`` row."""
        check_is_fitted(self, "params_")
        users, items = check_queries(X, self.n_users_, self.n_items_)
        return np.array([predict_return_time(int(u), int(i), self.state_)
                         for u, i in zip(users, items)])

    def score(self, X, y=None) -> float:
        """Negative mean rank of the true items of ``X`` (higher is better)."""
        check_is_fitted(self, "params_")
        log = check_events(X, self.n_users_, self.n_items_)
        metrics = evaluate_from_state(self.state_, log, self.params_, self.seen_dims_,
                                      predict_time=False)
        return -metrics.mar
