"""Input coercion helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .events import EventLog, EventLogError


def check_events(X, n_users: int | None = None, n_items: int | None = None,
                 horizon: float | None = None) -> EventLog:
    """Coerce ``X`` to an :class:`EventLog`.

    ``X`` is either an EventLog (returned as is when the sizes agree) or a
    2-D array with columns ``user, item, time[, context...]``.
    """
    if isinstance(X, EventLog):
        if n_users is not None and X.m != n_users or n_items is not None and X.n != n_items:
            raise EventLogError(f"log sizes ({X.m}, {X.n}) differ from ({n_users}, {n_items})")
        return X
    arr = check_array(X, dtype=np.float64, ensure_min_samples=0)
    if arr.shape[1] < 3:
        raise ValueError(f"expected at least 3 columns (user, item, time), got {arr.shape[1]}")
    ids = arr[:, :2]
    if not np.array_equal(ids, np.round(ids)):
        raise EventLogError("user and item ids must be integers")
    users, items = ids[:, 0].astype(np.int64), ids[:, 1].astype(np.int64)
    m = int(users.max()) + 1 if n_users is None and len(arr) else (n_users or 0)
    n = int(items.max()) + 1 if n_items is None and len(arr) else (n_items or 0)
    context = arr[:, 3:] if arr.shape[1] > 3 else None
    return EventLog.from_arrays(users, items, arr[:, 2], m, n, context=context, horizon=horizon)


def check_queries(X, n_first: int, n_second: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split a ``(Q, 2)`` array into an integer id column and a second column.

    The second column is cast to int when ``n_second`` is given (an id),
    otherwise kept as float (a time).
    """
    arr = check_array(X, dtype=np.float64)
    if arr.shape[1] != 2:
        raise ValueError(f"expected 2 columns, got {arr.shape[1]}")
    first = arr[:, 0].astype(np.int64)
    if np.any(first < 0) or np.any(first >= n_first):
        raise ValueError(f"ids outside [0, {n_first})")
    if n_second is None:
        return first, arr[:, 1]
    second = arr[:, 1].astype(np.int64)
    if np.any(second < 0) or np.any(second >= n_second):
        raise ValueError(f"ids outside [0, {n_second})")
    return first, second
