"""Neighborhood rating prediction from an item-item similarity matrix."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .similarity import top_k


def _neighborhood(S_i, u, view, exclude, neighbor_limit, values=None):
    items, vals = view.user_row(u)
    if values is not None:
        vals = values[view.user_indptr[u]:view.user_indptr[u + 1]]
    keep = items != exclude
    items, vals = items[keep], vals[keep]
    s = np.asarray(S_i, dtype=np.float64)[items]
    if neighbor_limit is not None and len(items) > neighbor_limit:
        mask = np.zeros(view.num_items, dtype=bool)
        mask[items] = True
        chosen = np.sort(top_k(S_i, neighbor_limit, mask, exclude))
        sel = np.searchsorted(items, chosen)
        items, vals, s = items[sel], vals[sel], s[sel]
    return s, vals


def _quotient(S_i, u, view, exclude, neighbor_limit, values=None):
    s, vals = _neighborhood(S_i, u, view, exclude, neighbor_limit, values)
    den = float(np.abs(s).sum())
    if den == 0.0:
        return 0.0, 0.0
    return float(s @ vals) / den, den


def predict_centered(S_i, u, view, exclude, neighbor_limit=None):
    """Similarity-weighted mean of user ``u``'s centered ratings.

    ``exclude`` is the item being predicted; it never counts as its own
    neighbor. Returns 0 when no neighbor carries weight.
    """
    return _quotient(S_i, u, view, exclude, neighbor_limit)[0]


def predict_tanh(S_i, u, view, exclude, neighbor_limit=None):
    """tanh of the neighborhood quotient over range-mapped ratings."""
    mapped = view.map_to_unit(view.user_values)
    z, _ = _quotient(S_i, u, view, exclude, neighbor_limit, mapped)
    return float(np.tanh(z))


def predict_rating(S_i, u, view, i, neighbor_limit=None, variant="linear", clamp=True):
    """Rating on the dataset scale: item mean plus the neighborhood offset.

    The tanh variant's output is mapped back from [-1, 1] before the mean
    is added. Empty neighborhoods, and items never seen in training, get
    the item mean.
    """
    mean = float(view.item_means[i])
    if view.item_counts[i] == 0:
        value = mean
    elif variant == "tanh":
        mapped = view.map_to_unit(view.user_values)
        z, den = _quotient(S_i, u, view, i, neighbor_limit, mapped)
        value = mean + float(view.map_from_unit(np.tanh(z))) if den > 0 else mean
    else:
        value = mean + predict_centered(S_i, u, view, i, neighbor_limit)
    if clamp:
        value = min(max(value, view.scale_min), view.scale_max)
    return value


@dataclass
class BatchPrediction:
    """Predictions for many (user, item) pairs.

    ``raw`` is the model output before un-centering: the quotient for the
    linear model, its tanh for the tanh model. ``ratings`` are clamped to
    the dataset scale; ``n_clamped`` counts how many needed it.
    """

    ratings: np.ndarray
    raw: np.ndarray
    has_neighbors: np.ndarray
    n_clamped: int


def _batch_z(sim, view, values, users, items, limit, jobs):
    n = len(users)
    z = np.empty(n)
    den = np.empty(n)
    lim = -1 if limit is None else int(limit)
    args = (sim, view.user_indptr, view.user_items, values)
    if jobs <= 1 or n < 2 * jobs:
        _kernels.predict_batch(*args, users, items, lim, z, den)
    else:
        bounds = np.linspace(0, n, jobs + 1).astype(np.int64)

        def run(c):
            lo, hi = bounds[c], bounds[c + 1]
            _kernels.predict_batch(*args, users[lo:hi], items[lo:hi], lim, z[lo:hi], den[lo:hi])

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, range(jobs)))
    return z, den


def predict_many(sim, view, users, items, neighbor_limit=200, variant="linear", jobs=1):
    """Vectorised :func:`predict_rating` over a dense similarity matrix."""
    users = np.ascontiguousarray(users, dtype=np.int64)
    items = np.ascontiguousarray(items, dtype=np.int64)
    if variant == "tanh":
        values = view.map_to_unit(view.user_values)
    else:
        values = view.user_values
    z, den = _batch_z(sim, view, values, users, items, neighbor_limit, jobs)
    has = (den > 0) & (view.item_counts[items] > 0)
    if variant == "tanh":
        raw = np.tanh(z)
        offset = np.where(has, view.map_from_unit(raw), 0.0)
    else:
        raw = z
        offset = np.where(has, z, 0.0)
    ratings = view.item_means[items] + offset
    clamped = np.clip(ratings, view.scale_min, view.scale_max)
    return BatchPrediction(clamped, raw, has, int(np.count_nonzero(clamped != ratings)))
