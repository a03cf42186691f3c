"""Static item-item similarity / constraint matrices and neighbor selection."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

KINDS = ("ones", "pearson", "cosine", "jaccard")
MIN_CORATERS = 2


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    """Dense symmetric M x M matrix tagged with how it was built."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown similarity kind {self.kind!r}")

    @property
    def size(self):
        return self.values.shape[0]

    def row(self, i):
        return self.values[i]


def _symmetrize(full):
    """Copy the upper triangle onto the lower one so (i, j) and (j, i) match bitwise."""
    upper = np.triu(full)
    return upper + np.triu(upper, 1).T


def _co_rating_sums(view):
    """Pairwise sums over co-raters: counts, sum x_i, sum x_i^2, sum x_i x_j.

    Entry [i, j] of ``sx`` / ``sxx`` sums item i's centered values over the
    users who rated both i and j; the item-j sums are the transposes.
    """
    x = view.centered
    b = view.indicator
    n = (b.T @ b).toarray()
    sxy = (x.T @ x).toarray()
    sx = (x.T @ b).toarray()
    sxx = (x.multiply(x).T @ b).toarray()
    return n, sx, sxx, sxy


def pearson(view):
    """Pearson correlation between items over their co-raters.

    Each pair is correlated on the users who rated both items, around the
    means of those co-rated values. Pairs with fewer than two co-raters or
    no variance on either side get 0.
    """
    n, sx, sxx, sxy = _co_rating_sums(view)
    sy, syy = sx.T, sxx.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sxy - sx * sy / n
        vx = sxx - sx * sx / n
        vy = syy - sy * sy / n
        # one-pass variances of a constant vector leave rounding residue
        ok = (n >= MIN_CORATERS) & (vx > 1e-10 * sxx) & (vy > 1e-10 * syy)
        r = np.where(ok, cov / np.sqrt(vx * vy), 0.0)
    np.clip(r, -1.0, 1.0, out=r)
    return ConstraintMatrix(_symmetrize(r), "pearson")


def cosine(view):
    """Cosine between the items' centered vectors restricted to co-raters."""
    n, sx, sxx, sxy = _co_rating_sums(view)
    syy = sxx.T
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (n >= MIN_CORATERS) & (sxx > 0) & (syy > 0)
        r = np.where(ok, sxy / np.sqrt(sxx * syy), 0.0)
    np.clip(r, -1.0, 1.0, out=r)
    return ConstraintMatrix(_symmetrize(r), "cosine")


def jaccard(train):
    """|U_i & U_j| / |U_i | U_j| over the sets of users who rated each item."""
    m = train.num_items
    b = train.matrix()
    b.data[:] = 1.0
    inter = (b.T @ b).toarray()
    counts = np.diag(inter).copy()
    union = counts[:, None] + counts[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(union > 0, inter / union, 0.0)
    assert r.shape == (m, m)
    return ConstraintMatrix(_symmetrize(r), "jaccard")


def ones(m):
    if m < 1:
        raise InputError("ones() needs at least one item")
    return ConstraintMatrix(np.ones((m, m)), "ones")


def build(kind, train, view):
    """Construct a constraint matrix by name."""
    if kind == "ones":
        return ones(train.num_items)
    if kind == "pearson":
        return pearson(view)
    if kind == "cosine":
        return cosine(view)
    if kind == "jaccard":
        return jaccard(train)
    raise InputError(f"unknown similarity kind {kind!r}")


def top_k(sim_row, k, rated_mask, exclude=None):
    """Indices of the ``k`` rated items with the largest |similarity|.

    Ties go to the lower index. ``exclude`` (the item being predicted) is
    never returned. The result is in rank order.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    sim_row = np.asarray(sim_row, dtype=np.float64)
    cand = np.flatnonzero(np.asarray(rated_mask, dtype=bool))
    if exclude is not None:
        cand = cand[cand != exclude]
    order = np.lexsort((cand, -np.abs(sim_row[cand])))
    return cand[order[:k]]


_MAGIC = b"PNBMSIM1"


def save_binary(matrix, path):
    """Header (magic, M, kind) then the lower triangle row by row, float64 LE."""
    m = matrix.size
    rows, cols = np.tril_indices(m)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QB", m, KINDS.index(matrix.kind)))
        fh.write(matrix.values[rows, cols].astype("<f8").tobytes())


def load_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise InputError(f"{path} is not a similarity matrix file")
    m, kind = struct.unpack_from("<QB", blob, 8)
    tri = np.frombuffer(blob, dtype="<f8", offset=17)
    if tri.size != m * (m + 1) // 2:
        raise InputError(f"{path} is truncated")
    full = np.zeros((m, m))
    full[np.tril_indices(m)] = tri
    full = full + np.tril(full, -1).T
    return ConstraintMatrix(full, KINDS[kind])


def save_csv(matrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path, kind):
    rows = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            rows.append([float(v) for v in row])
    return ConstraintMatrix(np.array(rows, dtype=np.float64), kind)
