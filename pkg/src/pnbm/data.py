"""Rating data: loading, splitting, mean-centering and range mapping."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConfigError,
    DegenerateRangeError,
    DuplicateRatingError,
    EmptyDatasetError,
    InputError,
    ParseError,
)

logger = logging.getLogger(__name__)

FORMATS = ("tsv", "double-colon")


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Sparse user x item ratings stored as parallel triplet arrays.

    Triplets are kept sorted by (user, item) so that two datasets holding
    the same ratings are identical array-for-array, whatever order the
    ratings arrived in. Partitions produced by :func:`split` share the
    index space (and id maps) of their parent.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    num_users: int
    num_items: int
    scale_min: float
    scale_max: float
    user_ids: np.ndarray | None = field(default=None, repr=False)
    item_ids: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, users, items, ratings, num_users=None, num_items=None,
                    scale=None, user_ids=None, item_ids=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise InputError("users, items and ratings must be 1-d arrays of equal length")
        if num_users is None:
            num_users = int(users.max()) + 1 if users.size else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if items.size else 0
        if users.size:
            if users.min() < 0 or users.max() >= num_users:
                raise InputError("user index out of range")
            if items.min() < 0 or items.max() >= num_items:
                raise InputError("item index out of range")
        if scale is None:
            if ratings.size == 0:
                raise EmptyDatasetError("cannot infer a rating scale from no ratings")
            scale = (float(ratings.min()), float(ratings.max()))
        lo, hi = float(scale[0]), float(scale[1])
        if ratings.size and (ratings.min() < lo or ratings.max() > hi):
            raise InputError(f"ratings fall outside the scale [{lo}, {hi}]")

        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
        key = users * num_items + items
        if key.size > 1:
            dup = np.flatnonzero(key[1:] == key[:-1])
            if dup.size:
                k = dup[0]
                raise DuplicateRatingError(int(users[k]), int(items[k]))
        return cls(users, items, ratings, int(num_users), int(num_items), lo, hi,
                   user_ids, item_ids)

    def __len__(self):
        return int(self.ratings.size)

    @property
    def triplets(self):
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    @property
    def density(self):
        cells = self.num_users * self.num_items
        return len(self) / cells if cells else 0.0

    def subset(self, index):
        """Ratings selected by ``index`` (mask or positions), same index space."""
        return RatingDataset.from_arrays(
            self.users[index], self.items[index], self.ratings[index],
            self.num_users, self.num_items, (self.scale_min, self.scale_max),
            self.user_ids, self.item_ids,
        )

    def matrix(self):
        """User x item CSR matrix of the raw ratings."""
        return sp.csr_matrix((self.ratings, (self.users, self.items)),
                             shape=(self.num_users, self.num_items))

    def original_ids(self):
        """(user, item) arrays in the ids the ratings were loaded with."""
        u = self.users if self.user_ids is None else self.user_ids[self.users]
        i = self.items if self.item_ids is None else self.item_ids[self.items]
        return u, i


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.85
    valid_frac: float = 0.05
    test_frac: float = 0.10
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.valid_frac, self.test_frac)
        if any(f < 0 for f in fracs):
            raise ConfigError(f"split fractions must be nonnegative, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {fracs} (sum {sum(fracs)!r})")


def _parse_line(line, fmt):
    if fmt == "tsv":
        parts = line.split("\t")
    else:
        parts = line.split("::")
    if len(parts) not in (3, 4):
        raise ValueError
    return int(parts[0]), int(parts[1]), float(parts[2])


def _remap(raw_ids):
    ids, index = np.unique(raw_ids, return_inverse=True)
    return ids, index.astype(np.int64)


def _from_raw(raw_users, raw_items, ratings, scale=None):
    user_ids, users = _remap(np.asarray(raw_users, dtype=np.int64))
    item_ids, items = _remap(np.asarray(raw_items, dtype=np.int64))
    return RatingDataset.from_arrays(users, items, ratings, len(user_ids), len(item_ids),
                                     scale, user_ids, item_ids)


def load_ratings(path, format="tsv"):
    """Read a ratings file into a :class:`RatingDataset`.

    ``tsv`` lines are ``user<TAB>item<TAB>rating[<TAB>timestamp]``;
    ``double-colon`` lines are ``user::item::rating[::timestamp]``.
    Timestamps are ignored. User and item ids are remapped to contiguous
    ranges in ascending id order.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")

    raw_u, raw_i, raw_r = [], [], []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            try:
                u, i, r = _parse_line(line, format)
            except ValueError:
                raise ParseError(str(path), line_no, line) from None
            if not np.isfinite(r):
                raise ParseError(str(path), line_no, line)
            if (u, i) in seen:
                raise DuplicateRatingError(u, i, line_no)
            seen[(u, i)] = line_no
            raw_u.append(u)
            raw_i.append(i)
            raw_r.append(r)
    if not raw_r:
        raise EmptyDatasetError(f"{path} contains no ratings")
    ds = _from_raw(raw_u, raw_i, raw_r)
    logger.info("loaded %s: %d users, %d items, %d ratings", path, ds.num_users,
                ds.num_items, len(ds))
    return ds


def filter_min_counts(ds, min_item_ratings=0, min_user_ratings=0):
    """Drop items (then users) with too few ratings, and re-index.

    A single pass: items first, then users counted on what remains.
    """
    keep = np.ones(len(ds), dtype=bool)
    if min_item_ratings > 0:
        counts = np.bincount(ds.items, minlength=ds.num_items)
        keep &= counts[ds.items] >= min_item_ratings
    if min_user_ratings > 0:
        counts = np.bincount(ds.users[keep], minlength=ds.num_users)
        keep &= counts[ds.users] >= min_user_ratings
    if not keep.any():
        raise EmptyDatasetError("no ratings survive the count filter")
    u, i = ds.original_ids()
    return _from_raw(u[keep], i[keep], ds.ratings[keep], (ds.scale_min, ds.scale_max))


def restrict_users(ds, users):
    """Ratings of the given users only, re-indexed over what remains."""
    keep = np.isin(ds.users, np.asarray(users, dtype=np.int64))
    if not keep.any():
        return None
    u, i = ds.original_ids()
    return _from_raw(u[keep], i[keep], ds.ratings[keep], (ds.scale_min, ds.scale_max))


def split(ds, spec):
    """Shuffle the triplets once and cut them into train/valid/test."""
    if len(ds) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    n = len(ds)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(n * spec.train_frac))
    n_valid = min(int(round(n * spec.valid_frac)), n - n_train)
    parts = np.split(perm, [n_train, n_train + n_valid])
    return tuple(ds.subset(np.sort(p)) for p in parts)


def merge(*parts):
    """Union of partitions that share one index space."""
    first = parts[0]
    return RatingDataset.from_arrays(
        np.concatenate([p.users for p in parts]),
        np.concatenate([p.items for p in parts]),
        np.concatenate([p.ratings for p in parts]),
        first.num_users, first.num_items, (first.scale_min, first.scale_max),
        first.user_ids, first.item_ids,
    )


SPLIT_FILES = ("train.tsv", "valid.tsv", "test.tsv")


def write_split(directory, train, valid, test):
    """Write a three-file split manifest using the original ids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, (train, valid, test)):
        u, i = part.original_ids()
        with open(directory / name, "w", encoding="utf-8") as fh:
            for a, b, r in zip(u.tolist(), i.tolist(), part.ratings.tolist()):
                fh.write(f"{a}\t{b}\t{r!r}\n")


def read_split(directory):
    """Inverse of :func:`write_split`.

    Ids are remapped over the union of the three files, which reproduces
    the index space of the dataset the split was cut from.
    """
    directory = Path(directory)
    raw = []
    for name in SPLIT_FILES:
        path = directory / name
        if not path.exists():
            raise InputError(f"split manifest is missing {path}")
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                try:
                    rows.append(_parse_line(line, "tsv"))
                except ValueError:
                    raise ParseError(str(path), line_no, line) from None
        raw.append(np.array(rows, dtype=np.float64).reshape(-1, 3))
    allrows = np.concatenate(raw)
    if allrows.size == 0:
        raise EmptyDatasetError(f"split manifest {directory} is empty")
    whole = _from_raw(allrows[:, 0].astype(np.int64), allrows[:, 1].astype(np.int64),
                      allrows[:, 2])
    parts = []
    for rows in raw:
        users = np.searchsorted(whole.user_ids, rows[:, 0].astype(np.int64))
        items = np.searchsorted(whole.item_ids, rows[:, 1].astype(np.int64))
        parts.append(RatingDataset.from_arrays(
            users, items, rows[:, 2], whole.num_users, whole.num_items,
            (whole.scale_min, whole.scale_max), whole.user_ids, whole.item_ids))
    return tuple(parts)


@dataclass(frozen=True, eq=False)
class CenteredView:
    """Item-mean-centered training ratings with by-user and by-item indexes.

    ``user_indptr/user_items/user_values`` is a CSR layout (items sorted
    within each user); ``item_indptr/item_users/item_values`` the CSC
    counterpart. ``map_min``/``map_max`` are the global extremes of the
    centered training values and define the affine map onto [-1, 1].
    """

    item_means: np.ndarray
    item_counts: np.ndarray
    global_mean: float
    map_min: float
    map_max: float
    user_indptr: np.ndarray
    user_items: np.ndarray
    user_values: np.ndarray
    item_indptr: np.ndarray
    item_users: np.ndarray
    item_values: np.ndarray
    num_users: int
    num_items: int
    scale_min: float
    scale_max: float

    @property
    def centered(self):
        return sp.csr_matrix((self.user_values, self.user_items, self.user_indptr),
                             shape=(self.num_users, self.num_items))

    @property
    def indicator(self):
        ones = np.ones_like(self.user_values)
        return sp.csr_matrix((ones, self.user_items, self.user_indptr),
                             shape=(self.num_users, self.num_items))

    def user_row(self, u):
        lo, hi = self.user_indptr[u], self.user_indptr[u + 1]
        return self.user_items[lo:hi], self.user_values[lo:hi]

    def center_ratings(self, items, ratings):
        return np.asarray(ratings, dtype=np.float64) - self.item_means[items]

    def _map_params(self):
        if not self.map_max > self.map_min:
            raise DegenerateRangeError(
                f"centered ratings span no range (min={self.map_min}, max={self.map_max})")
        mid = (self.map_max + self.map_min) / 2
        return mid, self.map_max - mid

    def map_to_unit(self, x):
        mid, half = self._map_params()
        return (np.asarray(x, dtype=np.float64) - mid) / half

    def map_from_unit(self, y):
        mid, half = self._map_params()
        return np.asarray(y, dtype=np.float64) * half + mid


def center(train):
    """Build the :class:`CenteredView` of a training partition.

    Items with no training ratings get the global training mean.
    """
    if len(train) == 0:
        raise EmptyDatasetError("cannot center an empty training set")
    m = train.num_items
    counts = np.bincount(train.items, minlength=m)
    sums = np.bincount(train.items, weights=train.ratings, minlength=m)
    global_mean = float(train.ratings.sum() / len(train))
    means = np.full(m, global_mean)
    rated = counts > 0
    means[rated] = sums[rated] / counts[rated]

    values = train.ratings - means[train.items]
    user_indptr = np.zeros(train.num_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(train.users, minlength=train.num_users), out=user_indptr[1:])

    by_item = np.lexsort((train.users, train.items))
    item_indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=item_indptr[1:])

    return CenteredView(
        item_means=means,
        item_counts=counts.astype(np.int64),
        global_mean=global_mean,
        map_min=float(values.min()),
        map_max=float(values.max()),
        user_indptr=user_indptr,
        user_items=train.items.copy(),
        user_values=values,
        item_indptr=item_indptr,
        item_users=train.users[by_item],
        item_values=values[by_item],
        num_users=train.num_users,
        num_items=m,
        scale_min=train.scale_min,
        scale_max=train.scale_max,
    )


def map_to_unit(x, view):
    """Affine map of centered ratings onto [-1, 1] (min -> -1, max -> 1)."""
    return view.map_to_unit(x)


def map_from_unit(y, view):
    return view.map_from_unit(y)


def export_desk_movielens(path, min_item_ratings=0):
    """Write the ~100k-rating MovieLens sample bundled with ``rdatasets``.

    The output is a tsv file readable by :func:`load_ratings`. Returns the
    path. Needs the optional ``rdatasets`` package.
    """
    try:
        import rdatasets
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise InputError("exporting the desk dataset needs the 'rdatasets' package") from exc
    df = rdatasets.data("dslabs", "movielens")
    if min_item_ratings:
        counts = df.groupby("movieId")["rating"].transform("size")
        df = df[counts >= min_item_ratings]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for u, i, r, t in zip(df["userId"], df["movieId"], df["rating"], df["timestamp"]):
            fh.write(f"{u}\t{i}\t{float(r)!r}\t{t}\n")
    os.replace(tmp, path)
    return path
