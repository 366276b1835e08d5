"""Rating-file parsing, comparison generation, and split/subsample protocols.

Raw user/item ids are reindexed to dense 0-based indices in order of first
appearance; the mapping is kept on the table for reporting.  All derived
comparisons are canonical (label +1, preferred item first) and carry the
rating gap behind each pair.  Every seeded operation is reproducible
bit-for-bit given (seed, input).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, Literal

import numpy as np

from .model import ComparisonSet

log = logging.getLogger(__name__)

TAB_SEPARATED = "tab"
DOUBLE_COLON_SEPARATED = "double-colon"
_SEPARATORS = {TAB_SEPARATED: "\t", DOUBLE_COLON_SEPARATED: "::"}


class DataFormatError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class RatingsTable:
    """(user, item, rating) triples with dense 0-based indices.

    At most one entry per (user, item).  `user_ids` / `item_ids`, when
    present, map each dense index back to the raw id it came from.
    Timestamps are carried through but never consulted by algorithms.
    """

    d1: int
    d2: int
    user: np.ndarray
    item: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray | None = None
    user_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "user", np.ascontiguousarray(self.user, dtype=np.int32))
        object.__setattr__(self, "item", np.ascontiguousarray(self.item, dtype=np.int32))
        object.__setattr__(self, "rating", np.ascontiguousarray(self.rating, dtype=np.float64))
        n = self.user.shape[0]
        if self.item.shape != (n,) or self.rating.shape != (n,):
            raise ValueError("rating columns must share one length")
        if n:
            if self.user.min() < 0 or self.user.max() >= self.d1:
                raise ValueError("user index out of range")
            if self.item.min() < 0 or self.item.max() >= self.d2:
                raise ValueError("item index out of range")
            keys = self.user.astype(np.int64) * self.d2 + self.item
            if np.unique(keys).shape[0] != n:
                raise DataFormatError("duplicate (user, item) rating")

    @property
    def n_entries(self) -> int:
        return int(self.user.shape[0])

    def __len__(self) -> int:
        return self.n_entries

    @cached_property
    def user_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(order, indptr): entry positions grouped by user."""
        order = np.argsort(self.user, kind="stable").astype(np.int64)
        counts = np.bincount(self.user, minlength=self.d1)
        indptr = np.zeros(self.d1 + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return order, indptr

    def user_entries(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(items, ratings) of one user, in original entry order."""
        order, indptr = self.user_index
        pos = order[indptr[i]:indptr[i + 1]]
        return self.item[pos], self.rating[pos]

    def user_rating_counts(self) -> np.ndarray:
        return np.bincount(self.user, minlength=self.d1)

    def select(self, pos: np.ndarray) -> "RatingsTable":
        """Same-dimension table restricted to the given entry positions."""
        return RatingsTable(
            self.d1, self.d2, self.user[pos], self.item[pos], self.rating[pos],
            timestamp=None if self.timestamp is None else self.timestamp[pos],
            user_ids=self.user_ids, item_ids=self.item_ids,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split protocol.

    mode "holdout": a uniform `fraction` of all entries goes to test.
    mode "per-user": each user keeps exactly `n_train` random entries for
    training and the rest for test; users with fewer than
    n_train + min_test entries are dropped entirely.
    """

    mode: Literal["holdout", "per-user"]
    fraction: float = 0.2
    n_train: int = 0
    min_test: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode == "holdout":
            if not 0.0 < self.fraction < 1.0:
                raise ValueError("holdout fraction must be in (0, 1)")
        elif self.mode == "per-user":
            if self.n_train < 1:
                raise ValueError("n_train must be positive")
            if self.min_test < 1:
                raise ValueError("min_test must be positive")
        else:
            raise ValueError(f"unknown split mode {self.mode!r}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def parse_ratings(source: str | IO, fmt: str = TAB_SEPARATED) -> RatingsTable:
    """Parse `user<sep>item<sep>rating[<sep>timestamp]` lines into a table.

    `source` is a path or an open text/byte stream.  Raw ids are mapped to
    dense indices in order of first appearance.
    """
    try:
        sep = _SEPARATORS[fmt]
    except KeyError:
        raise ValueError(f"unknown ratings format {fmt!r}") from None
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            return _parse_lines(fh, sep)
    return _parse_lines(source, sep)


def _parse_lines(lines: Iterable, sep: str) -> RatingsTable:
    user_map: dict[int, int] = {}
    item_map: dict[int, int] = {}
    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    stamps: list[int] = []
    has_stamp: bool | None = None
    n_lines = 0
    for lineno, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.rstrip("\r\n")
        if not line:
            continue
        parts = line.split(sep)
        if len(parts) not in (3, 4):
            raise DataFormatError(f"line {lineno}: expected 3 or 4 fields, got {len(parts)}")
        try:
            u_raw = int(parts[0])
            i_raw = int(parts[1])
            r = float(parts[2])
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        stamp_here = len(parts) == 4
        if has_stamp is None:
            has_stamp = stamp_here
        elif has_stamp != stamp_here:
            raise DataFormatError(f"line {lineno}: inconsistent timestamp column")
        if stamp_here:
            try:
                stamps.append(int(parts[3]))
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
        users.append(user_map.setdefault(u_raw, len(user_map)))
        items.append(item_map.setdefault(i_raw, len(item_map)))
        ratings.append(r)
        n_lines += 1
    if n_lines == 0:
        raise DataFormatError("empty ratings input")
    return RatingsTable(
        d1=len(user_map),
        d2=len(item_map),
        user=np.array(users, dtype=np.int32),
        item=np.array(items, dtype=np.int32),
        rating=np.array(ratings, dtype=np.float64),
        timestamp=np.array(stamps, dtype=np.int64) if has_stamp else None,
        user_ids=np.fromiter(user_map.keys(), dtype=np.int64, count=len(user_map)),
        item_ids=np.fromiter(item_map.keys(), dtype=np.int64, count=len(item_map)),
    )


# ---------------------------------------------------------------------------
# Ratings -> comparisons
# ---------------------------------------------------------------------------

def _user_pairs(items: np.ndarray, ratings: np.ndarray):
    """Strictly ordered item pairs of one user: (preferred, other, gap).

    Pairs are enumerated over item-index-sorted entries so the output is
    independent of entry order; ties contribute nothing.
    """
    order = np.argsort(items, kind="stable")
    it = items[order]
    rt = ratings[order]
    ia, ib = np.triu_indices(it.shape[0], k=1)
    diff = rt[ia] - rt[ib]
    keep = diff != 0
    ia, ib, diff = ia[keep], ib[keep], diff[keep]
    swap = diff < 0
    pref = np.where(swap, it[ib], it[ia])
    oth = np.where(swap, it[ia], it[ib])
    return pref.astype(np.int32), oth.astype(np.int32), np.abs(diff)


def ratings_to_comparisons(table: RatingsTable) -> ComparisonSet:
    """All strict pairwise preferences implied by the ratings.

    For every user and every item pair the user rated with different
    values, emits one canonical triple; equal ratings express no
    preference and are dropped.
    """
    users: list[np.ndarray] = []
    prefs: list[np.ndarray] = []
    oths: list[np.ndarray] = []
    gaps: list[np.ndarray] = []
    for i in range(table.d1):
        items, ratings = table.user_entries(i)
        if items.shape[0] < 2:
            continue
        p, o, g = _user_pairs(items, ratings)
        if p.shape[0] == 0:
            continue
        users.append(np.full(p.shape[0], i, dtype=np.int32))
        prefs.append(p)
        oths.append(o)
        gaps.append(g)
    if not users:
        return ComparisonSet.empty(table.d1, table.d2)
    user = np.concatenate(users)
    return ComparisonSet(
        table.d1, table.d2, user,
        np.concatenate(prefs), np.concatenate(oths),
        np.ones(user.shape[0], dtype=np.int8),
        gaps=np.concatenate(gaps),
    )


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def split_per_user(table: RatingsTable, spec: SplitSpec) -> tuple[RatingsTable, RatingsTable]:
    """Keep n_train random ratings per user for training, the rest for test.

    Users with fewer than n_train + min_test ratings are removed from both
    sides.  Deterministic for a fixed seed; users are visited in index
    order.
    """
    if spec.mode != "per-user":
        raise ValueError("split_per_user needs a per-user split spec")
    rng = np.random.default_rng(spec.seed)
    order, indptr = table.user_index
    train_pos: list[np.ndarray] = []
    test_pos: list[np.ndarray] = []
    for i in range(table.d1):
        pos = order[indptr[i]:indptr[i + 1]]
        if pos.shape[0] < spec.n_train + spec.min_test:
            continue
        perm = rng.permutation(pos.shape[0])
        train_pos.append(np.sort(pos[perm[:spec.n_train]]))
        test_pos.append(np.sort(pos[perm[spec.n_train:]]))
    if not train_pos:
        raise DataFormatError(
            f"no user has at least {spec.n_train + spec.min_test} ratings"
        )
    return (
        table.select(np.concatenate(train_pos)),
        table.select(np.concatenate(test_pos)),
    )


def split_holdout(table: RatingsTable, spec: SplitSpec) -> tuple[RatingsTable, RatingsTable]:
    """Hold out a uniform fraction of all entries as the test set."""
    if spec.mode != "holdout":
        raise ValueError("split_holdout needs a holdout split spec")
    rng = np.random.default_rng(spec.seed)
    n = table.n_entries
    n_test = int(round(spec.fraction * n))
    if n_test == 0 or n_test == n:
        raise DataFormatError("holdout fraction leaves an empty side")
    perm = rng.permutation(n)
    return (
        table.select(np.sort(perm[n_test:])),
        table.select(np.sort(perm[:n_test])),
    )


# ---------------------------------------------------------------------------
# Subsampling
# ---------------------------------------------------------------------------

def subsample_comparisons_largest_gap(table: RatingsTable, per_user: int) -> ComparisonSet:
    """Per user, the `per_user` comparisons with the largest rating gap.

    Gap ties break lexicographically on (preferred, other); users with
    fewer comparisons keep them all.
    """
    if per_user < 1:
        raise ValueError("per_user must be >= 1")
    users: list[np.ndarray] = []
    prefs: list[np.ndarray] = []
    oths: list[np.ndarray] = []
    gaps: list[np.ndarray] = []
    for i in range(table.d1):
        items, ratings = table.user_entries(i)
        if items.shape[0] < 2:
            continue
        p, o, g = _user_pairs(items, ratings)
        if p.shape[0] == 0:
            continue
        top = np.lexsort((o, p, -g))[:per_user]
        users.append(np.full(top.shape[0], i, dtype=np.int32))
        prefs.append(p[top])
        oths.append(o[top])
        gaps.append(g[top])
    if not users:
        return ComparisonSet.empty(table.d1, table.d2)
    user = np.concatenate(users)
    return ComparisonSet(
        table.d1, table.d2, user,
        np.concatenate(prefs), np.concatenate(oths),
        np.ones(user.shape[0], dtype=np.int8),
        gaps=np.concatenate(gaps),
    )


def subsample_comparisons_uniform(
    data: ComparisonSet, per_user: int, seed: int = 0
) -> ComparisonSet:
    """Per user, keep `per_user` triples uniformly without replacement."""
    if per_user < 1:
        raise ValueError("per_user must be >= 1")
    rng = np.random.default_rng(seed)
    order, indptr = data.user_index
    keep: list[np.ndarray] = []
    for i in range(data.d1):
        pos = order[indptr[i]:indptr[i + 1]]
        if pos.shape[0] <= per_user:
            keep.append(np.sort(pos))
        else:
            pick = rng.choice(pos.shape[0], size=per_user, replace=False)
            keep.append(np.sort(pos[pick]))
    pos = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
    return ComparisonSet(
        data.d1, data.d2, data.user[pos], data.preferred[pos], data.other[pos],
        data.label[pos], gaps=None if data.gaps is None else data.gaps[pos],
    )


# ---------------------------------------------------------------------------
# Binary-relevance protocol
# ---------------------------------------------------------------------------

def binarize(table: RatingsTable) -> RatingsTable:
    """Presence semantics: every rated item becomes relevance 1."""
    return RatingsTable(
        table.d1, table.d2, table.user, table.item,
        np.ones(table.n_entries, dtype=np.float64),
        timestamp=table.timestamp, user_ids=table.user_ids, item_ids=table.item_ids,
    )


def binary_comparisons(table: RatingsTable, per_user: int, seed: int = 0) -> ComparisonSet:
    """Sample relevant-vs-unrated comparisons from a binarized table.

    Per user, draws `per_user` (relevant, unrated) item pairs uniformly
    without replacement from the product set (all of them when there are
    fewer).  Users with no relevant or no unrated items contribute
    nothing.
    """
    if per_user < 1:
        raise ValueError("per_user must be >= 1")
    if table.n_entries and not np.all(table.rating == 1.0):
        raise ValueError("binary_comparisons needs a binarized table")
    rng = np.random.default_rng(seed)
    users: list[np.ndarray] = []
    prefs: list[np.ndarray] = []
    oths: list[np.ndarray] = []
    skipped = 0
    all_items = np.arange(table.d2, dtype=np.int32)
    for i in range(table.d1):
        rel, _ = table.user_entries(i)
        if rel.shape[0] == 0 or rel.shape[0] == table.d2:
            skipped += 1
            continue
        mask = np.ones(table.d2, dtype=bool)
        mask[rel] = False
        irr = all_items[mask]
        total = rel.shape[0] * irr.shape[0]
        if total <= per_user:
            pick = np.arange(total)
        else:
            pick = rng.choice(total, size=per_user, replace=False)
        users.append(np.full(pick.shape[0], i, dtype=np.int32))
        prefs.append(rel[pick // irr.shape[0]])
        oths.append(irr[pick % irr.shape[0]])
    if skipped:
        log.warning("binary_comparisons: %d users had no usable item pair", skipped)
    if not users:
        return ComparisonSet.empty(table.d1, table.d2)
    user = np.concatenate(users)
    return ComparisonSet(
        table.d1, table.d2, user,
        np.concatenate(prefs), np.concatenate(oths),
        np.ones(user.shape[0], dtype=np.int8),
    )
