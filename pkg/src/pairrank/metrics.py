"""Ranking evaluation: pairwise accuracy, NDCG@K, Precision@K.

Conventions, fixed for determinism: predicted orders break score ties by
ascending item index; pairwise accuracy requires a strict score
inequality (ties count as wrong); DCG uses gain 2^rating - 1 with a
log2(k+1) discount.  Per-user values average over the users for which
the metric is defined, and the number of skipped users is reported.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import build_stamp, write_json
from .ingestion import RatingsTable
from .model import ComparisonSet, FactorPair, margins

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedList:
    """One user's candidate items sorted by descending predicted score."""

    user: int
    items: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "items", np.ascontiguousarray(self.items, dtype=np.int64))
        if np.unique(self.items).shape[0] != self.items.shape[0]:
            raise ValueError("ranked items must be distinct")


def rank_items(factors: FactorPair, user: int, candidates: np.ndarray) -> RankedList:
    """Rank `candidates` for one user: score descending, ties by item index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = factors.user_scores(user, candidates)
    order = np.lexsort((candidates, -scores))
    return RankedList(user, candidates[order])


# ---------------------------------------------------------------------------
# Pairwise accuracy
# ---------------------------------------------------------------------------

def pairwise_accuracy(
    factors: FactorPair, test: ComparisonSet, min_gap: float = 0.0
) -> float:
    """Fraction of test comparisons ranked strictly correctly.

    With min_gap > 0, only pairs whose underlying rating gap reaches the
    threshold are scored; the test set must carry gaps for that.
    """
    if not test.is_canonical:
        test = test.canonicalize()
    z = margins(factors, test)
    if min_gap > 0.0:
        if test.gaps is None:
            raise ValueError("min_gap filtering needs a comparison set with gaps")
        keep = test.gaps >= min_gap
        z = z[keep]
    if z.shape[0] == 0:
        raise ValueError("no test comparisons pass the gap filter")
    return float(np.mean(z > 0.0))


# ---------------------------------------------------------------------------
# NDCG / Precision
# ---------------------------------------------------------------------------

def _dcg(gains: np.ndarray, k: int) -> float:
    top = gains[:k]
    return float(np.sum(top / np.log2(np.arange(2, top.shape[0] + 2))))


def ndcg_at_k(predicted: RankedList, true_ratings: RatingsTable, k: int) -> float:
    """DCG of the predicted order over the ideal DCG, gains 2^rating - 1.

    The candidate universe is the predicted list itself (the user's test
    items).  Raises when the ideal DCG is zero: the metric is undefined
    for a user with no positive gain.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    items, ratings = true_ratings.user_entries(predicted.user)
    lookup = dict(zip(items.tolist(), ratings.tolist()))
    gains = np.array(
        [2.0 ** lookup.get(int(j), 0.0) - 1.0 for j in predicted.items],
        dtype=np.float64,
    )
    ideal = _dcg(np.sort(gains)[::-1], k)
    if ideal == 0.0:
        raise ValueError(f"user {predicted.user}: ideal DCG is zero")
    return _dcg(gains, k) / ideal


def precision_at_k(predicted: RankedList, binary_ratings: RatingsTable, k: int) -> float:
    """Fraction of the top k predicted items that are relevant (rating 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    items, ratings = binary_ratings.user_entries(predicted.user)
    relevant = set(items[ratings > 0].tolist())
    top = predicted.items[:k]
    return sum(1 for j in top if int(j) in relevant) / k


def mean_metric_over_users(values: dict[int, float | None]) -> tuple[float, int]:
    """Mean over users with a defined value; returns (mean, skipped count)."""
    kept = [v for v in values.values() if v is not None]
    skipped = len(values) - len(kept)
    if not kept:
        raise ValueError("metric undefined for every user")
    return float(np.mean(kept)), skipped


# ---------------------------------------------------------------------------
# Per-user aggregation over a test table
# ---------------------------------------------------------------------------

def ndcg_over_users(
    factors: FactorPair, test_ratings: RatingsTable, k: int
) -> tuple[float, int, dict[int, float | None]]:
    """Mean NDCG@k over test users, ranking each user's own test items."""
    per_user: dict[int, float | None] = {}
    for i in np.unique(test_ratings.user):
        i = int(i)
        items, _ = test_ratings.user_entries(i)
        ranked = rank_items(factors, i, items)
        try:
            per_user[i] = ndcg_at_k(ranked, test_ratings, k)
        except ValueError:
            per_user[i] = None
    mean, skipped = mean_metric_over_users(per_user)
    if skipped:
        log.warning("ndcg@%d: skipped %d users with zero ideal DCG", k, skipped)
    return mean, skipped, per_user


def precision_over_users(
    factors: FactorPair,
    test_binary: RatingsTable,
    k: int,
    exclude: RatingsTable | None = None,
) -> tuple[float, int, dict[int, float | None]]:
    """Mean Precision@k over test users.

    Candidates are all items minus the user's entries in `exclude`
    (normally the training table), so recommendations are scored against
    unseen items only.
    """
    per_user: dict[int, float | None] = {}
    all_items = np.arange(test_binary.d2, dtype=np.int64)
    for i in np.unique(test_binary.user):
        i = int(i)
        if exclude is not None:
            seen, _ = exclude.user_entries(i)
            mask = np.ones(test_binary.d2, dtype=bool)
            mask[seen] = False
            candidates = all_items[mask]
        else:
            candidates = all_items
        if candidates.shape[0] == 0:
            per_user[i] = None
            continue
        ranked = rank_items(factors, i, candidates)
        per_user[i] = precision_at_k(ranked, test_binary, k)
    mean, skipped = mean_metric_over_users(per_user)
    if skipped:
        log.warning("precision@%d: skipped %d users with no candidates", k, skipped)
    return mean, skipped, per_user


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_metric_report(
    outdir: str | Path,
    aggregate: dict,
    per_user: dict[str, dict[int, float | None]],
    config_echo: dict | None = None,
    stem: str = "metrics",
) -> None:
    """JSON aggregate plus a per-user CSV with one column per metric."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "build": build_stamp(),
        "metrics": aggregate,
        "config": config_echo or {},
    }
    write_json(outdir / f"{stem}.json", payload)
    users = sorted({u for col in per_user.values() for u in col})
    names = sorted(per_user)
    with open(outdir / f"{stem}_per_user.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user"] + names)
        for u in users:
            row = [u]
            for name in names:
                v = per_user[name].get(u)
                row.append("" if v is None else repr(float(v)))
            writer.writerow(row)
