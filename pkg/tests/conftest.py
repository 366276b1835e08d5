import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(os.environ.get("PAIRRANK_DATA", Path(__file__).resolve().parents[1] / "data"))
ML100K_PATH = DATA_DIR / "ml-100k" / "u.data"
ML1M_PATH = DATA_DIR / "ml-1m" / "ratings.dat"

requires_ml100k = pytest.mark.skipif(
    not ML100K_PATH.exists(),
    reason=f"MovieLens 100k not found at {ML100K_PATH}; run scripts/fetch_movielens.py",
)
requires_ml1m = pytest.mark.skipif(
    not ML1M_PATH.exists(),
    reason=f"MovieLens 1m not found at {ML1M_PATH}; run scripts/fetch_movielens.py",
)


def random_comparisons(rng, d1=8, d2=10, m=60, canonical=True):
    """A valid random ComparisonSet for property tests."""
    from pairrank import ComparisonSet

    user = rng.integers(0, d1, size=m).astype(np.int32)
    pref = rng.integers(0, d2, size=m).astype(np.int32)
    oth = (pref + 1 + rng.integers(0, d2 - 1, size=m)).astype(np.int32) % d2
    label = (
        np.ones(m, dtype=np.int8)
        if canonical
        else (2 * rng.integers(0, 2, size=m) - 1).astype(np.int8)
    )
    return ComparisonSet(d1, d2, user, pref, oth, label)


def random_factors(rng, d1=8, d2=10, rank=3, scale=1.0):
    from pairrank import FactorPair

    return FactorPair(
        scale * rng.normal(size=(d1, rank)),
        scale * rng.normal(size=(d2, rank)),
    )
