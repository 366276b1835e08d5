"""On-disk formats: comparison files, factor checkpoints, traces, reports.

Binary layouts (all little-endian):

  comparisons (magic ``PRCMP1``): 6 magic bytes, then d1, d2, m as u64,
  then m records of three u32 (user, preferred, other).  Labels are
  implied +1; sets are canonicalized on write.

  factor checkpoint (magic ``PRFAC1``): 6 magic bytes, then d1, d2, r as
  u64, then the d1 x r user block and the d2 x r item block as f64 rows.

Text sidecars: id maps are two-column ``dense_index<TAB>raw_id`` files,
traces are CSV with header ``iter,primal_objective,elapsed_seconds``, and
metric/report aggregates are JSON.
"""

from __future__ import annotations

import json
import struct
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .ingestion import DataFormatError, RatingsTable
from .model import ComparisonSet, FactorPair

COMPARISON_MAGIC = b"PRCMP1"
FACTOR_MAGIC = b"PRFAC1"


def write_comparisons(path: str | Path, data: ComparisonSet) -> None:
    data = data.canonicalize()
    with open(path, "wb") as fh:
        fh.write(COMPARISON_MAGIC)
        fh.write(struct.pack("<QQQ", data.d1, data.d2, data.m))
        rec = np.empty((data.m, 3), dtype="<u4")
        rec[:, 0] = data.user
        rec[:, 1] = data.preferred
        rec[:, 2] = data.other
        rec.tofile(fh)


def read_comparisons(path: str | Path) -> ComparisonSet:
    with open(path, "rb") as fh:
        magic = fh.read(len(COMPARISON_MAGIC))
        if magic != COMPARISON_MAGIC:
            raise DataFormatError(f"{path}: not a comparison file (bad magic)")
        d1, d2, m = struct.unpack("<QQQ", fh.read(24))
        rec = np.fromfile(fh, dtype="<u4", count=3 * m)
    if rec.shape[0] != 3 * m:
        raise DataFormatError(f"{path}: truncated comparison file")
    rec = rec.reshape(m, 3)
    return ComparisonSet(
        int(d1), int(d2),
        rec[:, 0].astype(np.int32), rec[:, 1].astype(np.int32),
        rec[:, 2].astype(np.int32), np.ones(m, dtype=np.int8),
    )


def write_factors(path: str | Path, factors: FactorPair) -> None:
    with open(path, "wb") as fh:
        fh.write(FACTOR_MAGIC)
        fh.write(struct.pack("<QQQ", factors.d1, factors.d2, factors.rank))
        factors.user_factors.astype("<f8").tofile(fh)
        factors.item_factors.astype("<f8").tofile(fh)


def read_factors(path: str | Path) -> FactorPair:
    with open(path, "rb") as fh:
        magic = fh.read(len(FACTOR_MAGIC))
        if magic != FACTOR_MAGIC:
            raise DataFormatError(f"{path}: not a factor checkpoint (bad magic)")
        d1, d2, r = struct.unpack("<QQQ", fh.read(24))
        block = np.fromfile(fh, dtype="<f8", count=(d1 + d2) * r)
    if block.shape[0] != (d1 + d2) * r:
        raise DataFormatError(f"{path}: truncated factor checkpoint")
    return FactorPair(
        block[: d1 * r].reshape(d1, r).astype(np.float64),
        block[d1 * r:].reshape(d2, r).astype(np.float64),
    )


def write_trace_csv(path: str | Path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,primal_objective,elapsed_seconds\n")
        for it, obj, sec in trace.rows():
            fh.write(f"{it},{float(obj)!r},{sec:.6f}\n")


def write_id_map(path: str | Path, raw_ids: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dense, raw in enumerate(raw_ids):
            fh.write(f"{dense}\t{raw}\n")


def read_id_map(path: str | Path) -> np.ndarray:
    raw = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            dense, raw_id = line.split("\t")
            if int(dense) != lineno:
                raise DataFormatError(f"{path}: id map out of order at line {lineno + 1}")
            raw.append(int(raw_id))
    return np.array(raw, dtype=np.int64)


def write_dense_ratings(path: str | Path, table: RatingsTable) -> None:
    """Dense-index ratings as TSV (user, item, rating); no reindexing on read."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r in zip(table.user, table.item, table.rating):
            fh.write(f"{u}\t{i}\t{float(r)!r}\n")


def read_dense_ratings(path: str | Path, d1: int, d2: int) -> RatingsTable:
    users, items, ratings = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 fields")
            users.append(int(parts[0]))
            items.append(int(parts[1]))
            ratings.append(float(parts[2]))
    return RatingsTable(
        d1, d2,
        np.array(users, dtype=np.int32),
        np.array(items, dtype=np.int32),
        np.array(ratings, dtype=np.float64),
    )


def build_stamp() -> str:
    """Package version plus the git description of the working tree, if any."""
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, check=False,
            cwd=Path(__file__).resolve().parent,
        ).stdout.strip()
    except OSError:
        desc = ""
    return f"pairrank {__version__}" + (f" ({desc})" if desc else "")


def write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
