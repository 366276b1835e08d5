"""Core data types, losses, and objective evaluation for pairwise ranking.

A preference observation is a triple (user, preferred, other): the user
compared two items and liked `preferred` better.  A low-rank score model
assigns score(i, j) = u_i . v_j and is trained so that the margin
score(i, preferred) - score(i, other) comes out positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels


class DualInfeasibleError(ValueError):
    """A conjugate loss was evaluated outside its feasible domain."""


class DivergenceError(RuntimeError):
    """A solver produced a non-finite objective."""


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _sigmoid(z):
    # exp(-softplus(-z)); stable for large |z|
    return np.exp(-np.logaddexp(0.0, -np.asarray(z, dtype=np.float64)))


def _xlogx(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] * np.log(t[pos])
    return out


class Loss:
    """Convex loss of the preference margin, non-increasing in its argument.

    Subclasses supply the value, the derivative, and the Fenchel conjugate
    restricted to the dual-feasible domain.  All three accept scalars or
    arrays.  `kernel_code` selects the compiled dual-step routine:
    0 = squared hinge (closed form), 1 = logistic family (guarded Newton).
    """

    name: str = ""
    kernel_code: int = -1

    def value(self, z):
        raise NotImplementedError

    def derivative(self, z):
        raise NotImplementedError

    def conjugate(self, s):
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<loss {self.name}>"


class SquaredHinge(Loss):
    """max(0, 1 - z)^2."""

    name = "l2hinge"
    kernel_code = _kernels.LOSS_L2HINGE

    def value(self, z):
        return np.square(np.maximum(0.0, 1.0 - np.asarray(z, dtype=np.float64)))

    def derivative(self, z):
        return -2.0 * np.maximum(0.0, 1.0 - np.asarray(z, dtype=np.float64))

    def conjugate(self, s):
        """sup_x { s*x - max(0, 1-x)^2 } = s + s^2/4, finite only for s <= 0."""
        s = np.asarray(s, dtype=np.float64)
        if np.any(s > 0):
            raise DualInfeasibleError("squared-hinge conjugate requires s <= 0")
        return s + 0.25 * np.square(s)


class Logistic(Loss):
    """log(1 + exp(-z)): negative log-likelihood of a logistic preference."""

    name = "logistic"
    kernel_code = _kernels.LOSS_LOGISTIC

    def value(self, z):
        return np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))

    def derivative(self, z):
        return -_sigmoid(-np.asarray(z, dtype=np.float64))

    def conjugate(self, s):
        """Binary entropy (-s)log(-s) + (1+s)log(1+s), finite on -1 <= s <= 0."""
        s = np.asarray(s, dtype=np.float64)
        if np.any((s > 0) | (s < -1)):
            raise DualInfeasibleError("logistic conjugate requires -1 <= s <= 0")
        t = -s
        return _xlogx(t) + _xlogx(1.0 - t)


class LogisticMle(Logistic):
    """log(1 + exp(z)) - z.

    Algebraically identical to `Logistic` (log(1+e^z) - z = log(1+e^-z)),
    kept as a named variant because it is the exact negative log-likelihood
    written in maximum-likelihood form.  Derivative and conjugate are
    inherited; only the printed form of the value differs.
    """

    name = "logistic-mle"

    def value(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.logaddexp(0.0, z) - z


L2_HINGE = SquaredHinge()
LOGISTIC = Logistic()
LOGISTIC_MLE = LogisticMle()

LOSSES: dict[str, Loss] = {
    L2_HINGE.name: L2_HINGE,
    LOGISTIC.name: LOGISTIC,
    LOGISTIC_MLE.name: LOGISTIC_MLE,
}


def conjugate_l2hinge(s):
    """Fenchel conjugate of the squared hinge on the feasible ray s <= 0."""
    return L2_HINGE.conjugate(s)


# ---------------------------------------------------------------------------
# Comparison data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonTriple:
    """One observation: `user` compared `preferred` against `other`.

    label = +1 means the stated order is the observed preference; -1 is
    allowed only for raw, not-yet-canonicalized data.
    """

    user: int
    preferred: int
    other: int
    label: int = 1

    def __post_init__(self):
        if self.preferred == self.other:
            raise ValueError("comparison needs two distinct items")
        if self.label not in (-1, 1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")


@dataclass(frozen=True)
class ComparisonSet:
    """A set of comparison triples over d1 users and d2 items, stored column-wise.

    Read-only after construction; the index structures below are built
    lazily and shared freely across threads.  `gaps` optionally carries the
    absolute rating difference behind each triple, for gap-restricted
    evaluation; it is dropped by binary round-trips.
    """

    d1: int
    d2: int
    user: np.ndarray
    preferred: np.ndarray
    other: np.ndarray
    label: np.ndarray
    gaps: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "user", _index_array(self.user))
        object.__setattr__(self, "preferred", _index_array(self.preferred))
        object.__setattr__(self, "other", _index_array(self.other))
        object.__setattr__(
            self, "label", _lock(np.ascontiguousarray(self.label, dtype=np.int8))
        )
        if self.gaps is not None:
            object.__setattr__(
                self, "gaps", _lock(np.ascontiguousarray(self.gaps, dtype=np.float64))
            )
        n = self.user.shape[0]
        for name in ("preferred", "other", "label"):
            if getattr(self, name).shape != (n,):
                raise ValueError("comparison columns must share one length")
        if self.gaps is not None and self.gaps.shape != (n,):
            raise ValueError("gaps must align with the triples")
        if self.d1 < 0 or self.d2 < 0:
            raise ValueError("negative dimensions")
        if n:
            if self.user.min() < 0 or self.user.max() >= self.d1:
                raise ValueError("user index out of range")
            lo = min(self.preferred.min(), self.other.min())
            hi = max(self.preferred.max(), self.other.max())
            if lo < 0 or hi >= self.d2:
                raise ValueError("item index out of range")
            if np.any(self.preferred == self.other):
                raise ValueError("self-comparison (preferred == other)")
            if not np.all(np.abs(self.label) == 1):
                raise ValueError("labels must be +1 or -1")

    @classmethod
    def from_triples(cls, d1: int, d2: int, triples) -> "ComparisonSet":
        triples = list(triples)
        return cls(
            d1=d1,
            d2=d2,
            user=np.array([t.user for t in triples], dtype=np.int32),
            preferred=np.array([t.preferred for t in triples], dtype=np.int32),
            other=np.array([t.other for t in triples], dtype=np.int32),
            label=np.array([t.label for t in triples], dtype=np.int8),
        )

    @classmethod
    def empty(cls, d1: int, d2: int) -> "ComparisonSet":
        z = np.zeros(0, dtype=np.int32)
        return cls(d1, d2, z, z.copy(), z.copy(), np.zeros(0, dtype=np.int8))

    @property
    def m(self) -> int:
        return int(self.user.shape[0])

    def __len__(self) -> int:
        return self.m

    def triple(self, p: int) -> ComparisonTriple:
        return ComparisonTriple(
            int(self.user[p]), int(self.preferred[p]), int(self.other[p]),
            int(self.label[p]),
        )

    @property
    def is_canonical(self) -> bool:
        return bool(np.all(self.label == 1))

    def canonicalize(self) -> "ComparisonSet":
        """Rewrite every triple to label +1 by swapping the item pair where needed."""
        if self.is_canonical:
            return self
        neg = self.label < 0
        pref = self.preferred.copy()
        oth = self.other.copy()
        pref[neg], oth[neg] = self.other[neg], self.preferred[neg]
        return ComparisonSet(
            self.d1, self.d2, self.user, pref, oth,
            np.ones(self.m, dtype=np.int8), gaps=self.gaps,
        )

    # -- index structures ---------------------------------------------------

    @cached_property
    def user_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(order, indptr): triple positions grouped by user, CSR style."""
        order = np.argsort(self.user, kind="stable").astype(np.int64)
        counts = np.bincount(self.user, minlength=self.d1)
        indptr = np.zeros(self.d1 + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return _lock(order), _lock(indptr)

    @cached_property
    def item_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pos, sign, indptr): for each item, the positions of triples touching it.

        sign is +1 where the item is `preferred` and -1 where it is `other`.
        """
        items = np.concatenate([self.preferred, self.other])
        pos = np.concatenate([np.arange(self.m, dtype=np.int64)] * 2)
        sign = np.concatenate(
            [np.ones(self.m, dtype=np.int8), -np.ones(self.m, dtype=np.int8)]
        )
        order = np.argsort(items, kind="stable")
        counts = np.bincount(items, minlength=self.d2)
        indptr = np.zeros(self.d2 + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return _lock(pos[order]), _lock(sign[order]), _lock(indptr)

    @cached_property
    def user_counts(self) -> np.ndarray:
        """|Omega_i|: number of triples per user."""
        return _lock(np.bincount(self.user, minlength=self.d1).astype(np.int64))

    @cached_property
    def item_counts(self) -> np.ndarray:
        """Number of triples each item participates in, on either side."""
        both = np.concatenate([self.preferred, self.other])
        return _lock(np.bincount(both, minlength=self.d2).astype(np.int64))

    def user_positions(self, i: int) -> np.ndarray:
        order, indptr = self.user_index
        return order[indptr[i]:indptr[i + 1]]

    def item_positions(self, j: int) -> np.ndarray:
        pos, _, indptr = self.item_index
        return pos[indptr[j]:indptr[j + 1]]


def _index_array(a) -> np.ndarray:
    return _lock(np.ascontiguousarray(a, dtype=np.int32))


def _lock(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Factored score model
# ---------------------------------------------------------------------------

@dataclass
class FactorPair:
    """Rank-r score model: score(i, j) = user_factors[i] . item_factors[j].

    The dense user-by-item score matrix is never formed by the solvers;
    `score_matrix` exists for small-scale analysis only.
    """

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        self.user_factors = np.ascontiguousarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.ascontiguousarray(self.item_factors, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ValueError("factors must be 2-D")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ValueError("user and item factors must share the rank")
        if not (np.isfinite(self.user_factors).all()
                and np.isfinite(self.item_factors).all()):
            raise ValueError("factors must be finite")

    @property
    def rank(self) -> int:
        return self.user_factors.shape[1]

    @property
    def d1(self) -> int:
        return self.user_factors.shape[0]

    @property
    def d2(self) -> int:
        return self.item_factors.shape[0]

    @classmethod
    def zeros(cls, d1: int, d2: int, rank: int) -> "FactorPair":
        return cls(np.zeros((d1, rank)), np.zeros((d2, rank)))

    def score(self, i: int, j: int) -> float:
        return float(self.user_factors[i] @ self.item_factors[j])

    def user_scores(self, i: int, items=None) -> np.ndarray:
        """Scores of one user against `items` (all items when None)."""
        v = self.item_factors if items is None else self.item_factors[items]
        return v @ self.user_factors[i]

    def score_matrix(self) -> np.ndarray:
        return self.user_factors @ self.item_factors.T

    def copy(self) -> "FactorPair":
        return FactorPair(self.user_factors.copy(), self.item_factors.copy())

    def scaled(self, c: float) -> "FactorPair":
        return FactorPair(c * self.user_factors, c * self.item_factors)


def _check_dims(factors: FactorPair, data: ComparisonSet) -> None:
    if factors.d1 != data.d1 or factors.d2 != data.d2:
        raise ValueError(
            f"factors are {factors.d1}x{factors.d2}, data wants {data.d1}x{data.d2}"
        )


def margin(factors: FactorPair, triple: ComparisonTriple) -> float:
    """label * u_i . (v_preferred - v_other) for one triple."""
    u = factors.user_factors[triple.user]
    dv = factors.item_factors[triple.preferred] - factors.item_factors[triple.other]
    return float(triple.label * (u @ dv))


def margins(factors: FactorPair, data: ComparisonSet) -> np.ndarray:
    """label * u_i . (v_j - v_k) for every triple, as a float64 array."""
    _check_dims(factors, data)
    out = np.empty(data.m, dtype=np.float64)
    _kernels.margins_kernel(
        data.user, data.preferred, data.other, data.label,
        factors.user_factors, factors.item_factors, out,
    )
    return out


def primal_objective(
    factors: FactorPair,
    data: ComparisonSet,
    loss: Loss = L2_HINGE,
    lam: float = 0.0,
) -> float:
    """Sum of per-triple losses plus (lam/2) * squared Frobenius norms."""
    _check_dims(factors, data)
    total = float(np.sum(loss.value(margins(factors, data)))) if data.m else 0.0
    reg = 0.5 * lam * (
        float(np.sum(np.square(factors.user_factors)))
        + float(np.sum(np.square(factors.item_factors)))
    )
    return total + reg
