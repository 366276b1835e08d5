"""Stochastic gradient baseline on the factored ranking objective.

Per sampled triple, all three touched rows move along the subgradient of
the triple's loss plus a regularizer scaled by how often each row appears
in the data (lam/|Omega_i| for the user row, lam/|Omega^(j)| per item
row), with step size eta_t = alpha0 / (1 + beta0 * t) on the global step
counter.  Single-threaded by design; the point of this solver is a
statistical baseline, not throughput.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .altsvm import ConvergenceTrace
from .model import (
    ComparisonSet,
    ComparisonTriple,
    DivergenceError,
    FactorPair,
    L2_HINGE,
    Loss,
    primal_objective,
)


@dataclass
class SgdConfig:
    rank: int
    lam: float = 0.0
    loss: Loss = L2_HINGE
    alpha0: float = 0.1
    beta0: float = 1e-5
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.beta0 < 0:
            raise ValueError("beta0 must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def sgd_step(
    factors: FactorPair,
    triple: ComparisonTriple,
    eta: float,
    lam: float,
    loss: Loss,
    n_user: int,
    n_preferred: int,
    n_other: int,
) -> None:
    """One gradient step on the rows touched by a canonical triple, in place.

    n_user / n_preferred / n_other are the triple counts of the involved
    user and items; they scale the per-row regularizer and must be
    positive.  All three updates read the pre-step row values.
    """
    if min(n_user, n_preferred, n_other) <= 0:
        raise ValueError("participation counts must be positive")
    i, j, k = triple.user, triple.preferred, triple.other
    U, V = factors.user_factors, factors.item_factors
    u_old = U[i].copy()
    vj_old = V[j].copy()
    vk_old = V[k].copy()
    y = float(triple.label)
    g = float(loss.derivative(y * (u_old @ (vj_old - vk_old)))) * y
    U[i] -= eta * (g * (vj_old - vk_old) + (lam / n_user) * u_old)
    V[j] -= eta * (g * u_old + (lam / n_preferred) * vj_old)
    V[k] -= eta * (-g * u_old + (lam / n_other) * vk_old)


def train_sgd(
    data: ComparisonSet, config: SgdConfig
) -> tuple[FactorPair, ConvergenceTrace]:
    """epochs * m uniform seeded steps; the trace records one row per epoch.

    Raises DivergenceError when the objective stops being finite, which
    usually means alpha0 is too large for the data scale.
    """
    if data.m == 0:
        raise ValueError("empty comparison set")
    data = data.canonicalize()
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / np.sqrt(config.rank)
    factors = FactorPair(
        rng.normal(0.0, scale, size=(data.d1, config.rank)),
        rng.normal(0.0, scale, size=(data.d2, config.rank)),
    )
    user_counts = data.user_counts.astype(np.float64)
    item_counts = data.item_counts.astype(np.float64)
    trace = ConvergenceTrace()
    start = time.perf_counter()
    trace.append(0, primal_objective(factors, data, config.loss, config.lam),
                 time.perf_counter() - start)
    t = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.integers(0, data.m, size=data.m).astype(np.int64)
        t = _kernels.sgd_epoch_kernel(
            data.user, data.preferred, data.other, data.label,
            factors.user_factors, factors.item_factors, order,
            t, config.alpha0, config.beta0, config.lam,
            user_counts, item_counts, config.loss.kernel_code,
        )
        obj = primal_objective(factors, data, config.loss, config.lam)
        if not np.isfinite(obj):
            raise DivergenceError(
                f"non-finite objective after epoch {epoch}; try a smaller alpha0"
            )
        trace.append(epoch, obj, time.perf_counter() - start)
    return factors, trace
