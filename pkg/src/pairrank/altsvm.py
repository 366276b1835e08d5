"""Alternating SVM solver for the factored pairwise-ranking objective.

The objective

    sum over triples of L(label * u_i . (v_j - v_k))
        + (lam/2) (||U||_F^2 + ||V||_F^2)

is minimized by alternating between the item block and the user block.
Each block is an SVM-type problem solved in its dual by stochastic
coordinate descent: a triple is sampled uniformly with replacement, its
dual coordinate is minimized exactly (closed form for the squared hinge,
guarded Newton for the logistic family), and the linked factor rows are
updated in place.  Dual variables persist across outer iterations, and
each pass starts by rebuilding its factor block from the duals, which
also cancels accumulated round-off.

The item block comes first in every outer iteration; it converges better
in practice because the user block is rebuilt from scratch anyway.

Parallelism is lock-free: workers share the factor matrices and update
rows without synchronization.  Determinism and the monotonicity /
descent properties hold only with a single worker; multi-worker runs
promise finiteness and end-metric quality, not bitwise stability.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .model import (
    ComparisonSet,
    DivergenceError,
    FactorPair,
    L2_HINGE,
    Loss,
    primal_objective,
)


@dataclass
class AltSvmConfig:
    rank: int
    lam: float = 1.0
    loss: Loss = L2_HINGE
    inner_steps: int | None = None  # dual steps per pass; None means one per triple
    max_outer_iters: int = 100
    tolerance: float = 1e-5
    workers: int = 1
    seed: int = 0
    init_scale: float | None = None  # std of the random user init; None means 1/sqrt(rank)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.inner_steps is not None and self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ValueError("init_scale must be positive")

    @property
    def sigma0(self) -> float:
        return self.init_scale if self.init_scale is not None else 1.0 / np.sqrt(self.rank)


@dataclass
class DualState:
    """One dual coordinate per triple for each block subproblem."""

    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def zeros(cls, m: int) -> "DualState":
        return cls(np.zeros(m, dtype=np.float64), np.zeros(m, dtype=np.float64))

    def copy(self) -> "DualState":
        return DualState(self.alpha.copy(), self.beta.copy())


@dataclass
class ConvergenceTrace:
    iterations: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    elapsed: list[float] = field(default_factory=list)

    def append(self, it: int, obj: float, sec: float) -> None:
        self.iterations.append(it)
        self.objective.append(obj)
        self.elapsed.append(sec)

    def rows(self):
        return zip(self.iterations, self.objective, self.elapsed)

    def __len__(self) -> int:
        return len(self.iterations)


# ---------------------------------------------------------------------------
# Single coordinate steps
# ---------------------------------------------------------------------------

def user_step_delta(
    u: np.ndarray, g: np.ndarray, alpha: float, lam: float, loss: Loss = L2_HINGE
) -> float:
    """Exact dual step for one user-block coordinate.

    Minimizes 0.5*||u + d*g||^2 + (1/lam)*conj(-lam*(alpha + d)) over the
    feasible d, where g is label * (v_preferred - v_other).  The caller
    applies alpha += d and u += d*g.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    g = np.asarray(g, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return float(_kernels.dual_coordinate_delta(
        float(g @ u), float(g @ g), float(alpha), float(lam), loss.kernel_code,
    ))


def item_step_delta(
    v_j: np.ndarray, v_k: np.ndarray, u: np.ndarray, y: int,
    beta: float, lam: float, loss: Loss = L2_HINGE,
) -> float:
    """Exact dual step for one item-block coordinate.

    Minimizes 0.5*(||v_j + d*y*u||^2 + ||v_k - d*y*u||^2)
    + (1/lam)*conj(-lam*(beta + d)).  The caller applies beta += d,
    v_j += d*y*u and v_k -= d*y*u.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    u = np.asarray(u, dtype=np.float64)
    marg = float(y) * float(u @ (np.asarray(v_j, dtype=np.float64) - np.asarray(v_k, dtype=np.float64)))
    return float(_kernels.dual_coordinate_delta(
        marg, 2.0 * float(u @ u), float(beta), float(lam), loss.kernel_code,
    ))


# ---------------------------------------------------------------------------
# Rebuilds and explicit dual objectives
# ---------------------------------------------------------------------------

def rebuild_user_factors(
    data: ComparisonSet, alpha: np.ndarray, item_factors: np.ndarray,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """u_i = sum over the user's triples of alpha * label * (v_j - v_k)."""
    r = item_factors.shape[1]
    if out is None:
        out = np.empty((data.d1, r), dtype=np.float64)
    order, indptr = data.user_index
    _kernels.rebuild_user_kernel(
        order, indptr, data.preferred, data.other, data.label, alpha,
        item_factors, out,
    )
    return out


def rebuild_item_factors(
    data: ComparisonSet, beta: np.ndarray, user_factors: np.ndarray,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """v_j = signed sum of beta * label * u_i over the triples touching item j."""
    r = user_factors.shape[1]
    if out is None:
        out = np.empty((data.d2, r), dtype=np.float64)
    pos, sign, indptr = data.item_index
    _kernels.rebuild_item_kernel(
        pos, sign, indptr, data.user, data.label, beta, user_factors, out,
    )
    return out


def dual_objective_user(
    data: ComparisonSet, item_factors: np.ndarray, alpha: np.ndarray,
    lam: float, loss: Loss = L2_HINGE,
) -> float:
    """Explicit user-block dual: 0.5*sum_i ||u_i(alpha)||^2 + (1/lam)*sum conj(-lam*alpha)."""
    linked = rebuild_user_factors(data, alpha, item_factors)
    return 0.5 * float(np.sum(np.square(linked))) + float(
        np.sum(loss.conjugate(-lam * alpha))
    ) / lam


def dual_objective_item(
    data: ComparisonSet, user_factors: np.ndarray, beta: np.ndarray,
    lam: float, loss: Loss = L2_HINGE,
) -> float:
    """Explicit item-block dual: 0.5*||V(beta)||_F^2 + (1/lam)*sum conj(-lam*beta)."""
    linked = rebuild_item_factors(data, beta, user_factors)
    return 0.5 * float(np.sum(np.square(linked))) + float(
        np.sum(loss.conjugate(-lam * beta))
    ) / lam


# ---------------------------------------------------------------------------
# Stochastic passes
# ---------------------------------------------------------------------------

def _sample_order(m: int, steps: int, workers: int, seed_key) -> tuple[np.ndarray, np.ndarray]:
    """Presampled uniform-with-replacement step sequence, split by worker.

    Each worker draws from its own generator seeded by (seed_key, worker),
    so the multi-worker sample law does not depend on the scheduling.
    Returns (order, bounds) with worker w owning order[bounds[w]:bounds[w+1]].
    """
    base = steps // workers
    sizes = [base + (1 if w < steps % workers else 0) for w in range(workers)]
    chunks = [
        np.random.default_rng(list(seed_key) + [w]).integers(0, m, size=sz)
        for w, sz in enumerate(sizes)
    ]
    bounds = np.zeros(workers + 1, dtype=np.int64)
    np.cumsum(sizes, out=bounds[1:])
    order = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return order.astype(np.int64), bounds


def _pass_steps(data: ComparisonSet, config: AltSvmConfig) -> int:
    return data.m if config.inner_steps is None else config.inner_steps


def run_user_pass(
    data: ComparisonSet, factors: FactorPair, duals: DualState,
    config: AltSvmConfig, pass_key=None,
) -> None:
    """One stochastic dual pass over the user block, in place.

    Expects U already rebuilt from the duals (the train loop does this at
    every pass boundary).
    """
    steps = _pass_steps(data, config)
    if steps == 0 or data.m == 0:
        return
    order, bounds = _sample_order(
        data.m, steps, config.workers,
        pass_key if pass_key is not None else [config.seed, 0, 1],
    )
    _kernels.user_pass_kernel(
        data.user, data.preferred, data.other, data.label,
        factors.user_factors, factors.item_factors, duals.alpha,
        order, bounds, config.lam, config.loss.kernel_code,
    )


def run_item_pass(
    data: ComparisonSet, factors: FactorPair, duals: DualState,
    config: AltSvmConfig, pass_key=None,
) -> None:
    """One stochastic dual pass over the item block, in place."""
    steps = _pass_steps(data, config)
    if steps == 0 or data.m == 0:
        return
    order, bounds = _sample_order(
        data.m, steps, config.workers,
        pass_key if pass_key is not None else [config.seed, 0, 0],
    )
    _kernels.item_pass_kernel(
        data.user, data.preferred, data.other, data.label,
        factors.user_factors, factors.item_factors, duals.beta,
        order, bounds, config.lam, config.loss.kernel_code,
    )


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def train_altsvm(
    data: ComparisonSet, config: AltSvmConfig
) -> tuple[FactorPair, ConvergenceTrace]:
    """Alternate item and user passes until the objective settles.

    U starts from a random Gaussian init (std sigma0) and both dual
    vectors from zero; the first item-block rebuild therefore starts V at
    zero.  Stops when the relative change of the full objective between
    outer iterations drops below the tolerance, or at max_outer_iters.
    """
    if data.m == 0:
        raise ValueError("empty comparison set")
    rng = np.random.default_rng(config.seed)
    factors = FactorPair(
        rng.normal(0.0, config.sigma0, size=(data.d1, config.rank)),
        np.zeros((data.d2, config.rank)),
    )
    duals = DualState.zeros(data.m)
    return _alternate(data, config, factors, duals, fixed_users=False)


def train_global_ranking(
    data: ComparisonSet, config: AltSvmConfig
) -> tuple[FactorPair, ConvergenceTrace]:
    """Non-personalized baseline: U frozen to all ones, item block only.

    Every user shares the same vector, so item scores induce one global
    order.
    """
    if data.m == 0:
        raise ValueError("empty comparison set")
    factors = FactorPair(
        np.ones((data.d1, config.rank)),
        np.zeros((data.d2, config.rank)),
    )
    duals = DualState.zeros(data.m)
    return _alternate(data, config, factors, duals, fixed_users=True)


def _alternate(
    data: ComparisonSet, config: AltSvmConfig, factors: FactorPair,
    duals: DualState, fixed_users: bool,
) -> tuple[FactorPair, ConvergenceTrace]:
    trace = ConvergenceTrace()
    start = time.perf_counter()
    prev = None
    for it in range(1, config.max_outer_iters + 1):
        rebuild_item_factors(data, duals.beta, factors.user_factors,
                             out=factors.item_factors)
        run_item_pass(data, factors, duals, config, pass_key=[config.seed, it, 0])
        if not fixed_users:
            rebuild_user_factors(data, duals.alpha, factors.item_factors,
                                 out=factors.user_factors)
            run_user_pass(data, factors, duals, config, pass_key=[config.seed, it, 1])
        obj = primal_objective(factors, data, config.loss, config.lam)
        if not np.isfinite(obj):
            raise DivergenceError(f"non-finite objective at outer iteration {it}")
        trace.append(it, obj, time.perf_counter() - start)
        if prev is not None and abs(prev - obj) < config.tolerance * abs(prev):
            break
        prev = obj
    return factors, trace


def bench_workers(
    data: ComparisonSet, config: AltSvmConfig, worker_counts,
) -> list[dict]:
    """Train to the stopping rule once per worker count; report time and speedup."""
    rows = []
    base_seconds = None
    for t in worker_counts:
        cfg = replace(config, workers=int(t))
        start = time.perf_counter()
        _, trace = train_altsvm(data, cfg)
        seconds = time.perf_counter() - start
        if base_seconds is None:
            base_seconds = seconds
        rows.append({
            "workers": int(t),
            "seconds": seconds,
            "speedup": base_seconds / seconds,
            "outer_iters": trace.iterations[-1],
            "objective": trace.objective[-1],
        })
    return rows
