"""Desk-scale statistical experiments behind the ranking model.

The generative model is logistic preference: a true score matrix X*
induces Pr(user i prefers j over k) = exp(X*_ij - X*_ik) / (1 + exp(...)),
and each ordered triple (i, j, k) enters the observation set
independently with probability p_ijk.  This module samples that model,
evaluates exact population risks and KL rates by enumeration, and runs
two scaling experiments: excess risk against sample count, and the
spectral norm of the random sign-difference matrix that controls the
generalization bound, against density and dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .altsvm import AltSvmConfig, train_altsvm
from .fileio import build_stamp, write_json
from .model import ComparisonSet, FactorPair, LOGISTIC_MLE, Loss


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-_softplus(-np.asarray(z, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Generative model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BtlModel:
    """Logistic pairwise-preference model with per-triple observation rates.

    `probs` is either a scalar (every ordered triple equally likely) or a
    (d1, d2, d2) array with a zero diagonal in the last two axes.  `kappa`
    measures balance: the largest per-(user, item) observation budget
    relative to the uniform budget; 1 means perfectly balanced.
    """

    true_scores: np.ndarray
    probs: float | np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.true_scores, dtype=np.float64)
        object.__setattr__(self, "true_scores", x)
        if x.ndim != 2:
            raise ValueError("true_scores must be a d1 x d2 matrix")
        if np.isscalar(self.probs) or np.asarray(self.probs).ndim == 0:
            p = float(self.probs)
            if not 0.0 <= p <= 1.0:
                raise ValueError("scalar observation probability must be in [0, 1]")
            object.__setattr__(self, "probs", p)
        else:
            p = np.ascontiguousarray(self.probs, dtype=np.float64)
            d1, d2 = x.shape
            if p.shape != (d1, d2, d2):
                raise ValueError("probs array must be (d1, d2, d2)")
            if np.any((p < 0) | (p > 1)):
                raise ValueError("probabilities must lie in [0, 1]")
            if np.any(np.diagonal(p, axis1=1, axis2=2) != 0):
                raise ValueError("self-pairs must have probability 0")
            object.__setattr__(self, "probs", p)

    @property
    def d1(self) -> int:
        return self.true_scores.shape[0]

    @property
    def d2(self) -> int:
        return self.true_scores.shape[1]

    @classmethod
    def uniform(cls, true_scores: np.ndarray, m: float) -> "BtlModel":
        """Uniform rate p = m / (d1 * d2^2) targeting about m observed triples."""
        d1, d2 = np.asarray(true_scores).shape
        return cls(true_scores, m / (d1 * d2 * d2))

    @property
    def expected_m(self) -> float:
        """Expected observation count, diagonal excluded."""
        if isinstance(self.probs, float):
            return self.probs * self.d1 * self.d2 * (self.d2 - 1)
        return float(np.sum(self.probs))

    @property
    def kappa(self) -> float:
        """max over (i, j) of sum_k p_ijk, relative to expected_m / (d1 d2)."""
        if isinstance(self.probs, float):
            budget = self.probs * (self.d2 - 1)
        else:
            budget = float(np.max(self.probs.sum(axis=2)))
        return budget * self.d1 * self.d2 / self.expected_m

    def triple_prob(self, i: int, j: int, k: int) -> float:
        if j == k:
            return 0.0
        if isinstance(self.probs, float):
            return self.probs
        return float(self.probs[i, j, k])


def random_low_rank_scores(
    d1: int, d2: int, rank: int, rng: np.random.Generator, magnitude: float = 1.0
) -> np.ndarray:
    """Rank-`rank` score matrix with entries bounded by magnitude^2.

    Both factors get independent sign entries of size magnitude/sqrt(rank),
    so every score is a sum of rank terms of size magnitude^2/rank.
    """
    scale = magnitude / np.sqrt(rank)
    us = scale * (2 * rng.integers(0, 2, size=(d1, rank)) - 1)
    vs = scale * (2 * rng.integers(0, 2, size=(d2, rank)) - 1)
    return us @ vs.T


def sample_btl(model: BtlModel, seed=0) -> ComparisonSet:
    """Draw an observation set from the model; output is canonical.

    Every ordered triple (i, j, k), j != k, is included independently with
    its rate, and each included triple gets an independent logistic coin
    for the preference direction.  Users are processed in order, so the
    draw is reproducible for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    d1, d2 = model.d1, model.d2
    users: list[np.ndarray] = []
    prefs: list[np.ndarray] = []
    oths: list[np.ndarray] = []
    off_diag = ~np.eye(d2, dtype=bool)
    for i in range(d1):
        p = model.probs if isinstance(model.probs, float) else model.probs[i]
        include = (rng.random((d2, d2)) < p) & off_diag
        coin = rng.random((d2, d2))
        if not include.any():
            continue
        j, k = np.nonzero(include)
        delta = model.true_scores[i, j] - model.true_scores[i, k]
        win = coin[j, k] < _sigmoid(delta)
        users.append(np.full(j.shape[0], i, dtype=np.int32))
        prefs.append(np.where(win, j, k).astype(np.int32))
        oths.append(np.where(win, k, j).astype(np.int32))
    if not users:
        return ComparisonSet.empty(d1, d2)
    user = np.concatenate(users)
    return ComparisonSet(
        d1, d2, user, np.concatenate(prefs), np.concatenate(oths),
        np.ones(user.shape[0], dtype=np.int8),
    )


# ---------------------------------------------------------------------------
# Exact risk and KL rate
# ---------------------------------------------------------------------------

def _as_matrix(x) -> np.ndarray:
    if isinstance(x, FactorPair):
        return x.score_matrix()
    return np.asarray(x, dtype=np.float64)


def expected_risk(
    x, model: BtlModel, loss: Loss = LOGISTIC_MLE, include_ties: bool = True
) -> float:
    """Population risk of a score matrix under the model, by exact enumeration.

    Averages E[loss(Y * (X_ij - X_ik))] over all d1*d2^2 ordered triples;
    the j == k terms contribute loss(0) each and can be excluded with
    include_ties=False (the normalization stays d1*d2^2 either way, so
    differences of risks are unaffected).
    """
    X = _as_matrix(x)
    if X.shape != model.true_scores.shape:
        raise ValueError("score matrix does not match the model dimensions")
    d1, d2 = X.shape
    total = 0.0
    for i in range(d1):
        delta = X[i][:, None] - X[i][None, :]
        delta_star = model.true_scores[i][:, None] - model.true_scores[i][None, :]
        p = _sigmoid(delta_star)
        term = p * loss.value(delta) + (1.0 - p) * loss.value(-delta)
        if not include_ties:
            np.fill_diagonal(term, 0.0)
        total += float(term.sum())
    return total / (d1 * d2 * d2)


def kl_divergence_rate(x_hat, x_star) -> float:
    """Average pairwise Bernoulli KL between the preference laws of two score matrices.

    Per user, sums D(Bern(f(delta*)) || Bern(f(delta_hat))) over ordered
    item pairs j != k and normalizes by d1*d2^2; zero iff every pairwise
    score difference agrees.
    """
    A = _as_matrix(x_star)
    B = _as_matrix(x_hat)
    if A.shape != B.shape:
        raise ValueError("score matrices must share a shape")
    d1, d2 = A.shape
    total = 0.0
    for i in range(d1):
        a = A[i][:, None] - A[i][None, :]
        b = B[i][:, None] - B[i][None, :]
        p = _sigmoid(a)
        # D(Bern(f(a)) || Bern(f(b))) via softplus: stable on both tails
        term = p * (_softplus(-b) - _softplus(-a)) + (1.0 - p) * (_softplus(b) - _softplus(a))
        np.fill_diagonal(term, 0.0)
        total += float(term.sum())
    return total / (d1 * d2 * d2)


# ---------------------------------------------------------------------------
# Scaling reports
# ---------------------------------------------------------------------------

@dataclass
class ScalingReport:
    """Mean outcomes over a one-parameter grid plus fitted log-log exponents."""

    axis: str
    x: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    trials: int
    exponents: dict[str, tuple[float, float]] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    samples: np.ndarray | None = None  # (len(x), trials) raw per-trial values

    def write(self, outdir: str | Path, stem: str) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / f"{stem}.csv", "w", encoding="utf-8") as fh:
            fh.write(f"{self.axis},mean,stderr,trials\n")
            for xv, mv, sv in zip(self.x, self.mean, self.stderr):
                fh.write(f"{xv!r},{mv!r},{sv!r},{self.trials}\n")
        write_json(outdir / f"{stem}.json", {
            "build": build_stamp(),
            "axis": self.axis,
            "x": [float(v) for v in self.x],
            "mean": [float(v) for v in self.mean],
            "stderr": [float(v) for v in self.stderr],
            "trials": self.trials,
            "exponents": {
                k: {"value": v, "stderr": s} for k, (v, s) in self.exponents.items()
            },
            "params": self.params,
        })
        with open(outdir / f"{stem}.gp", "w", encoding="utf-8") as fh:
            fh.write(
                "set datafile separator ','\n"
                "set logscale xy\n"
                f"set xlabel '{self.axis}'\n"
                f"plot '{stem}.csv' every ::1 using 1:2:3 with yerrorlines title '{stem}'\n"
            )


def fit_log_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log y against log x, with its standard error."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    if lx.shape[0] < 2:
        raise ValueError("need at least two grid points to fit a slope")
    if lx.shape[0] == 2:
        return float((ly[1] - ly[0]) / (lx[1] - lx[0])), float("nan")
    coef, cov = np.polyfit(lx, ly, 1, cov=True)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


# ---------------------------------------------------------------------------
# Excess-risk scaling
# ---------------------------------------------------------------------------

def excess_risk_scaling_experiment(
    d1: int,
    d2: int,
    rank: int,
    lam: float,
    m_grid,
    trials: int,
    seed: int = 0,
    solver_overrides: dict | None = None,
) -> ScalingReport:
    """Excess population risk of the fitted model against sample count.

    Per grid point and trial: draw a fresh low-rank truth, sample
    comparisons at the uniform rate for m, fit with the alternating
    solver under the exact-likelihood loss, and evaluate
    risk(fit) - risk(truth) by enumeration.  Reports per-m means and the
    fitted log-log slope (the 1/sqrt(m) regime shows up as roughly -0.5).
    """
    m_grid = [int(m) for m in m_grid]
    overrides = dict(
        max_outer_iters=30,
        tolerance=1e-5,
    )
    overrides.update(solver_overrides or {})
    samples = np.empty((len(m_grid), trials), dtype=np.float64)
    for mi, m in enumerate(m_grid):
        for t in range(trials):
            rng = np.random.default_rng([seed, mi, t])
            truth = random_low_rank_scores(d1, d2, rank, rng)
            model = BtlModel.uniform(truth, m)
            data = sample_btl(model, seed=[seed, mi, t, 1])
            cfg = AltSvmConfig(
                rank=rank, lam=lam, loss=LOGISTIC_MLE,
                seed=int(rng.integers(2**62)), **overrides,
            )
            fit, _ = train_altsvm(data, cfg)
            samples[mi, t] = (
                expected_risk(fit, model) - expected_risk(truth, model)
            )
    mean = samples.mean(axis=1)
    stderr = samples.std(axis=1, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(len(m_grid))
    exponents = {}
    if len(m_grid) >= 2 and np.all(mean > 0):
        exponents["m"] = fit_log_slope(m_grid, mean)
    return ScalingReport(
        axis="m", x=np.array(m_grid, dtype=np.float64), mean=mean, stderr=stderr,
        trials=trials, exponents=exponents,
        params={"d1": d1, "d2": d2, "rank": rank, "lam": lam, "seed": seed},
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Sign-matrix norm scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignMatrixExperiment:
    """Grid for the random sign-difference matrix norm study.

    Exactly one of (d1, d2) and p may be a sequence; that axis is swept
    and gets a fitted exponent.  d1 and d2 must vary together.
    """

    d1: int | tuple
    d2: int | tuple
    p: float | tuple
    trials: int = 20
    seed: int = 0

    def grid(self) -> tuple[str, list[tuple[int, int, float]]]:
        d_swept = isinstance(self.d1, (tuple, list))
        p_swept = isinstance(self.p, (tuple, list))
        if d_swept and p_swept:
            raise ValueError("sweep either the dimension or the density, not both")
        if d_swept:
            d1s = list(self.d1)
            d2s = list(self.d2) if isinstance(self.d2, (tuple, list)) else [self.d2] * len(d1s)
            if len(d2s) != len(d1s):
                raise ValueError("d1 and d2 sweeps must align")
            return "d", [(int(a), int(b), float(self.p)) for a, b in zip(d1s, d2s)]
        if p_swept:
            return "p", [(int(self.d1), int(self.d2), float(p)) for p in self.p]
        return "p", [(int(self.d1), int(self.d2), float(self.p))]


def sample_sign_matrix(
    d1: int, d2: int, p: float, rng: np.random.Generator, user_block: int = 64
) -> np.ndarray:
    """Draw M with M[i, j] = row-sum minus column-sum of a sparse sign tensor.

    Per user, T[j, k] is a +-1 coin kept with probability p (zero
    otherwise) and M[i, j] = sum_k T[j, k] - sum_k T[k, j].  The diagonal
    cancels, matching the j != k convention.
    """
    M = np.empty((d1, d2), dtype=np.float64)
    for lo in range(0, d1, user_block):
        hi = min(d1, lo + user_block)
        keep = rng.random((hi - lo, d2, d2)) < p
        signs = (2 * rng.integers(0, 2, size=(hi - lo, d2, d2), dtype=np.int8) - 1)
        T = np.where(keep, signs, 0).astype(np.int8)
        M[lo:hi] = T.sum(axis=2, dtype=np.int32) - T.sum(axis=1, dtype=np.int32)
    return M


def spectral_norm_power(
    M: np.ndarray, tol: float = 1e-6, max_iters: int = 1000, seed: int = 0
) -> float:
    """Largest singular value by power iteration on M^T M.

    Retries once from a fresh start on non-convergence, then raises.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0 or not np.any(M):
        return 0.0
    for attempt in range(2):
        rng = np.random.default_rng([seed, attempt])
        v = rng.normal(size=M.shape[1])
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(max_iters):
            w = M @ v
            s = float(np.linalg.norm(w))
            if s == 0.0:
                break  # started orthogonal to the row space; retry
            v = M.T @ w
            v /= np.linalg.norm(v)
            if abs(s - sigma) <= tol * s:
                return s
            sigma = s
    raise RuntimeError("power iteration did not converge")


def m_norm_experiment(spec: SignMatrixExperiment) -> ScalingReport:
    """Mean spectral norm of the sign-difference matrix over the grid.

    The swept axis gets a fitted log-log exponent; expected behavior is
    roughly sqrt growth in both the density and the dimension, up to
    logarithmic factors.
    """
    axis, grid = spec.grid()
    samples = np.empty((len(grid), spec.trials), dtype=np.float64)
    for gi, (d1, d2, p) in enumerate(grid):
        for t in range(spec.trials):
            rng = np.random.default_rng([spec.seed, gi, t])
            M = sample_sign_matrix(d1, d2, p, rng)
            samples[gi, t] = spectral_norm_power(M, seed=spec.seed + t)
    mean = samples.mean(axis=1)
    stderr = (
        samples.std(axis=1, ddof=1) / np.sqrt(spec.trials)
        if spec.trials > 1 else np.zeros(len(grid))
    )
    x = np.array(
        [g[0] + g[1] for g in grid] if axis == "d" else [g[2] for g in grid],
        dtype=np.float64,
    )
    exponents = {}
    if len(grid) >= 2 and np.all(mean > 0) and np.unique(x).shape[0] == len(x):
        exponents[axis] = fit_log_slope(x, mean)
    return ScalingReport(
        axis=axis, x=x, mean=mean, stderr=stderr, trials=spec.trials,
        exponents=exponents,
        params={"d1": spec.d1, "d2": spec.d2, "p": spec.p, "seed": spec.seed},
        samples=samples,
    )
