"""Independent oracles used across the test suite.

Everything here is deliberately naive (grid search, golden section,
double loops, permutation enumeration) so it cannot share a bug with the
library code it checks.
"""

import itertools
import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_minimize(phi, lo, hi, tol=1e-12, max_iters=200):
    """Argmin of a unimodal function on [lo, hi] by golden-section search."""
    a, b = float(lo), float(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = phi(c), phi(d)
    for _ in range(max_iters):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = phi(d)
    return 0.5 * (a + b)


def numeric_conjugate(loss_value, s, x_lo=-50.0, x_hi=50.0, n=400001):
    """sup_x { s*x - loss(x) } by dense grid search."""
    xs = np.linspace(x_lo, x_hi, n)
    return float(np.max(s * xs - loss_value(xs)))


def user_dual_phi(u, g, alpha, lam, loss):
    """The 1-D user-block dual coordinate objective as a plain function of delta."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)

    def phi(d):
        return 0.5 * float(np.sum((u + d * g) ** 2)) + float(
            loss.conjugate(-lam * (alpha + d))
        ) / lam

    return phi

def item_dual_phi(v_j, v_k, u, y, beta, lam, loss):
    """The 1-D item-block dual coordinate objective as a plain function of delta."""
    v_j = np.asarray(v_j, dtype=float)
    v_k = np.asarray(v_k, dtype=float)
    u = np.asarray(u, dtype=float)

    def phi(d):
        return 0.5 * (
            float(np.sum((v_j + d * y * u) ** 2))
            + float(np.sum((v_k - d * y * u) ** 2))
        ) + float(loss.conjugate(-lam * (beta + d))) / lam

    return phi


def oracle_delta(phi, a0, lam, loss_name, tol=1e-12):
    """Golden-section argmin of a dual coordinate objective over its feasible range."""
    if loss_name == "l2hinge":
        lo, hi = -a0, -a0 + max(10.0, 4.0 / lam + 10.0)
    else:
        eps = 1e-13 / lam
        lo, hi = -a0 + eps, (1.0 / lam) - a0 - eps
    return golden_section_minimize(phi, lo, hi, tol=tol)


def naive_objective(factors, data, loss, lam):
    """Triple-by-triple sum of losses plus the Frobenius regularizer."""
    total = 0.0
    for p in range(len(data)):
        i = int(data.user[p])
        j = int(data.preferred[p])
        k = int(data.other[p])
        y = float(data.label[p])
        z = 0.0
        for c in range(factors.rank):
            z += factors.user_factors[i, c] * (
                factors.item_factors[j, c] - factors.item_factors[k, c]
            )
        total += float(loss.value(y * z))
    sq = 0.0
    for block in (factors.user_factors, factors.item_factors):
        for v in np.ravel(block):
            sq += v * v
    return total + 0.5 * lam * sq


def brute_force_pairs(items, ratings):
    """All strictly ordered preference pairs of one user, as a set of tuples."""
    out = set()
    n = len(items)
    for a in range(n):
        for b in range(n):
            if a != b and ratings[a] > ratings[b]:
                out.add((int(items[a]), int(items[b])))
    return out


def dcg_of_order(gains_in_order, k):
    return sum(
        g / math.log2(pos + 2) for pos, g in enumerate(gains_in_order[:k])
    )


def brute_force_best_dcg(gains, k):
    """Max DCG@k over every permutation of the items (use for <= 8 items)."""
    best = 0.0
    for perm in itertools.permutations(range(len(gains))):
        best = max(best, dcg_of_order([gains[p] for p in perm], k))
    return best


def single_triple_optimal_margin(q, lam):
    """Margin of the exact one-comparison squared-hinge solution.

    Minimizing (lam/2)*t^2/q + max(0, 1-t)^2 over the attained margin t
    gives t = 2q / (lam + 2q) when q > 0.
    """
    return 2.0 * q / (lam + 2.0 * q)


def monte_carlo_risk(X, model, loss, n_samples, rng):
    """Monte-Carlo estimate of the population risk, with its standard error."""
    d1, d2 = X.shape
    i = rng.integers(0, d1, size=n_samples)
    j = rng.integers(0, d2, size=n_samples)
    k = rng.integers(0, d2, size=n_samples)
    delta_star = model.true_scores[i, j] - model.true_scores[i, k]
    prob = 1.0 / (1.0 + np.exp(-delta_star))
    y = np.where(rng.random(n_samples) < prob, 1.0, -1.0)
    vals = loss.value(y * (X[i, j] - X[i, k]))
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n_samples))
