"""Compiled inner loops for the solvers.

Everything here operates on flat numpy buffers so the public modules stay
plain numpy.  Loss dispatch is by integer code; the dual-step routine and
the stochastic passes must stay in sync with the loss definitions in
`model`.

Parallel passes follow a lock-free contract: each worker owns a slice of
the presampled step sequence and updates shared factor rows without
synchronization.  Torn or stale row reads are tolerated; determinism is
guaranteed only for a single worker.
"""

import math

import numpy as np
from numba import njit, prange

LOSS_L2HINGE = 0
LOSS_LOGISTIC = 1

_NEWTON_ITERS = 20
_NEWTON_TOL = 1e-10


@njit(cache=True)
def dual_coordinate_delta(margin, q, a, lam, loss_code):
    """Exact minimizer of one dual coordinate subproblem.

    Minimizes phi(d) = margin*d + 0.5*q*d^2 + (1/lam) * conj(-lam*(a + d))
    over d, where conj is the loss conjugate.  Feasibility: a + d >= 0 for
    the squared hinge, 0 <= a + d <= 1/lam for the logistic family.  q is
    the squared feature norm of the step direction and is allowed to be 0
    (the lam/2 curvature from the conjugate keeps the problem strictly
    convex).
    """
    if loss_code == LOSS_L2HINGE:
        d = (1.0 - margin - 0.5 * lam * a) / (q + 0.5 * lam)
        if d < -a:
            d = -a
        return d
    # logistic family: guarded Newton on x = a + d in (0, 1/lam); the
    # gradient runs to -inf at 0 and +inf at 1/lam, so the minimum is interior
    inv = 1.0 / lam
    lo = 0.0
    hi = inv
    x = a
    if x <= 0.0 or x >= inv:
        x = 0.5 * inv
    for _ in range(_NEWTON_ITERS):
        g = margin + q * (x - a) + math.log(lam * x) - math.log1p(-lam * x)
        if g > 0.0:
            hi = x
        else:
            lo = x
        h = q + 1.0 / x + lam / (1.0 - lam * x)
        xn = x - g / h
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi)
        done = abs(xn - x) <= _NEWTON_TOL * (1.0 + abs(x))
        x = xn
        if done:
            break
    return x - a


@njit(cache=True, parallel=True)
def margins_kernel(user, pref, oth, label, U, V, out):
    r = U.shape[1]
    for p in prange(user.shape[0]):
        i = user[p]
        j = pref[p]
        k = oth[p]
        s = 0.0
        for c in range(r):
            s += U[i, c] * (V[j, c] - V[k, c])
        out[p] = label[p] * s


@njit(cache=True, parallel=True)
def user_pass_kernel(user, pref, oth, label, U, V, alpha, order, bounds,
                     lam, loss_code):
    """Stochastic dual coordinate steps on the user block; V is fixed.

    order[bounds[w]:bounds[w+1]] is worker w's step sequence.  Each step
    updates one dual entry and one row of U in place.
    """
    r = U.shape[1]
    nworkers = bounds.shape[0] - 1
    for w in prange(nworkers):
        for s in range(bounds[w], bounds[w + 1]):
            p = order[s]
            i = user[p]
            j = pref[p]
            k = oth[p]
            y = float(label[p])
            q = 0.0
            marg = 0.0
            for c in range(r):
                gc = y * (V[j, c] - V[k, c])
                q += gc * gc
                marg += gc * U[i, c]
            d = dual_coordinate_delta(marg, q, alpha[p], lam, loss_code)
            if d != 0.0:
                alpha[p] += d
                for c in range(r):
                    U[i, c] += d * y * (V[j, c] - V[k, c])


@njit(cache=True, parallel=True)
def item_pass_kernel(user, pref, oth, label, U, V, beta, order, bounds,
                     lam, loss_code):
    """Stochastic dual coordinate steps on the item block; U is fixed.

    Each step touches exactly the two item rows of the sampled triple.
    """
    r = U.shape[1]
    nworkers = bounds.shape[0] - 1
    for w in prange(nworkers):
        for s in range(bounds[w], bounds[w + 1]):
            p = order[s]
            i = user[p]
            j = pref[p]
            k = oth[p]
            y = float(label[p])
            q = 0.0
            marg = 0.0
            for c in range(r):
                ui = U[i, c]
                q += ui * ui
                marg += ui * (V[j, c] - V[k, c])
            q *= 2.0
            marg *= y
            d = dual_coordinate_delta(marg, q, beta[p], lam, loss_code)
            if d != 0.0:
                beta[p] += d
                for c in range(r):
                    step = d * y * U[i, c]
                    V[j, c] += step
                    V[k, c] -= step


@njit(cache=True, parallel=True)
def rebuild_user_kernel(order, indptr, pref, oth, label, alpha, V, U):
    """u_i = sum over the user's triples of alpha * label * (v_j - v_k)."""
    r = U.shape[1]
    for i in prange(indptr.shape[0] - 1):
        for c in range(r):
            U[i, c] = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            p = order[t]
            w = alpha[p] * label[p]
            j = pref[p]
            k = oth[p]
            for c in range(r):
                U[i, c] += w * (V[j, c] - V[k, c])


@njit(cache=True, parallel=True)
def rebuild_item_kernel(pos, sign, indptr, user, label, beta, U, V):
    """v_j = sum of beta * label * u_i, signed by which side of the pair j is on."""
    r = V.shape[1]
    for j in prange(indptr.shape[0] - 1):
        for c in range(r):
            V[j, c] = 0.0
        for t in range(indptr[j], indptr[j + 1]):
            p = pos[t]
            w = sign[t] * beta[p] * label[p]
            i = user[p]
            for c in range(r):
                V[j, c] += w * U[i, c]


@njit(cache=True)
def loss_derivative(z, loss_code):
    if loss_code == LOSS_L2HINGE:
        if z < 1.0:
            return -2.0 * (1.0 - z)
        return 0.0
    # logistic family: -sigmoid(-z), stable on both tails
    if z >= 0.0:
        return -math.exp(-z) / (1.0 + math.exp(-z))
    return -1.0 / (1.0 + math.exp(z))


@njit(cache=True)
def sgd_epoch_kernel(user, pref, oth, label, U, V, order, t0, step_num,
                     step_den, lam, user_counts, item_counts, loss_code):
    """One epoch of per-triple gradient steps with an inverse-decay step size.

    Step t (counted globally from 0) uses eta = step_num / (1 + step_den*t).
    All three row updates read the pre-step values.  Returns the next
    global step count.
    """
    r = U.shape[1]
    du = np.empty(r, dtype=np.float64)
    dvj = np.empty(r, dtype=np.float64)
    dvk = np.empty(r, dtype=np.float64)
    t = t0
    for s in range(order.shape[0]):
        p = order[s]
        i = user[p]
        j = pref[p]
        k = oth[p]
        y = float(label[p])
        marg = 0.0
        for c in range(r):
            marg += U[i, c] * (V[j, c] - V[k, c])
        marg *= y
        g = loss_derivative(marg, loss_code) * y
        eta = step_num / (1.0 + step_den * t)
        ci = lam / user_counts[i]
        cj = lam / item_counts[j]
        ck = lam / item_counts[k]
        for c in range(r):
            du[c] = eta * (g * (V[j, c] - V[k, c]) + ci * U[i, c])
            dvj[c] = eta * (g * U[i, c] + cj * V[j, c])
            dvk[c] = eta * (-g * U[i, c] + ck * V[k, c])
        for c in range(r):
            U[i, c] -= du[c]
            V[j, c] -= dvj[c]
            V[k, c] -= dvk[c]
        t += 1
    return t
