"""Independent reference implementations used as test oracles.

Nothing here imports the package: each routine recomputes its quantity by a
different route (explicit loops, generic optimizers, root finders) so that
agreement with the package is evidence rather than tautology.
"""

import math

import numpy as np
from scipy import optimize


# ---------------------------------------------------------------------------
# market quantities by explicit loops

def loop_intensity(w, v, q, r, phi):
    n_types, n_items = len(v), len(v[0])
    y = [0.0] * n_items
    for i in range(n_types):
        weights = []
        for j in range(n_items):
            sig = (1.0 if r[i] == 0 else 0.0) if phi[j] == 0 else phi[j] ** r[i]
            weights.append(v[i][j] * sig)
        total = sum(weights)
        if total == 0:
            continue
        for j in range(n_items):
            y[j] += w[i] * q[i][j] * weights[j] / total
    return y


def loop_next_purchase(w, v, q, r, phi):
    y = loop_intensity(w, v, q, r, phi)
    s = sum(y)
    return [x / s for x in y]


# ---------------------------------------------------------------------------
# simplex-constrained maximization by spectral projected gradient

def project_simplex(y, floor=0.0):
    """Euclidean projection onto ``{x >= floor, sum x = 1}`` (sort-based)."""
    y = np.asarray(y, dtype=float)
    n = y.size
    mass = 1.0 - n * floor
    z = y - floor
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - mass
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return floor + np.maximum(z - theta, 0.0)


def spg_maximize(f, grad, x0, floor=1e-14, tol=1e-10, max_iter=200000):
    """Spectral projected gradient ascent with a nonmonotone Armijo search.

    Stops when the projected-gradient step ``|P(x + g) - x|_inf`` drops
    below ``tol``.
    """
    x = project_simplex(x0, floor)
    g = grad(x)
    fx = f(x)
    history = [fx]
    alpha = 1.0
    for it in range(max_iter):
        pg = project_simplex(x + g, floor) - x
        if np.max(np.abs(pg)) <= tol:
            return x, it
        d = project_simplex(x + alpha * g, floor) - x
        lam = 1.0
        ref = min(history[-10:])
        slope = float(g @ d)
        while True:
            xn = x + lam * d
            fn = f(xn)
            if fn >= ref + 1e-4 * lam * slope or lam < 1e-20:
                break
            lam *= 0.5
        gn = grad(xn)
        s, yv = xn - x, gn - g
        sy = float(s @ yv)
        alpha = float(s @ s) / -sy if sy < 0 else 1e10
        alpha = min(max(alpha, 1e-12), 1e12)
        x, g, fx = xn, gn, fn
        history.append(fx)
    raise RuntimeError("projected gradient did not converge")


def total_utility_problem(qbar, r):
    qbar = np.asarray(qbar, dtype=float)
    return (lambda x: float(np.sum(qbar * x ** r)),
            lambda x: r * qbar * x ** (r - 1.0))


def efficiency_entropy_problem(qbar, r):
    logq = np.log(np.asarray(qbar, dtype=float))
    return (lambda x: float(np.sum(x * logq) - (1.0 - r) * np.sum(x * np.log(x))),
            lambda x: logq - (1.0 - r) * (np.log(x) + 1.0))


# ---------------------------------------------------------------------------
# equilibria by root finding

def root_tome(w, v, q, r):
    """Solve ``p(phi) = phi`` with a generic root finder in log coordinates."""
    w, v, q, r = (np.asarray(a, dtype=float) for a in (w, v, q, r))
    n = v.shape[1]

    def shares(z):
        e = np.exp(z - z.max())
        return e / e.sum()

    def resid(z):
        phi = shares(np.concatenate([[0.0], z]))
        p = np.array(loop_next_purchase(w, v, q, r, phi))
        return np.log(p[1:] / p[0]) - np.log(phi[1:] / phi[0])

    sol = optimize.root(resid, np.zeros(n - 1), method="hybr", tol=1e-14)
    # hybr reports failure when it cannot improve further; judge by the residual instead
    if np.max(np.abs(resid(sol.x))) > 1e-12:
        raise RuntimeError(sol.message)
    return shares(np.concatenate([[0.0], sol.x]))


def entropy(p):
    return -sum(x * math.log(x) for x in p if x > 0)
