"""Independent reference computations used to pin expected values.

Nothing here imports the package's numerical code; each oracle follows the
defining formula in the most literal way available.
"""

import itertools
import math

import numpy as np


def power_iteration_norm(A, iters=2000, seed=1):
    """Spectral norm as sqrt of the top eigenvalue of A^T A by power iteration."""
    A = np.asarray(A, dtype=float)
    if not A.any():
        return 0.0
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    for _ in range(iters):
        w = A.T @ (A @ v)
        v = w / np.linalg.norm(w)
    return math.sqrt(float(v @ (A.T @ (A @ v))))


def dense_tangent_max(A, count=20000):
    """Max of v^T A v over unit zero-sum v in R^3 by sweeping the tangent circle."""
    e1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2)
    e2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6)
    best = -math.inf
    for k in range(count):
        a = 2 * math.pi * k / count
        v = math.cos(a) * e1 + math.sin(a) * e2
        best = max(best, float(v @ A @ v))
    return best


def grid_max_gap_sum(A, res):
    """max over grid points of the extended simplex and i of sum_j [p_j - p_i]_+."""
    n = len(A)
    best = 0.0
    for c in itertools.product(range(res + 1), repeat=n):
        if sum(c) > res:
            continue
        x = [ci / res for ci in c]
        p = [sum(A[i][j] * x[j] for j in range(n)) for i in range(n)]
        for i in range(n):
            s = sum(max(p[j] - p[i], 0.0) for j in range(n))
            best = max(best, s)
    return best


def constants_by_hand(n, rho, B, delays, delta, margin=0.01):
    d = [sum(delays[j][i] for j in range(n)) for i in range(n)]
    N = n ** 1.5
    M = (1 + 2 * rho * B * n ** 0.5) * n * math.sqrt(sum(di * di for di in d))
    K = (1 + margin) * M * (B + 1 / (2 * rho)) * n ** 0.5 / (1 - delta)
    L = n ** 0.5 / (2 * rho) + B * n ** 0.5
    return {"N": N, "M": M, "K": K, "L": L, "d": d}


def storage_literal(x, p, rho):
    n = len(x)
    return 0.5 * sum(x[i] * rho * max(p[j] - p[i], 0.0) ** 2 for i in range(n) for j in range(n))


def field_literal(x, p, rho):
    n = len(x)
    return [sum(x[j] * rho * max(p[i] - p[j], 0.0) for j in range(n))
            - x[i] * sum(rho * max(p[j] - p[i], 0.0) for j in range(n)) for i in range(n)]


def central_diff(f, z, eps=1e-6):
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for k in range(len(z)):
        e = np.zeros_like(z)
        e[k] = eps
        g[k] = (f(z + e) - f(z - e)) / (2 * eps)
    return g


def naive_delayed_euler(A, rho, lags, h, x0, lam, steps):
    """Explicit Euler for the delayed system with integer step lags.

    Keeps the full history in Python lists; the completion for pair (j, i)
    at step k is the departure flux recorded at step k - lags[j][i], or zero
    before the first departure could have arrived.
    """
    n = len(x0)
    x = [float(v) for v in x0]
    y = [[0.0] * n for _ in range(n)]
    flux_hist = []
    xs = [list(x)]
    for k in range(steps):
        p = [sum(A[i][j] * x[j] for j in range(n)) for i in range(n)]
        S = [[lam * x[j] * rho * max(p[i] - p[j], 0.0) for i in range(n)] for j in range(n)]
        flux_hist.append(S)
        C = [[0.0] * n for _ in range(n)]
        for j in range(n):
            for i in range(n):
                m = k - lags[j][i]
                if m >= 0:
                    C[j][i] = flux_hist[m][j][i]
        dx = [sum(C[j][i] for j in range(n)) - sum(S[i][m] for m in range(n)) for i in range(n)]
        x = [max(x[i] + h * dx[i], 0.0) for i in range(n)]
        y = [[max(y[j][i] + h * (S[j][i] - C[j][i]), 0.0) for i in range(n)] for j in range(n)]
        xs.append(list(x))
    return np.array(xs), np.array(y)
