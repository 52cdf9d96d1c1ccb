"""Smith revision protocol, its mean dynamics and the certified constants.

All quantities here are rate-normalised: the revision rate multiplies the
field and the storage function, and is factored out. ``edm_field`` is the
unit-rate field and ``storage`` the unit-rate storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .games import Game, estimate_bound_DF, simplex_grid

RHO_SAFETY = 0.999
RHO_GRID = 200


@dataclass(frozen=True)
class ProtocolParams:
    rho: float
    n: int

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be a positive finite number, got {self.rho!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def _gaps(p: np.ndarray) -> np.ndarray:
    # G[i, j] = [p_j - p_i]_+, the incentive to switch from i to j
    return np.maximum(p[None, :] - p[:, None], 0.0)


def switch_rate(p, i: int, j: int, params: ProtocolParams) -> float:
    p = np.asarray(p, dtype=float)
    if not (0 <= i < len(p) and 0 <= j < len(p)):
        raise IndexError(f"strategy index out of range: ({i}, {j}) for n={len(p)}")
    return params.rho * max(p[j] - p[i], 0.0)


def max_valid_rho(game: Game, grid_resolution: int = RHO_GRID) -> float:
    """Largest rho keeping every switch probability (and their sums) at most one.

    Evaluated on a grid of the extended simplex. Returns ``math.inf`` when all
    payoff gaps vanish, meaning any rho is valid.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    A = game.matrix
    worst = 0.0
    for X in simplex_grid(game.n, grid_resolution, extended=True):
        P = X @ A.T
        G = np.maximum(P[:, None, :] - P[:, :, None], 0.0)
        # row sums bound the outflow probability; the single-pair condition
        # is implied but checked anyway for clarity
        worst = max(worst, float(G.sum(axis=2).max()), float(G.max()))
    if worst == 0.0:
        return math.inf
    return 1.0 / worst


def auto_rho(game: Game, grid_resolution: int = RHO_GRID) -> float:
    r = max_valid_rho(game, grid_resolution)
    return r if math.isinf(r) else RHO_SAFETY * r


def edm_field(x, p, params: ProtocolParams) -> np.ndarray:
    """Inflow minus outflow per strategy at unit revision rate."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != p.shape or x.shape != (params.n,):
        raise ValueError(f"dimension mismatch: x{x.shape}, p{p.shape}, n={params.n}")
    R = params.rho * _gaps(p)
    return x @ R - x * R.sum(axis=1)


def storage(x, p, params: ProtocolParams) -> float:
    x = np.asarray(x, dtype=float)
    G = _gaps(np.asarray(p, dtype=float))
    return float(0.5 * params.rho * np.sum(x[:, None] * G**2))


def grad_x_storage(x, p, params: ProtocolParams) -> np.ndarray:
    G = _gaps(np.asarray(p, dtype=float))
    return 0.5 * params.rho * np.sum(G**2, axis=1)


def grad_p_storage(x, p, params: ProtocolParams) -> np.ndarray:
    # exact identity for the Smith protocol
    return edm_field(x, p, params)


def storage_many(X: np.ndarray, P: np.ndarray, rho: float) -> np.ndarray:
    """Row-wise :func:`storage` for stacked states and payoffs."""
    G = np.maximum(P[:, None, :] - P[:, :, None], 0.0)
    return 0.5 * rho * np.einsum("ti,tij->t", X, G**2)


@dataclass(frozen=True)
class CertifiedConstants:
    """Constants of the derivative bounds, storage envelope and tuner.

    ``d_i`` holds the per-strategy sums of incoming delays.
    """

    N: float
    M: float
    K: float
    L: float
    B_DF: float
    d_max: float
    d_i: tuple[float, ...]
    delta: float
    rho: float
    n: int

    def as_dict(self) -> dict:
        out = asdict(self)
        out["d_i"] = list(self.d_i)
        return out

    def text_block(self) -> str:
        keys = ("N", "M", "K", "L", "B_DF", "rho", "d_max", "delta")
        return "\n".join(f"{k} = {getattr(self, k):.12g}" for k in keys)


K_MARGIN = 0.01


def compute_constants(game: Game, params: ProtocolParams, delays, delta: float,
                      margin: float = K_MARGIN) -> CertifiedConstants:
    """Evaluate N, M, K and L for a game, protocol and delay matrix.

    ``delays`` is a :class:`~popdelay.delayed_dynamics.DelayMatrix` or an
    ``n x n`` array with entry ``[j, i]`` the delay from j to i.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta!r}")
    D = np.asarray(getattr(delays, "d", delays), dtype=float)
    n = params.n
    if D.shape != (n, n):
        raise ValueError(f"delay matrix shape {D.shape} does not match n={n}")
    rho = params.rho
    B = estimate_bound_DF(game)
    d_i = D.sum(axis=0)
    N = n ** 1.5
    M = (1.0 + 2.0 * rho * B * math.sqrt(n)) * n * math.sqrt(float(np.sum(d_i**2)))
    K = (1.0 + margin) * M * (B + 1.0 / (2.0 * rho)) * math.sqrt(n) / (1.0 - delta)
    L = math.sqrt(n) / (2.0 * rho) + B * math.sqrt(n)
    return CertifiedConstants(N=N, M=M, K=K, L=L, B_DF=B, d_max=float(D.max(initial=0.0)),
                              d_i=tuple(float(v) for v in d_i), delta=delta, rho=rho, n=n)


def coupling_f(x, p, params: ProtocolParams, consts: CertifiedConstants) -> float:
    """Delay-coupling weight ``M (B ||V|| + ||grad_x S||)``; independent of the rate."""
    v = edm_field(x, p, params)
    g = grad_x_storage(x, p, params)
    return float(consts.M * (consts.B_DF * np.linalg.norm(v) + np.linalg.norm(g)))


def epsilon(lam: float, consts: CertifiedConstants, n: int | None = None) -> float:
    if not lam > 0:
        raise ValueError(f"rate must be positive, got {lam!r}")
    n = consts.n if n is None else n
    return math.sqrt(n**4 * consts.K * lam / (2.0 * consts.rho))


def epsilon_bar(lam: float, consts: CertifiedConstants, n: int | None = None) -> float:
    n = consts.n if n is None else n
    return epsilon(lam, consts, n) + 2.0 * consts.d_max * consts.L * n**1.5 * lam


def protocol_violation(game: Game, params: ProtocolParams, grid_resolution: int = 50) -> float:
    """Largest switch-probability sum on the grid; the protocol is valid iff <= 1."""
    A = game.matrix
    worst = 0.0
    for X in simplex_grid(game.n, grid_resolution, extended=True):
        P = X @ A.T
        G = np.maximum(P[:, None, :] - P[:, :, None], 0.0)
        worst = max(worst, float(params.rho * G.sum(axis=2).max()))
    return worst

