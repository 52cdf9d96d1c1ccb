"""Single-population games with linear payoffs.

Every game here has the form ``p = A @ x``. The payoff map is evaluated on the
extended state space (non-negative vectors summing to at most one), since
agents in transit do not play.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Sequence

import numpy as np

TOL = 1e-9


class StateError(ValueError):
    """A population state is malformed or lies outside the extended simplex."""


class NEUnknownError(LookupError):
    """Raised when a distance to the equilibrium set is requested but none is known."""


@dataclass(frozen=True, eq=False)
class Game:
    """Linear population game ``F(x) = matrix @ x``.

    ``ne_set`` lists known Nash equilibria (points of the simplex). It may be
    empty; :func:`with_ne_set` fills it by grid search.
    """

    matrix: np.ndarray
    ne_set: tuple[np.ndarray, ...] = ()
    name: str = "linear"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ValueError(f"payoff matrix must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("payoff matrix has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        pts = []
        for z in self.ne_set:
            z = np.array(z, dtype=float)
            if z.shape != (A.shape[0],):
                raise ValueError(f"NE point {z} has wrong dimension")
            z.setflags(write=False)
            pts.append(z)
        object.__setattr__(self, "ne_set", tuple(pts))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def bound_DF(self) -> float:
        return estimate_bound_DF(self)

    def to_spec(self) -> dict:
        """Config-file representation (see :mod:`popdelay.config`)."""
        if self.name == "rps":
            return {"type": "rps", "a": self.params["a"], "b": self.params["b"]}
        spec = {"type": "linear", "matrix": self.matrix.tolist()}
        if self.ne_set:
            spec["ne"] = [z.tolist() for z in self.ne_set]
        return spec


def rps(a: float = 1.0, b: float = 2.0) -> Game:
    """Rock-paper-scissors: lose ``a`` to the beating strategy, win ``b``."""
    if a <= 0 or b <= 0:
        raise ValueError("RPS requires a, b > 0")
    A = np.array([[0.0, -a, b], [b, 0.0, -a], [-a, b, 0.0]])
    return Game(A, ne_set=(np.full(3, 1.0 / 3.0),), name="rps", params={"a": a, "b": b})


def linear_game(matrix, ne: Sequence[Sequence[float]] | None = None) -> Game:
    return Game(np.asarray(matrix, dtype=float), ne_set=tuple(ne or ()), name="linear")


def zero_game(n: int) -> Game:
    return Game(np.zeros((n, n)), name="zero")


def check_state(x, n: int, *, simplex: bool = False) -> np.ndarray:
    """Validate ``x`` as a member of the extended simplex (or the simplex)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise StateError(f"state has shape {x.shape}, expected ({n},)")
    if not np.all(np.isfinite(x)):
        raise StateError("state has non-finite entries")
    if np.any(x < -TOL):
        raise StateError(f"state has negative entries: {x}")
    s = x.sum()
    if s > 1.0 + TOL:
        raise StateError(f"state mass {s!r} exceeds 1")
    if simplex and abs(s - 1.0) > TOL:
        raise StateError(f"state mass {s!r} is not 1")
    return x


def evaluate_payoff(game: Game, x) -> np.ndarray:
    x = check_state(x, game.n)
    return game.matrix @ x


def evaluate_jacobian(game: Game, x) -> np.ndarray:
    check_state(x, game.n)
    return game.matrix.copy()


def estimate_bound_DF(game: Game, grid_resolution: int = 2) -> float:
    """Upper bound on the spectral norm of the payoff differential.

    The differential of a linear game is constant, so the exact matrix
    2-norm is returned and the grid is not needed.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    return float(np.linalg.norm(game.matrix, 2))


def simplex_grid(n: int, resolution: int, *, extended: bool = True) -> Iterator[np.ndarray]:
    """Yield chunks of grid points ``k / resolution`` in the (extended) simplex.

    Chunks are split on the first coordinate to keep memory bounded.
    """
    if n == 1:
        pts = np.arange(resolution + 1) if extended else np.array([resolution])
        yield pts.reshape(-1, 1) / resolution
        return
    for k0 in range(resolution + 1):
        rest = _compositions(n - 1, resolution - k0, extended)
        chunk = np.empty((len(rest), n))
        chunk[:, 0] = k0
        chunk[:, 1:] = rest
        yield chunk / resolution


def _compositions(m: int, total: int, at_most: bool) -> np.ndarray:
    # integer vectors of length m with sum == total (or <= total)
    if m == 1:
        vals = np.arange(total + 1) if at_most else np.array([total])
        return vals.reshape(-1, 1)
    blocks = []
    for k in range(total + 1):
        sub = _compositions(m - 1, total - k, at_most)
        block = np.empty((len(sub), m), dtype=np.int64)
        block[:, 0] = k
        block[:, 1:] = sub
        blocks.append(block)
    return np.concatenate(blocks)


def tangent_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n x n-1) of the zero-sum hyperplane."""
    if n < 2:
        return np.zeros((n, 0))
    P = np.eye(n) - np.full((n, n), 1.0 / n)
    u, s, _ = np.linalg.svd(P)
    return u[:, : n - 1]


@dataclass
class ContractivityReport:
    contractive: bool
    worst_value: float
    witness: tuple[np.ndarray, np.ndarray]
    sampled_worst: float
    exact: bool


def verify_contractive(game: Game, sample_count: int = 1000, seed: int = 0) -> ContractivityReport:
    """Check ``v @ DF(z) @ v <= 0`` for points ``z`` of the simplex and unit tangents ``v``.

    Tangents are standard normal draws projected onto the zero-sum plane. For
    linear games the supremum over unit tangents is also computed exactly as
    the top eigenvalue of the symmetric part restricted to the tangent space,
    and that value is the one reported.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    n = game.n
    rng = np.random.default_rng(seed)
    if n < 2:
        z = np.ones(n)
        return ContractivityReport(True, 0.0, (z, np.zeros(n)), 0.0, True)

    Z = rng.dirichlet(np.ones(n), size=sample_count)
    V = rng.standard_normal((sample_count, n))
    V -= V.mean(axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    # the Jacobian does not depend on z for linear games, but keep the
    # evaluation pointwise so the sampler stays honest
    vals = np.array([v @ evaluate_jacobian(game, z) @ v for z, v in zip(Z, V)])
    i = int(np.argmax(vals))
    sampled = float(vals[i])

    Q = tangent_basis(n)
    sym = 0.5 * (game.matrix + game.matrix.T)
    w, U = np.linalg.eigh(Q.T @ sym @ Q)
    exact = float(w[-1])
    v_exact = Q @ U[:, -1]
    if exact >= sampled:
        witness = (Z[i], v_exact)
    else:
        witness = (Z[i], V[i])
    worst = max(exact, sampled)
    return ContractivityReport(worst <= TOL, worst, witness, sampled, True)


def ne_residual(game: Game, x) -> float:
    """Zero exactly on Nash equilibria: mass deficit plus the largest supported payoff gap."""
    x = check_state(x, game.n)
    p = game.matrix @ x
    gaps = np.maximum(p.max() - p, 0.0)
    return float(abs(1.0 - x.sum()) + np.max(x * gaps))


def nash_distance(game: Game, x) -> float:
    if not game.ne_set:
        raise NEUnknownError("NE set unknown for this game; use ne_residual instead")
    x = np.asarray(x, dtype=float)
    return float(min(np.linalg.norm(x - z) for z in game.ne_set))


def nash_distance_many(game: Game, X: np.ndarray) -> np.ndarray:
    """Vectorised :func:`nash_distance` over rows of ``X``."""
    if not game.ne_set:
        raise NEUnknownError("NE set unknown for this game; use ne_residual instead")
    Z = np.stack(game.ne_set)
    d = np.linalg.norm(X[:, None, :] - Z[None, :, :], axis=2)
    return d.min(axis=1)


def _residuals(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    P = X @ A.T
    gaps = P.max(axis=1, keepdims=True) - P
    return np.abs(1.0 - X.sum(axis=1)) + np.max(X * gaps, axis=1)


def find_ne(game: Game, resolution: float = 1e-3, coarse: int = 20) -> np.ndarray:
    """Locate a Nash equilibrium by coarse-to-fine grid search on the simplex.

    The coarse grid has spacing ``1/coarse``; each refinement halves the
    spacing and searches a ``5**(n-1)`` neighbourhood of the incumbent until
    the spacing drops below ``resolution``.
    """
    n = game.n
    A = game.matrix
    best, best_r = None, np.inf
    for chunk in simplex_grid(n, coarse, extended=False):
        r = _residuals(A, chunk)
        i = int(np.argmin(r))
        if r[i] < best_r:
            best, best_r = chunk[i].copy(), r[i]
    step = 1.0 / coarse
    offsets = np.array(list(product(range(-2, 3), repeat=n - 1)), dtype=float)
    while step > resolution:
        step /= 2.0
        cand = np.empty((len(offsets), n))
        cand[:, : n - 1] = best[: n - 1] + step * offsets
        cand[:, n - 1] = 1.0 - cand[:, : n - 1].sum(axis=1)
        cand = cand[np.all(cand >= -1e-15, axis=1)]
        cand = np.clip(cand, 0.0, None)
        r = _residuals(A, cand)
        i = int(np.argmin(r))
        if r[i] <= best_r:
            best, best_r = cand[i].copy(), r[i]
    return best


def with_ne_set(game: Game) -> Game:
    """Return ``game`` with a populated NE set, searching for one if needed."""
    if game.ne_set:
        return game
    z = find_ne(game)
    return Game(game.matrix, ne_set=(z,), name=game.name, params=dict(game.params))
