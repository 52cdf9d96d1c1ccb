"""Delayed Smith dynamics with agents in transit.

Agents that decide to switch from j to i leave the game immediately and
re-enter as i-strategists ``d[j, i]`` time units later. ``x`` holds in-game
shares and ``y[j, i]`` the mass travelling from j to i; ``x.sum() + y.sum()``
stays at one.

The step loop runs in the core chosen by :mod:`popdelay._backend`. The
undelayed baseline integrator in this module is deliberately separate
numpy code so it can serve as an oracle for the zero-delay case.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from . import _backend
from .games import Game, check_state, nash_distance_many
from .history import HistoryBuffer, HistoryUnderrun  # noqa: F401  (re-exported)
from .revision import (CertifiedConstants, ProtocolParams, compute_constants,
                       edm_field, storage_many)
from .tuner import TunerConfig, TunerState, UpdateRecord, mark_termination

SCHEMES = {"euler": 0, "heun": 1}
MAX_STEP = 1e-2
CLIP_ALARM = 1e-6


class NumericalError(FloatingPointError):
    """Integration produced a non-finite value."""

    def __init__(self, message: str, last_good_time: float):
        super().__init__(message)
        self.last_good_time = last_good_time


@dataclass(frozen=True, eq=False)
class DelayMatrix:
    """Transition times; ``d[j, i]`` is the time needed to switch from j to i."""

    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError(f"delay matrix must be square, got shape {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("delays must be finite and non-negative")
        if np.any(np.diag(d) != 0):
            raise ValueError("delay matrix must have a zero diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @classmethod
    def abs_diff(cls, n: int) -> "DelayMatrix":
        idx = np.arange(n)
        return cls(np.abs(idx[:, None] - idx[None, :]).astype(float))

    @classmethod
    def zeros(cls, n: int) -> "DelayMatrix":
        return cls(np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def d_max(self) -> float:
        return float(self.d.max(initial=0.0))

    @property
    def d_i(self) -> np.ndarray:
        return self.d.sum(axis=0)

    @property
    def d_min_positive(self) -> float | None:
        pos = self.d[self.d > 0]
        return float(pos.min()) if pos.size else None

    def default_step(self) -> float:
        dmin = self.d_min_positive
        return MAX_STEP if dmin is None else min(MAX_STEP, dmin / 50.0)


def default_stride(h: float) -> int:
    return max(1, int(round(0.05 / h)))


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    x: np.ndarray
    y: np.ndarray
    lam: float
    s_bar: float
    ne_dist: float
    transit_mass: float


@dataclass
class Trajectory:
    """Recorded samples plus per-step diagnostics of one run.

    Sample arrays have one row per recorded time. ``dx_norm``, ``dy_norm`` and
    ``step_lam`` have one entry per integration step starting at ``step_k0``:
    the norms of the applied slopes of ``x`` and of the arrival vector
    ``y.sum(axis=0)``, and the rate in force during that step.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    s_bar: np.ndarray
    ne_dist: np.ndarray
    transit_mass: np.ndarray
    h: float
    rho: float
    dx_norm: np.ndarray
    dy_norm: np.ndarray
    step_lam: np.ndarray
    step_k0: int = 0
    update_log: list[UpdateRecord] = field(default_factory=list)
    clip_total: float = 0.0
    baseline: bool = False
    payoff: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def y_in(self) -> np.ndarray:
        """Mass arriving at each strategy, ``y.sum(axis=1)`` per sample."""
        return self.y.sum(axis=1)

    @property
    def step_t(self) -> np.ndarray:
        return (self.step_k0 + np.arange(len(self.dx_norm))) * self.h

    def mass_error(self) -> float:
        return float(np.max(np.abs(self.x.sum(axis=1) + self.transit_mass - 1.0)))

    def samples(self) -> Iterator[TrajectorySample]:
        for r in range(len(self.t)):
            yield TrajectorySample(float(self.t[r]), self.x[r], self.y[r], float(self.lam[r]),
                                   float(self.s_bar[r]), float(self.ne_dist[r]),
                                   float(self.transit_mass[r]))


def _finish(game: Game, rho: float, h: float, ks, xs, ys, lams, diag, k0, updates,
            clip, baseline=False) -> Trajectory:
    t = np.asarray(ks, dtype=float) * h
    X = np.asarray(xs, dtype=float)
    Y = np.asarray(ys, dtype=float)
    P = X @ game.matrix.T
    if game.ne_set:
        ne = nash_distance_many(game, X)
    else:
        ne = np.full(len(X), np.nan)
    return Trajectory(
        t=t, x=X, y=Y, lam=np.asarray(lams, dtype=float),
        s_bar=storage_many(X, P, rho), ne_dist=ne, transit_mass=Y.sum(axis=(1, 2)),
        h=h, rho=rho, dx_norm=diag[0], dy_norm=diag[1], step_lam=diag[2], step_k0=k0,
        update_log=list(updates), clip_total=clip, baseline=baseline, payoff=P,
    )


class SimulatorState:
    """Single-owner handle on one delayed simulation."""

    def __init__(self, game: Game, params: ProtocolParams, delays: DelayMatrix, h: float,
                 core, consts: CertifiedConstants | None, tuner_config: TunerConfig):
        self.game = game
        self.params = params
        self.delays = delays
        self.h = h
        self.core = core
        self.consts = consts
        self.tuner_config = tuner_config

    @property
    def k(self) -> int:
        return int(self.core.k)

    @property
    def t(self) -> float:
        return self.core.k * self.h

    @property
    def x(self) -> np.ndarray:
        return self.core.x

    @property
    def y(self) -> np.ndarray:
        return self.core.y

    @property
    def lam(self) -> float:
        return float(self.core.lam)

    @property
    def backend(self) -> str:
        return self.core.backend

    @property
    def tuner_state(self) -> TunerState:
        log = list(self.core.updates)
        st = TunerState(k=len(log), lambda_k=self.lam, t_k=float(self.core.t_k), update_log=log)
        if self.tuner_config.enabled:
            mark_termination(st, self.t, self.delays.d_max, self.tuner_config.dwell_factor)
        return st


def init(game: Game, params: ProtocolParams, delays: DelayMatrix, x0, lambda0: float,
         h: float | None = None, *, tuner: TunerConfig | None = None,
         consts: CertifiedConstants | None = None, scheme: str = "euler",
         backend: str | None = None) -> SimulatorState:
    """Start a simulation at ``x0`` with nobody in transit."""
    if delays.n != game.n or params.n != game.n:
        raise ValueError("game, protocol and delays disagree on the strategy count")
    x0 = check_state(x0, game.n, simplex=True)
    h = delays.default_step() if h is None else float(h)
    if not h > 0:
        raise ValueError(f"step must be positive, got {h!r}")
    if not lambda0 > 0:
        raise ValueError(f"lambda0 must be positive, got {lambda0!r}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if tuner is None:
        tuner = TunerConfig(lambda0=lambda0, enabled=False)
    if tuner.enabled and consts is None:
        consts = compute_constants(game, params, delays, tuner.delta)
    Core = _backend.core_class(backend)
    core = Core(game.matrix, params.rho, delays.d, h, x0, lambda0, consts, tuner, SCHEMES[scheme])
    return SimulatorState(game, params, delays, h, core, consts, tuner)


def step(state: SimulatorState) -> SimulatorState:
    out = state.core.advance(1, 1)
    if out["status"]:
        raise NumericalError(f"non-finite state at t={state.t + state.h:g}", state.t)
    return state


Observer = Callable[[SimulatorState], None]


def _steps_to(state: SimulatorState, T: float) -> int:
    return max(0, math.ceil(T / state.h - 1e-9) - state.k)


def run(state: SimulatorState, T: float, observers: Iterable[Observer] = (),
        stride: int | None = None) -> Trajectory:
    """Integrate until ``t >= T`` and return the recorded trajectory.

    Samples are taken every ``stride`` steps (on the global step grid) and
    at the final time. Observers, if any, are called after every step, which
    drops the loop to one core call per step.
    """
    if T < 0:
        raise ValueError("horizon must be non-negative")
    stride = default_stride(state.h) if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    observers = list(observers)
    k0 = state.k
    n_steps = _steps_to(state, T)
    chunks = []
    if observers:
        for _ in range(n_steps):
            chunks.append(state.core.advance(1, stride))
            if chunks[-1]["status"]:
                break
            for obs in observers:
                obs(state)
    elif n_steps:
        chunks.append(state.core.advance(n_steps, stride))
    if chunks and chunks[-1]["status"]:
        raise NumericalError(f"non-finite state after t={state.t:g}", state.t)
    if state.core.clip_total > CLIP_ALARM:
        warnings.warn(f"clipped {state.core.clip_total:.3g} of negative mass; "
                      "the step size is likely too large", RuntimeWarning, stacklevel=2)

    ks = [c["k"] for c in chunks]
    xs = [c["x"] for c in chunks]
    ys = [c["y"] for c in chunks]
    ls = [c["lam"] for c in chunks]
    kf, xf, yf, lf = state.core.snapshot()
    ks.append(np.array([kf]))
    xs.append(xf[None])
    ys.append(yf[None])
    ls.append(np.array([lf]))
    cat = lambda key: np.concatenate([c[key] for c in chunks]) if chunks else np.empty(0)
    diag = (cat("dx_norm"), cat("dy_norm"), cat("step_lam"))
    updates = [u for u in state.core.updates if u.t_k >= k0 * state.h - 1e-12]
    return _finish(state.game, state.params.rho, state.h, np.concatenate(ks),
                   np.concatenate(xs), np.concatenate(ys), np.concatenate(ls), diag, k0,
                   updates, float(state.core.clip_total))


def run_baseline_edm(game: Game, params: ProtocolParams, x0, lam: float, h: float, T: float,
                     stride: int | None = None, scheme: str = "euler") -> Trajectory:
    """Undelayed Smith dynamics at a fixed rate, integrated with plain numpy."""
    x = check_state(x0, game.n, simplex=True).copy()
    if not h > 0:
        raise ValueError("step must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    stride = default_stride(h) if stride is None else int(stride)
    n_steps = max(0, math.ceil(T / h - 1e-9))
    A = game.matrix
    n = game.n
    ks, xs = [], []
    dxn = np.empty(n_steps)
    for k in range(n_steps):
        if k % stride == 0:
            ks.append(k)
            xs.append(x.copy())
        v = lam * edm_field(x, A @ x, params)
        if scheme == "heun":
            xp = x + h * v
            v = 0.5 * (v + lam * edm_field(xp, A @ xp, params))
        x = x + h * v
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state at t={(k + 1) * h:g}", k * h)
        dxn[k] = np.linalg.norm(v)
    ks.append(n_steps)
    xs.append(x.copy())
    m = len(ks)
    lam_arr = np.full(m, float(lam))
    diag = (dxn, np.zeros(n_steps), np.full(n_steps, float(lam)))
    return _finish(game, params.rho, h, ks, xs, np.zeros((m, n, n)), lam_arr, diag, 0, [],
                   0.0, baseline=True)
