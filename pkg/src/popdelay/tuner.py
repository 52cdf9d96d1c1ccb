"""Online revision-rate tuning.

At least ``2 * d_max`` after the previous update the tuner looks at the
current state. If the coupling weight ``f`` is positive and the dissipation
``grad_x S . V`` is no more negative than ``-lambda_k f / (1 - delta)``, the rate
drops to ``-(grad_x S . V) / (2 f)``. Rates therefore only decrease, by at
least a factor ``2 (1 - delta)`` per update.

The pure-Python integration core calls :func:`maybe_update` directly; the
compiled core carries an inlined copy of the same rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .revision import CertifiedConstants, ProtocolParams, edm_field, grad_x_storage

F_TOL = 1e-12
LAMBDA_FLOOR = 1e-8
DWELL_FACTOR = 50.0
# slack on the spacing test so that grid times equal to t_k + 2 d_max qualify
SPACING_SLACK = 1e-9
# dot_val above this is treated as a numerical anomaly rather than rounding
DOT_TOL = 1e-12


class TunerError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TunerConfig:
    delta: float = 0.25
    lambda0: float = 1.0
    enabled: bool = True
    f_tol: float = F_TOL
    lambda_floor: float = LAMBDA_FLOOR
    dwell_factor: float = DWELL_FACTOR

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie strictly between 0 and 1/2, got {self.delta!r}")
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0!r}")
        if not self.lambda_floor > 0:
            raise ValueError("lambda_floor must be positive")


class UpdateRecord(NamedTuple):
    k: int
    t_k: float
    lambda_k: float
    dot_val: float
    f_val: float
    floored: bool


@dataclass
class TunerState:
    k: int = 0
    lambda_k: float = 1.0
    t_k: float = 0.0
    update_log: list[UpdateRecord] = field(default_factory=list)
    terminated: bool = False

    @classmethod
    def initial(cls, config: TunerConfig) -> "TunerState":
        return cls(k=0, lambda_k=config.lambda0, t_k=0.0)


class Conditions(NamedTuple):
    cond1: bool
    cond2: bool
    f_val: float
    dot_val: float


def evaluate_conditions(x, p, tuner: TunerState, consts: CertifiedConstants,
                        params: ProtocolParams, f_tol: float = F_TOL,
                        delta: float | None = None) -> Conditions:
    delta = consts.delta if delta is None else delta
    v = edm_field(x, p, params)
    g = grad_x_storage(x, p, params)
    f_val = float(consts.M * (consts.B_DF * np.linalg.norm(v) + np.linalg.norm(g)))
    dot_val = float(g @ v)
    cond1 = f_val > f_tol
    cond2 = dot_val + tuner.lambda_k * f_val / (1.0 - delta) >= 0.0
    return Conditions(cond1, cond2, f_val, dot_val)


def propose_rate(dot_val: float, f_val: float) -> float:
    """Rate minimising the delay-perturbed storage decay bound."""
    if not f_val > 0:
        raise TunerError(f"coupling weight must be positive, got {f_val!r}")
    if dot_val > DOT_TOL:
        raise TunerError(f"storage increases along the field (dot={dot_val!r})")
    return max(-dot_val / (2.0 * f_val), 0.0)


def is_eligible(t: float, tuner: TunerState, d_max: float, h: float) -> bool:
    return t >= tuner.t_k + 2.0 * d_max - SPACING_SLACK * h


def maybe_update(t: float, x, p, tuner: TunerState, consts: CertifiedConstants,
                 params: ProtocolParams, config: TunerConfig, h: float = 1.0) -> TunerState:
    """Apply one online check at time ``t``; mutates and returns ``tuner``.

    Proposals under ``config.lambda_floor`` are clamped to the floor and
    logged as floored. Once the rate sits at the floor further clamped
    proposals are ignored.
    """
    if not config.enabled or not is_eligible(t, tuner, consts.d_max, h):
        return tuner
    c = evaluate_conditions(x, p, tuner, consts, params, config.f_tol, config.delta)
    if not (c.cond1 and c.cond2):
        return tuner
    lam = propose_rate(c.dot_val, c.f_val)
    floored = False
    if lam < config.lambda_floor:
        if tuner.lambda_k <= config.lambda_floor:
            return tuner
        lam, floored = config.lambda_floor, True
    tuner.k += 1
    tuner.lambda_k = lam
    tuner.t_k = t
    tuner.update_log.append(UpdateRecord(tuner.k, t, lam, c.dot_val, c.f_val, floored))
    return tuner


def mark_termination(tuner: TunerState, t_now: float, d_max: float,
                     dwell_factor: float = DWELL_FACTOR) -> TunerState:
    """Flag a tuner that has not fired for ``dwell_factor * d_max`` (reporting only)."""
    tuner.terminated = (t_now - tuner.t_k) >= dwell_factor * d_max
    return tuner
