"""Run diagnostics: oscillation metrics, certificate checks and run comparison."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .delayed_dynamics import Trajectory
from .revision import CertifiedConstants, ProtocolParams, epsilon_bar, storage_many
from .tuner import UpdateRecord

CERT_TOL = 1e-6
PASSIVITY_TOL = 1e-4
CONVERGENCE_THRESHOLD = 1e-2


@dataclass
class OscillationMetrics:
    amplitude: float
    mean_transit: float


def oscillation_metrics(trace: Trajectory, tail_fraction: float = 0.5) -> OscillationMetrics:
    """Sup of the NE distance and mean transit mass over the trailing ``tail_fraction`` of time."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    t0, t1 = trace.t[0], trace.t[-1]
    start = t1 - tail_fraction * (t1 - t0)
    w = trace.t >= start - 1e-12
    return OscillationMetrics(float(np.max(trace.ne_dist[w])), float(np.mean(trace.transit_mass[w])))


@dataclass
class BoundViolations:
    """Counts of samples breaking each certified inequality.

    ``passivity`` is ``None`` for delayed runs, where the storage inequality
    of the undelayed dynamics does not apply.
    """

    dx: int = 0
    dy: int = 0
    envelope: int = 0
    passivity: int | None = None
    checked_dx: int = 0
    checked_dy: int = 0
    checked_envelope: int = 0
    worst_dx_excess: float = -np.inf
    worst_dy_excess: float = -np.inf
    worst_envelope_ratio: float = 0.0
    passivity_residual: float | None = None

    @property
    def total(self) -> int:
        return self.dx + self.dy + self.envelope + (self.passivity or 0)


def _switch_times(trace: Trajectory, update_log: Sequence[UpdateRecord]) -> np.ndarray:
    return np.array([u.t_k for u in update_log], dtype=float)


def constant_rate_mask(step_t: np.ndarray, switches: np.ndarray, hold: float,
                       h: float = 0.0, start: float | None = None) -> np.ndarray:
    """True where ``t >= start`` and no rate switch happened in ``(t - hold, t]``.

    ``start`` defaults to ``hold``.
    """
    start = hold if start is None else start
    ok = step_t >= start - 1e-9 * max(h, 1.0)
    for s in switches:
        ok &= ~((step_t >= s - 1e-12) & (step_t < s + hold - 1e-12))
    return ok


def passivity_residual(trace: Trajectory) -> float:
    """``max_t [S(t) - S(t0) - int x'.p' dt]`` with S the rate-scaled storage.

    Slopes are finite differences of the recorded samples, the integral is
    trapezoidal. Intended for constant-rate baseline runs.
    """
    if len(trace) < 3:
        return 0.0
    lam = trace.lam
    S = lam * trace.s_bar
    dt = np.diff(trace.t)
    P = trace.payoff
    xd = np.diff(trace.x, axis=0) / dt[:, None]
    pd = np.diff(P, axis=0) / dt[:, None]
    # slopes sit at interval midpoints; x'.p' is constant per interval
    integrand = np.einsum("ti,ti->t", xd, pd)
    integral = np.concatenate([[0.0], np.cumsum(integrand * dt)])
    return float(np.max(S - S[0] - integral))


def verify_certificates(trace: Trajectory, update_log: Sequence[UpdateRecord] | None,
                        consts: CertifiedConstants, params: ProtocolParams,
                        tol: float = CERT_TOL, passivity_tol: float = PASSIVITY_TOL) -> BoundViolations:
    """Count breaches of the derivative bounds, the storage envelope and passivity.

    The derivative bounds use the per-step slopes recorded by the core. The
    bound on ``x'`` is checked once the rate has been constant for ``d_max``
    (every inflow then left at the current rate); the bound on ``y'`` also
    needs ``x'`` bounded over the preceding delay span, hence ``2 d_max``
    after a switch. Both start at ``d_max`` on a run's initial rate. The envelope
    bound for the interval between the update at ``t_{k+1}`` and the next one
    uses the rate ``lambda_k`` in force before that update.
    """
    if update_log is None:
        update_log = trace.update_log
    if len(update_log) and trace.baseline:
        raise ValueError("baseline traces carry no rate updates")
    if any(u.t_k > trace.t[-1] + 1e-9 for u in update_log):
        raise ValueError("update log extends past the trace")
    out = BoundViolations()
    switches = _switch_times(trace, update_log)
    d_max = consts.d_max

    st = trace.step_t
    if len(st):
        lam = trace.step_lam
        ex = trace.dx_norm - consts.N * lam
        ey = trace.dy_norm - consts.M * lam**2
        mx = constant_rate_mask(st, switches, d_max, trace.h)
        my = constant_rate_mask(st, switches, 2.0 * d_max, trace.h, start=d_max)
        out.checked_dx = int(mx.sum())
        out.checked_dy = int(my.sum())
        if mx.any():
            out.dx = int(np.sum(ex[mx] > tol))
            out.worst_dx_excess = float(ex[mx].max())
        if my.any():
            out.dy = int(np.sum(ey[my] > tol))
            out.worst_dy_excess = float(ey[my].max())

    # rates in force before each update: lambda_0 (first trace sample) then the log
    lam_before = [float(trace.lam[0]) if trace.step_k0 == 0 else None]
    lam_before += [u.lambda_k for u in update_log]
    for m, u in enumerate(update_log):
        lam_k = lam_before[m]
        if lam_k is None:
            continue
        t_end = update_log[m + 1].t_k if m + 1 < len(update_log) else np.inf
        w = (trace.t >= u.t_k - 1e-12) & (trace.t < t_end - 1e-12)
        if not w.any():
            continue
        bound = epsilon_bar(lam_k, consts)
        out.checked_envelope += int(w.sum())
        out.envelope += int(np.sum(trace.s_bar[w] >= bound))
        out.worst_envelope_ratio = max(out.worst_envelope_ratio, float(trace.s_bar[w].max() / bound))

    if trace.baseline:
        r = passivity_residual(trace)
        out.passivity_residual = r
        out.passivity = int(r > passivity_tol)
    return out


@dataclass
class RunReport:
    final_ne_dist: float
    final_transit_mass: float
    osc_amplitude: float
    mean_transit_mass_tail: float
    bound_violations: dict
    update_count: int
    converged: bool
    label: str = ""
    final_lambda: float = float("nan")
    horizon: float = float("nan")
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_jsonable)

    def text_block(self) -> str:
        lines = [
            f"label = {self.label}",
            f"horizon = {self.horizon:.12g}",
            f"final_ne_dist = {self.final_ne_dist:.12g}",
            f"final_transit_mass = {self.final_transit_mass:.12g}",
            f"osc_amplitude = {self.osc_amplitude:.12g}",
            f"mean_transit_mass_tail = {self.mean_transit_mass_tail:.12g}",
            f"update_count = {self.update_count}",
            f"final_lambda = {self.final_lambda:.12g}",
            f"converged = {str(self.converged).lower()}",
        ]
        for k in ("dx", "dy", "envelope", "passivity"):
            lines.append(f"violations.{k} = {self.bound_violations.get(k)}")
        return "\n".join(lines)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v)}")


def build_report(trace: Trajectory, consts: CertifiedConstants, params: ProtocolParams,
                 label: str = "", tail_fraction: float = 0.5,
                 ne_threshold: float = CONVERGENCE_THRESHOLD,
                 transit_threshold: float = CONVERGENCE_THRESHOLD) -> RunReport:
    osc = oscillation_metrics(trace, tail_fraction)
    v = verify_certificates(trace, trace.update_log, consts, params)
    fin_ne = float(trace.ne_dist[-1])
    fin_tr = float(trace.transit_mass[-1])
    return RunReport(
        final_ne_dist=fin_ne,
        final_transit_mass=fin_tr,
        osc_amplitude=osc.amplitude,
        mean_transit_mass_tail=osc.mean_transit,
        bound_violations={"dx": v.dx, "dy": v.dy, "envelope": v.envelope,
                          "passivity": v.passivity},
        update_count=len(trace.update_log),
        converged=bool(fin_ne <= ne_threshold and fin_tr <= transit_threshold),
        label=label,
        final_lambda=float(trace.lam[-1]),
        horizon=float(trace.t[-1]),
        extra={"clip_total": trace.clip_total, "mass_error": trace.mass_error()},
    )


COMPARE_COLUMNS = ("label", "final_ne_dist", "final_transit_mass", "osc_amplitude",
                   "mean_transit_mass_tail", "update_count", "final_lambda", "converged")


def compare_runs(reports: Sequence[RunReport]) -> list[RunReport]:
    """Reports ordered by final NE distance; ties keep their input order."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    return sorted(reports, key=lambda r: r.final_ne_dist)


def format_table(reports: Sequence[RunReport]) -> str:
    rows = [COMPARE_COLUMNS]
    for r in reports:
        rows.append(tuple(_cell(getattr(r, c)) for c in COMPARE_COLUMNS))
    widths = [max(len(row[i]) for row in rows) for i in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def storage_trace(trace: Trajectory) -> np.ndarray:
    """Recomputed unit-rate storage along the trace (cross-check of ``trace.s_bar``)."""
    return storage_many(trace.x, trace.payoff, trace.rho)
