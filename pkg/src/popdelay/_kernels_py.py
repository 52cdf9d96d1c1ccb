"""Pure-Python integration core.

Same interface and arithmetic as the compiled ``_kernels`` extension; used
when the extension is unavailable or ``POPDELAY_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np

from .history import HistoryBuffer, split_lags
from .revision import ProtocolParams
from .tuner import TunerConfig, TunerState, maybe_update

EULER, HEUN = 0, 1


class SimCore:
    """Fixed-step integrator for in-game shares ``x`` and transit masses ``y``.

    ``y[j, i]`` is the mass travelling from strategy j to i and ``delays[j, i]``
    its travel time. The tuner, when configured, is checked at the start of
    every step.
    """

    backend = "python"

    def __init__(self, A, rho, delays, h, x0, lam0, consts=None, tuner_config=None, scheme=EULER):
        self.A = np.array(A, dtype=float)
        self.n = self.A.shape[0]
        self.rho = float(rho)
        self.h = float(h)
        self.delays = np.array(delays, dtype=float)
        self.q, self.theta = split_lags(self.delays, self.h)
        self.scheme = int(scheme)
        self.hist = HistoryBuffer.for_delays(self.n, self.h, self.delays)
        self.k = 0
        self.x = np.array(x0, dtype=float)
        self.y = np.zeros((self.n, self.n))
        self.clip_total = 0.0
        self.status = 0
        self.consts = consts
        self.config = tuner_config if tuner_config is not None else TunerConfig(lambda0=lam0, enabled=False)
        self.tuner = TunerState(lambda_k=float(lam0))
        self._params = ProtocolParams(self.rho, self.n)
        if self.config.enabled and consts is None:
            raise ValueError("tuning requires certified constants")

    @property
    def lam(self) -> float:
        return self.tuner.lambda_k

    @property
    def t_k(self) -> float:
        return self.tuner.t_k

    @property
    def updates(self):
        return self.tuner.update_log

    def snapshot(self):
        return self.k, self.x.copy(), self.y.copy(), self.lam

    def _field(self, k, x, p, lam, left=False):
        R = self.rho * np.maximum(p[None, :] - p[:, None], 0.0)
        S = lam * x[:, None] * R
        C = self.hist.completions(k, self.q, self.theta, self.rho, left)
        return C.sum(axis=0) - S.sum(axis=1), S - C

    def advance(self, n_steps: int, stride: int = 1) -> dict:
        # overflow is detected through the status flag, not warnings
        with np.errstate(over="ignore", invalid="ignore"):
            return self._advance(n_steps, stride)

    def _advance(self, n_steps: int, stride: int) -> dict:
        n = self.n
        rec_k, rec_x, rec_y, rec_lam = [], [], [], []
        dxn = np.empty(n_steps)
        dyn = np.empty(n_steps)
        lam_s = np.empty(n_steps)
        done = 0
        for _ in range(n_steps):
            k = self.k
            t = k * self.h
            x = self.x
            p = self.A @ x
            if self.config.enabled:
                maybe_update(t, x, p, self.tuner, self.consts, self._params, self.config, self.h)
            lam = self.lam
            if k % stride == 0:
                rec_k.append(k)
                rec_x.append(x.copy())
                rec_y.append(self.y.copy())
                rec_lam.append(lam)
            self.hist.push(k, x, p, lam)
            fx, fy = self._field(k, x, p, lam)
            if self.scheme == HEUN:
                xp = x + self.h * fx
                pp = self.A @ xp
                self.hist.push(k + 1, xp, pp, lam)
                # end-of-step stage: left limit of the delayed inflow
                gx, gy = self._field(k + 1, xp, pp, lam, left=True)
                fx = 0.5 * (fx + gx)
                fy = 0.5 * (fy + gy)
            x_new = x + self.h * fx
            y_new = self.y + self.h * fy
            if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
                self.status = 1
                break
            neg = x_new < 0
            if neg.any():
                self.clip_total -= x_new[neg].sum()
                x_new[neg] = 0.0
            neg = y_new < 0
            if neg.any():
                self.clip_total -= y_new[neg].sum()
                y_new[neg] = 0.0
            dxn[done] = np.sqrt(fx @ fx)
            ycol = fy.sum(axis=0)
            dyn[done] = np.sqrt(ycol @ ycol)
            lam_s[done] = lam
            self.x = x_new
            self.y = y_new
            self.k = k + 1
            done += 1
        return {
            "k": np.array(rec_k, dtype=np.int64),
            "x": np.array(rec_x).reshape(-1, n),
            "y": np.array(rec_y).reshape(-1, n, n),
            "lam": np.array(rec_lam, dtype=float),
            "dx_norm": dxn[:done],
            "dy_norm": dyn[:done],
            "step_lam": lam_s[:done],
            "status": self.status,
        }
