"""Ring buffer of past grid samples ``(x, p, lambda)`` for the delayed terms."""

from __future__ import annotations

import math

import numpy as np

# lags within this many steps of an integer are snapped to it
LAG_SNAP = 1e-9


class HistoryUnderrun(IndexError):
    pass


def split_lags(delays: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Split ``delays / h`` into integer steps and a fractional remainder in [0, 1)."""
    lag = np.asarray(delays, dtype=float) / h
    q = np.floor(lag + LAG_SNAP)
    theta = lag - q
    theta[theta < LAG_SNAP] = 0.0
    return q.astype(np.int64), theta


class HistoryBuffer:
    """Equally spaced samples at times ``k * h`` kept for ``capacity`` steps.

    Off-grid queries interpolate linearly between the bracketing samples.
    The newest slot may be overwritten, which is how two-stage schemes park
    a provisional sample.
    """

    def __init__(self, n: int, h: float, capacity: int):
        if h <= 0:
            raise ValueError("step must be positive")
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.n = n
        self.h = h
        self.capacity = capacity
        self.x = np.zeros((capacity, n))
        self.p = np.zeros((capacity, n))
        self.lam = np.zeros(capacity)
        self.newest = -1

    @classmethod
    def for_delays(cls, n: int, h: float, delays: np.ndarray, stages: int = 2) -> "HistoryBuffer":
        d_max = float(np.max(delays, initial=0.0))
        return cls(n, h, int(math.ceil(d_max / h - LAG_SNAP)) + stages + 1)

    def push(self, k: int, x, p, lam: float) -> None:
        if k != self.newest + 1 and k != self.newest:
            raise ValueError(f"history must advance one step at a time (newest={self.newest}, got {k})")
        s = k % self.capacity
        self.x[s] = x
        self.p[s] = p
        self.lam[s] = lam
        self.newest = k

    @property
    def oldest(self) -> int:
        return max(0, self.newest - self.capacity + 1)

    def _slot(self, k: int) -> int:
        if k > self.newest or k < self.oldest:
            raise HistoryUnderrun(f"sample {k} not held (window {self.oldest}..{self.newest})")
        return k % self.capacity

    def sample(self, k: int):
        s = self._slot(k)
        return self.x[s].copy(), self.p[s].copy(), float(self.lam[s])

    def lookup(self, t: float):
        """Interpolated ``(x, p, lambda)`` at time ``t``."""
        u = t / self.h
        k = math.floor(u + LAG_SNAP)
        w = u - k
        if w < LAG_SNAP:
            return self.sample(k)
        x0, p0, l0 = self.sample(k)
        x1, p1, l1 = self.sample(k + 1)
        return (1 - w) * x0 + w * x1, (1 - w) * p0 + w * p1, (1 - w) * l0 + w * l1

    def flux_at(self, idx: np.ndarray, rho: float) -> np.ndarray:
        """Start flux ``lam x_j rho [p_i - p_j]_+`` for each pair at grid index ``idx[j, i]``."""
        n = self.n
        if np.any(idx > self.newest) or np.any(idx < self.oldest):
            raise HistoryUnderrun("delayed lookup outside stored window")
        s = idx % self.capacity
        j = np.arange(n)[:, None]
        i = np.arange(n)[None, :]
        xj = self.x[s, j]
        gap = self.p[s, i] - self.p[s, j]
        return self.lam[s] * xj * rho * np.maximum(gap, 0.0)

    def completions(self, k: int, q: np.ndarray, theta: np.ndarray, rho: float,
                    left: bool = False) -> np.ndarray:
        """Flux finishing transit at step ``k``: the start flux ``d_ji`` earlier.

        The flux is interpolated between grid samples, and is zero when the
        departure time would precede ``t = 0``. With ``left`` the value is the
        left limit in time, which differs only when the departure time is
        exactly zero (the flux switches on there).
        """
        hi = k - q
        lo = hi - (theta > 0)
        live = lo >= 0
        if left:
            live &= ~((theta == 0) & (hi == 0))
        hi_c = np.where(live, hi, self.newest)
        lo_c = np.where(live, lo, self.newest)
        f_hi = self.flux_at(hi_c, rho)
        f_lo = self.flux_at(lo_c, rho)
        out = (1.0 - theta) * f_hi + theta * f_lo
        out[~live] = 0.0
        return out
