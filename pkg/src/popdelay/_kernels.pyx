# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration core.

Drop-in replacement for :class:`popdelay._kernels_py.SimCore`. The step loop,
the delayed-flux lookups and the tuner check all run in C; only rare events
(tuner updates) touch Python objects.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

from .history import split_lags
from .tuner import (TunerConfig, UpdateRecord, TunerError,
                    SPACING_SLACK, DOT_TOL)

cnp.import_array()

cdef enum:
    EULER = 0
    HEUN = 1


cdef class SimCore:
    cdef readonly int n
    cdef readonly double rho, h
    cdef readonly long k
    cdef readonly double clip_total
    cdef readonly int status, scheme
    cdef readonly object updates, consts, config, delays
    cdef double lam_, t_k_
    cdef long n_upd

    cdef double[:, ::1] A
    cdef cnp.int64_t[:, ::1] q
    cdef double[:, ::1] theta
    cdef long cap, newest
    cdef double[:, ::1] hx, hp
    cdef double[::1] hl
    cdef double[::1] x_
    cdef double[:, ::1] y_
    cdef double[::1] p, fx, gx, xp, pp, xn, vtmp, gtmp
    cdef double[:, ::1] fy, gy, yn

    cdef bint tune
    cdef double delta, M, B, d_max, f_tol, lam_floor, slack, dot_tol

    backend = "cython"

    def __init__(self, A, rho, delays, h, x0, lam0, consts=None, tuner_config=None, scheme=EULER):
        A = np.ascontiguousarray(A, dtype=np.float64)
        self.n = A.shape[0]
        n = self.n
        self.A = A.copy()
        self.rho = float(rho)
        self.h = float(h)
        self.delays = np.array(delays, dtype=np.float64)
        q, theta = split_lags(self.delays, self.h)
        self.q = np.ascontiguousarray(q, dtype=np.int64)
        self.theta = np.ascontiguousarray(theta, dtype=np.float64)
        self.scheme = int(scheme)
        self.cap = int(q.max(initial=0)) + 3
        if np.any(theta > 0):
            self.cap += 1
        self.newest = -1
        self.hx = np.zeros((self.cap, n))
        self.hp = np.zeros((self.cap, n))
        self.hl = np.zeros(self.cap)
        self.x_ = np.array(x0, dtype=np.float64)
        self.y_ = np.zeros((n, n))
        self.p = np.zeros(n)
        self.fx = np.zeros(n)
        self.gx = np.zeros(n)
        self.xp = np.zeros(n)
        self.pp = np.zeros(n)
        self.xn = np.zeros(n)
        self.vtmp = np.zeros(n)
        self.gtmp = np.zeros(n)
        self.fy = np.zeros((n, n))
        self.gy = np.zeros((n, n))
        self.yn = np.zeros((n, n))
        self.k = 0
        self.clip_total = 0.0
        self.status = 0
        self.lam_ = float(lam0)
        self.t_k_ = 0.0
        self.n_upd = 0
        self.updates = []
        self.consts = consts
        self.config = tuner_config if tuner_config is not None else TunerConfig(lambda0=lam0, enabled=False)
        self.tune = bool(self.config.enabled)
        self.slack = SPACING_SLACK
        self.dot_tol = DOT_TOL
        if self.tune:
            if consts is None:
                raise ValueError("tuning requires certified constants")
            self.delta = self.config.delta
            self.f_tol = self.config.f_tol
            self.lam_floor = self.config.lambda_floor
            self.M = consts.M
            self.B = consts.B_DF
            self.d_max = consts.d_max

    @property
    def x(self):
        return np.asarray(self.x_).copy()

    @property
    def y(self):
        return np.asarray(self.y_).copy()

    @property
    def lam(self):
        return self.lam_

    @property
    def t_k(self):
        return self.t_k_

    def snapshot(self):
        return self.k, self.x, self.y, self.lam_

    cdef inline void _matvec(self, double[::1] x, double[::1] out):
        cdef int i, j
        cdef double s
        for i in range(self.n):
            s = 0.0
            for j in range(self.n):
                s += self.A[i, j] * x[j]
            out[i] = s

    cdef inline void _push(self, long k, double[::1] x, double[::1] p, double lam):
        cdef long s = k % self.cap
        cdef int i
        for i in range(self.n):
            self.hx[s, i] = x[i]
            self.hp[s, i] = p[i]
        self.hl[s] = lam
        self.newest = k

    cdef inline double _flux(self, long m, int j, int i):
        cdef long s = m % self.cap
        cdef double gap = self.hp[s, i] - self.hp[s, j]
        if gap <= 0.0:
            return 0.0
        return self.hl[s] * self.hx[s, j] * self.rho * gap

    cdef inline double _completion(self, long k, int j, int i, bint left):
        cdef long hi = k - self.q[j, i]
        cdef double th = self.theta[j, i]
        cdef long lo = hi - (1 if th > 0.0 else 0)
        if lo < 0 or (left and hi == 0 and th == 0.0):
            return 0.0
        return (1.0 - th) * self._flux(hi, j, i) + th * self._flux(lo, j, i)

    cdef void _field(self, long k, double[::1] x, double[::1] p, double lam,
                     double[::1] fx, double[:, ::1] fy, bint left):
        cdef int i, j
        cdef int n = self.n
        cdef double gap, s, c
        for i in range(n):
            fx[i] = 0.0
        for j in range(n):
            for i in range(n):
                gap = p[i] - p[j]
                s = lam * x[j] * (self.rho * gap) if gap > 0.0 else 0.0
                c = self._completion(k, j, i, left)
                fy[j, i] = s - c
                fx[i] += c
                fx[j] -= s

    cdef void _maybe_update(self, double t, double[::1] x, double[::1] p) except *:
        cdef int i, j, n = self.n
        cdef double gap, out_rate, vn = 0.0, gn = 0.0, dot = 0.0, f, prop
        cdef bint floored = False
        if t < self.t_k_ + 2.0 * self.d_max - self.slack * self.h:
            return
        for i in range(n):
            self.vtmp[i] = 0.0
            self.gtmp[i] = 0.0
        for i in range(n):
            out_rate = 0.0
            for j in range(n):
                gap = p[j] - p[i]
                if gap > 0.0:
                    out_rate += self.rho * gap
                    self.gtmp[i] += gap * gap
                    self.vtmp[j] += x[i] * (self.rho * gap)
            self.vtmp[i] -= x[i] * out_rate
        for i in range(n):
            self.gtmp[i] *= 0.5 * self.rho
        for i in range(n):
            vn += self.vtmp[i] * self.vtmp[i]
            gn += self.gtmp[i] * self.gtmp[i]
            dot += self.gtmp[i] * self.vtmp[i]
        f = self.M * (self.B * sqrt(vn) + sqrt(gn))
        if not (f > self.f_tol and dot + self.lam_ * f / (1.0 - self.delta) >= 0.0):
            return
        if dot > self.dot_tol:
            raise TunerError(f"storage increases along the field (dot={dot!r})")
        prop = -dot / (2.0 * f)
        if prop < 0.0:
            prop = 0.0
        if prop < self.lam_floor:
            if self.lam_ <= self.lam_floor:
                return
            prop = self.lam_floor
            floored = True
        self.n_upd += 1
        self.lam_ = prop
        self.t_k_ = t
        self.updates.append(UpdateRecord(self.n_upd, t, prop, dot, f, floored))

    def advance(self, long n_steps, long stride=1):
        cdef int n = self.n
        cdef int i, j
        cdef long step, k, r = 0, done = 0
        cdef long k0 = self.k
        cdef long first = ((k0 + stride - 1) // stride) * stride
        cdef long count = 0
        cdef double t, lam, h = self.h, sx, sy, v, colsum
        cdef bint bad
        if first < k0 + n_steps:
            count = (k0 + n_steps - 1 - first) // stride + 1
        rk = np.empty(count, dtype=np.int64)
        rx = np.empty((count, n))
        ry = np.empty((count, n, n))
        rl = np.empty(count)
        dxn = np.empty(n_steps)
        dyn = np.empty(n_steps)
        lams = np.empty(n_steps)
        cdef cnp.int64_t[::1] rk_v = rk
        cdef double[:, ::1] rx_v = rx
        cdef double[:, :, ::1] ry_v = ry
        cdef double[::1] rl_v = rl, dxn_v = dxn, dyn_v = dyn, lam_v = lams

        for step in range(n_steps):
            k = self.k
            t = k * h
            self._matvec(self.x_, self.p)
            if self.tune:
                self._maybe_update(t, self.x_, self.p)
            lam = self.lam_
            if k % stride == 0:
                rk_v[r] = k
                for i in range(n):
                    rx_v[r, i] = self.x_[i]
                    for j in range(n):
                        ry_v[r, i, j] = self.y_[i, j]
                rl_v[r] = lam
                r += 1
            self._push(k, self.x_, self.p, lam)
            self._field(k, self.x_, self.p, lam, self.fx, self.fy, False)
            if self.scheme == HEUN:
                for i in range(n):
                    self.xp[i] = self.x_[i] + h * self.fx[i]
                self._matvec(self.xp, self.pp)
                self._push(k + 1, self.xp, self.pp, lam)
                self._field(k + 1, self.xp, self.pp, lam, self.gx, self.gy, True)
                for i in range(n):
                    self.fx[i] = 0.5 * (self.fx[i] + self.gx[i])
                    for j in range(n):
                        self.fy[i, j] = 0.5 * (self.fy[i, j] + self.gy[i, j])
            bad = False
            for i in range(n):
                self.xn[i] = self.x_[i] + h * self.fx[i]
                if not isfinite(self.xn[i]):
                    bad = True
                for j in range(n):
                    self.yn[i, j] = self.y_[i, j] + h * self.fy[i, j]
                    if not isfinite(self.yn[i, j]):
                        bad = True
            if bad:
                self.status = 1
                break
            sx = 0.0
            sy = 0.0
            for i in range(n):
                v = self.xn[i]
                if v < 0.0:
                    self.clip_total -= v
                    v = 0.0
                self.x_[i] = v
                sx += self.fx[i] * self.fx[i]
                colsum = 0.0
                for j in range(n):
                    v = self.yn[i, j]
                    if v < 0.0:
                        self.clip_total -= v
                        v = 0.0
                    self.y_[i, j] = v
                    colsum += self.fy[j, i]
                sy += colsum * colsum
            dxn_v[done] = sqrt(sx)
            dyn_v[done] = sqrt(sy)
            lam_v[done] = lam
            self.k = k + 1
            done += 1

        return {
            "k": rk[:r],
            "x": rx[:r],
            "y": ry[:r],
            "lam": rl[:r],
            "dx_norm": dxn[:done],
            "dy_norm": dyn[:done],
            "step_lam": lams[:done],
            "status": self.status,
        }
