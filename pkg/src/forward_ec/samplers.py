"""Trajectory drivers for Forward event-chain samplers, BPS and Zig-Zag.

The compiled drivers advance the state segment by segment.  Samples at
times ``delta, 2 delta, ...`` are produced on the fly, so long runs do
not have to keep the segment history; segments and the event log are
only stored when ``record=True``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .events import (
    gaussian_factors_first_arrival_nb,
    linear_rate_time_nb,
    logistic_first_arrival_nb,
    mixture_event_nb,
    mixture_line_terms_nb,
    quadratic_time_nb,
)
from .geometry import sample_direction_nb
from .kernels import (
    K_MODE,
    KernelSpec,
    OrthogonalKernel,
    ParallelKernel,
    assemble_direction_nb,
)
from .model import (
    FAM_GAUSSIAN,
    FAM_GAUSSIAN_FACTORS,
    FAM_LOGISTIC,
    FAM_MIXTURE,
    TargetModel,
)

INF = math.inf

R_NONE, R_POISSON, R_FULL, R_FLAG = 0, 1, 2, 3
EV_GRADIENT, EV_REFRESH, EV_FLAG_RESET, EV_END = 0, 1, 2, 3
EVENT_KINDS = ("gradient-event", "refresh", "flag-reset", "end")

ST_OK, ST_NONFINITE, ST_STUCK = 0, 1, 2
_STATUS_TEXT = {
    ST_NONFINITE: "non-finite position or direction",
    ST_STUCK: "no event and no refresh can ever occur with an infinite horizon",
}

# sample times k*delta within this relative slack of the current time count as reached
_TIME_SLACK = 1e-12


class SamplerError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# refresh strategies


@dataclass(frozen=True)
class RefreshStrategy:
    """How and when the direction is refreshed.

    ``poisson`` uses a constant extra rate, ``fixed-time-full`` redraws
    the whole direction every ``period`` units of time without a
    gradient-free interruption, and ``fixed-time-flag`` re-enables the
    orthogonal kernel once every ``period``.
    """

    variant: str = "none"
    rate: float = 0.0
    period: float = INF

    def __post_init__(self):
        if self.variant not in ("none", "poisson", "fixed-time-full", "fixed-time-flag"):
            raise ValueError(f"unknown refresh strategy {self.variant!r}")
        if not self.rate >= 0:
            raise ValueError("refresh rate must be non-negative")
        if self.variant.startswith("fixed") and not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError("refresh period must be positive and finite")

    @classmethod
    def none(cls) -> "RefreshStrategy":
        return cls("none")

    @classmethod
    def poisson(cls, rate: float) -> "RefreshStrategy":
        return cls("poisson", rate=float(rate))

    @classmethod
    def fixed_full(cls, period: float) -> "RefreshStrategy":
        return cls("fixed-time-full", period=float(period))

    @classmethod
    def fixed_flag(cls, period: float) -> "RefreshStrategy":
        return cls("fixed-time-flag", period=float(period))

    @property
    def code(self) -> int:
        return {"none": R_NONE, "poisson": R_POISSON, "fixed-time-full": R_FULL, "fixed-time-flag": R_FLAG}[self.variant]

    @property
    def param(self) -> float:
        return self.rate if self.variant == "poisson" else self.period

    def describe(self) -> str:
        if self.variant == "none":
            return "none"
        if self.variant == "poisson":
            return f"poisson({self.rate:g})"
        return f"{self.variant}({self.period:g})"


# --------------------------------------------------------------------------
# trajectory containers


@dataclass
class SampleSeries:
    """Positions at times delta, 2 delta, ..., n delta."""

    delta: float
    positions: np.ndarray
    n_events: int

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(1, self.n + 1)

    @property
    def empty(self) -> bool:
        return self.n == 0

    @property
    def n_delta(self) -> float:
        """Average number of events per sample."""
        return self.n_events / self.n if self.n else math.nan


@dataclass
class Segments:
    start: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    duration: np.ndarray
    end_kind: np.ndarray
    factor: np.ndarray

    def __len__(self) -> int:
        return self.start.shape[0]


@dataclass
class EventLog:
    time: np.ndarray
    kind: np.ndarray
    factor: np.ndarray
    kernel: np.ndarray  # 0 = Q0, 1 = Q1 (flag strategy), -1 otherwise
    exponential: np.ndarray

    def __len__(self) -> int:
        return self.time.shape[0]


@dataclass
class Trajectory:
    dim: int
    total_time: float
    n_gradient: int
    n_refresh: int
    final_position: np.ndarray
    final_direction: np.ndarray
    segments: Segments | None = None
    events: EventLog | None = None
    samples: SampleSeries | None = None
    n_flag_resets: int = 0
    n_candidates: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        """Gradient events plus refreshes; flag resets do not count."""
        return self.n_gradient + self.n_refresh


# --------------------------------------------------------------------------
# growable buffers for the compiled drivers


@njit(cache=True)
def _grow2(buf, need):
    if need <= buf.shape[0]:
        return buf
    cap = max(2 * buf.shape[0], need, 16)
    out = np.empty((cap, buf.shape[1]))
    out[: buf.shape[0]] = buf
    return out


@njit(cache=True)
def _grow1(buf, need):
    if need <= buf.shape[0]:
        return buf
    cap = max(2 * buf.shape[0], need, 16)
    out = np.empty(cap)
    out[: buf.shape[0]] = buf
    return out


@njit(cache=True)
def _emit_samples(samples, n_samp, x, y, t, dt, delta):
    """Append positions at the grid times in (t, t + dt]."""
    if delta <= 0.0:
        return samples, n_samp
    t_new = t + dt
    k = n_samp + 1
    limit = t_new + _TIME_SLACK * max(1.0, t_new)
    if k * delta > limit:
        return samples, n_samp
    last = int(math.floor(limit / delta))
    while last * delta > limit:
        last -= 1
    samples = _grow2(samples, last)
    for j in range(k, last + 1):
        s = min(max(j * delta - t, 0.0), dt)
        for i in range(x.shape[0]):
            samples[j - 1, i] = x[i] + s * y[i]
    return samples, last


# --------------------------------------------------------------------------
# target-specific pieces


@njit(cache=True)
def _sigmoid(a):
    if a >= 0.0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


@njit(cache=True)
def _mixture_gradient(means, inv_var, log_coef, x):
    n_comp, d = means.shape
    en = np.empty(n_comp)
    emin = INF
    for j in range(n_comp):
        s = 0.0
        for i in range(d):
            diff = x[i] - means[j, i]
            s += diff * diff * inv_var[j, i]
        en[j] = 0.5 * s - log_coef[j]
        emin = min(emin, en[j])
    g = np.zeros(d)
    wsum = 0.0
    for j in range(n_comp):
        w = math.exp(-(en[j] - emin))
        wsum += w
        for i in range(d):
            g[i] += w * (x[i] - means[j, i]) * inv_var[j, i]
    return g / wsum


@njit(cache=True)
def _logistic_global_event(X, labels, zeta2, x, y, a, b, rng):
    """Thinning of the full logistic rate using the superposed factor clocks as envelope."""
    yy = np.dot(y, y)
    xy = np.dot(x, y)
    u0 = 0.5 * yy / zeta2
    s = 0.0
    n_prop = 0
    n = a.shape[0]
    a_s = np.empty(n)
    while True:
        for i in range(n):
            a_s[i] = a[i] + s * b[i]
        t0 = (xy + s * yy) / yy if yy > 0.0 else 0.0
        tau, idx, _ = logistic_first_arrival_nb(a_s, b, labels, u0, t0, rng)
        if tau == INF:
            return INF, n_prop
        s += tau
        n_prop += 1
        prior_rate = (xy + s * yy) / zeta2
        lam = prior_rate
        env = max(0.0, prior_rate)
        for i in range(n):
            r = b[i] * (_sigmoid(a[i] + s * b[i]) - labels[i])
            lam += r
            if r > 0.0:
                env += r
        if env > 0.0 and rng.random() * env < max(0.0, lam):
            return s, n_prop


@njit(cache=True)
def _gradient_time(fam, factorized, A, B, vec, sc, x, y, a, b, rng):
    """Return (elapsed time, factor index, exponential, proposals) for the next gradient event."""
    if fam == FAM_GAUSSIAN or (fam == FAM_GAUSSIAN_FACTORS and not factorized):
        u0 = 0.0
        c = 0.0
        for i in range(x.shape[0]):
            u0 += vec[i] * y[i] * y[i]
            c += vec[i] * y[i] * x[i]
        u0 *= 0.5
        if u0 <= 0.0:
            return INF, -1, math.nan, 0
        e = rng.standard_exponential()
        return quadratic_time_nb(u0, c / (2.0 * u0), e), -1, e, 1
    if fam == FAM_GAUSSIAN_FACTORS:
        t, idx, e = gaussian_factors_first_arrival_nb(A, x, y, rng)
        return t, idx, e, 1
    if fam == FAM_MIXTURE:
        t, n_prop = mixture_event_nb(A, B, vec, x, y, rng)
        return t, -1, math.nan, n_prop
    # logistic
    if factorized:
        yy = np.dot(y, y)
        u0 = 0.5 * yy / sc
        t0 = np.dot(x, y) / yy if yy > 0.0 else 0.0
        t, idx, e = logistic_first_arrival_nb(a, b, vec, u0, t0, rng)
        return t, idx, e, 1
    t, n_prop = _logistic_global_event(A, vec, sc, x, y, a, b, rng)
    return t, -1, math.nan, n_prop


@njit(cache=True)
def _event_gradient(fam, factorized, factor, A, B, vec, sc, x, a):
    if fam == FAM_GAUSSIAN:
        return vec * x
    if fam == FAM_GAUSSIAN_FACTORS:
        if factorized:
            return A[factor] * x
        return vec * x
    if fam == FAM_MIXTURE:
        return _mixture_gradient(A, B, vec, x)
    if factorized:
        if factor == 0:
            return x / sc
        i = factor - 1
        return A[i] * (_sigmoid(a[i]) - vec[i])
    g = x / sc
    for i in range(A.shape[0]):
        w = _sigmoid(a[i]) - vec[i]
        for k in range(x.shape[0]):
            g[k] += w * A[i, k]
    return g


# --------------------------------------------------------------------------
# Forward EC / BPS driver


@njit(cache=True)
def _drive_pdmp(fam, factorized, A, B, vec, sc, kv0, kv1, rkind, rparam,
                x0, y0, horizon, max_events, delta, record, rng):
    d = x0.shape[0]
    mode = int(kv0[K_MODE])
    x = x0.copy()
    y = y0.copy()
    t = 0.0
    is_logistic = fam == FAM_LOGISTIC
    if is_logistic:
        a = A @ x
        b = A @ y
    else:
        a = np.zeros(0)
        b = np.zeros(0)

    # refresh state
    r_clock = INF
    next_reset = INF
    flag = 0
    if rkind == R_POISSON and rparam > 0.0:
        r_clock = rng.standard_exponential() / rparam
    elif rkind == R_FULL:
        r_clock = rparam
    elif rkind == R_FLAG:
        next_reset = rparam

    samples = np.empty((16, d))
    n_samp = 0
    cap = 16 if record else 0
    seg_s = np.empty(cap)
    seg_x = np.empty((cap, d))
    seg_y = np.empty((cap, d))
    seg_dt = np.empty(cap)
    seg_kind = np.empty(cap)
    seg_fac = np.empty(cap)
    n_seg = 0
    ev_t = np.empty(cap)
    ev_kind = np.empty(cap)
    ev_fac = np.empty(cap)
    ev_ker = np.empty(cap)
    ev_e = np.empty(cap)
    n_ev = 0

    n_grad = 0
    n_ref = 0
    n_resets = 0
    n_prop = 0
    status = ST_OK

    while n_grad + n_ref < max_events:
        remaining = horizon - t
        if remaining <= 0.0:
            break
        tau_g, fac, e_used, props = _gradient_time(fam, factorized, A, B, vec, sc, x, y, a, b, rng)
        n_prop += props
        tau_r = r_clock
        if rkind == R_FLAG:
            tau_r = next_reset - t
        kind = EV_END
        dt = remaining
        if tau_g < dt:
            dt = tau_g
            kind = EV_GRADIENT
        if tau_r < dt:
            dt = tau_r
            kind = EV_FLAG_RESET if rkind == R_FLAG else EV_REFRESH
        if dt == INF:
            status = ST_STUCK
            break

        samples, n_samp = _emit_samples(samples, n_samp, x, y, t, dt, delta)
        if record:
            need = n_seg + 1
            seg_s = _grow1(seg_s, need)
            seg_x = _grow2(seg_x, need)
            seg_y = _grow2(seg_y, need)
            seg_dt = _grow1(seg_dt, need)
            seg_kind = _grow1(seg_kind, need)
            seg_fac = _grow1(seg_fac, need)
            seg_s[n_seg] = t
            seg_x[n_seg] = x
            seg_y[n_seg] = y
            seg_dt[n_seg] = dt
            seg_kind[n_seg] = kind
            seg_fac[n_seg] = fac if kind == EV_GRADIENT else -1
            n_seg += 1

        for i in range(d):
            x[i] += dt * y[i]
        if is_logistic:
            for i in range(a.shape[0]):
                a[i] += dt * b[i]
        t = t + dt if kind != EV_END else horizon
        if rkind == R_POISSON or rkind == R_FULL:
            r_clock -= dt
        if kind == EV_END:
            break

        ker = -1
        changed = False
        if kind == EV_GRADIENT:
            g = _event_gradient(fam, factorized, fac, A, B, vec, sc, x, a)
            if rkind == R_FLAG and flag == 1:
                y = assemble_direction_nb(kv1, g, y, rng)
                ker = 1
            else:
                y = assemble_direction_nb(kv0, g, y, rng)
                ker = 0 if rkind == R_FLAG else -1
                flag = 1
            n_grad += 1
            changed = True
        elif kind == EV_REFRESH:
            y = sample_direction_nb(mode, d, rng)
            if rkind == R_POISSON:
                r_clock = rng.standard_exponential() / rparam
            else:
                r_clock = rparam
            n_ref += 1
            changed = True
        else:
            flag = 0
            next_reset += rparam
            n_resets += 1

        if record:
            need = n_ev + 1
            ev_t = _grow1(ev_t, need)
            ev_kind = _grow1(ev_kind, need)
            ev_fac = _grow1(ev_fac, need)
            ev_ker = _grow1(ev_ker, need)
            ev_e = _grow1(ev_e, need)
            ev_t[n_ev] = t
            ev_kind[n_ev] = kind
            ev_fac[n_ev] = fac if kind == EV_GRADIENT else -1
            ev_ker[n_ev] = ker
            ev_e[n_ev] = e_used if kind == EV_GRADIENT else math.nan
            n_ev += 1

        if changed and is_logistic:
            b = A @ y
        ok = True
        for i in range(d):
            if not (math.isfinite(x[i]) and math.isfinite(y[i])):
                ok = False
        if not ok:
            status = ST_NONFINITE
            break

    counts = np.array([n_grad, n_ref, n_resets, n_prop, status, n_samp, n_seg, n_ev], dtype=np.int64)
    return (counts, t, x, y, samples[:n_samp].copy(),
            seg_s[:n_seg].copy(), seg_x[:n_seg].copy(), seg_y[:n_seg].copy(), seg_dt[:n_seg].copy(),
            seg_kind[:n_seg].copy(), seg_fac[:n_seg].copy(),
            ev_t[:n_ev].copy(), ev_kind[:n_ev].copy(), ev_fac[:n_ev].copy(), ev_ker[:n_ev].copy(),
            ev_e[:n_ev].copy())


# --------------------------------------------------------------------------
# Zig-Zag driver


@njit(cache=True)
def _zz_gaussian_time(w, c, theta, rng):
    best = INF
    k_best = -1
    e_best = math.nan
    for k in range(theta.shape[0]):
        e = rng.standard_exponential()
        t = linear_rate_time_nb(theta[k] * w[k], theta[k] * c[k], e)
        if t < best:
            best = t
            k_best = k
            e_best = e
    return best, k_best, e_best


@njit(cache=True)
def _zz_mixture_time(means, inv_var, log_coef, basis, x, v, theta, rng):
    """Thinning over the (coordinate, component) linear envelopes."""
    n_comp, d = means.shape
    e0, alpha, beta = mixture_line_terms_nb(means, inv_var, log_coef, x, v)
    # p[j, k] + t q[j, k] is <b_k, Lambda_j (x + t v - mu_j)>
    p = np.empty((n_comp, d))
    q = np.empty((n_comp, d))
    for j in range(n_comp):
        gj = (x - means[j]) * inv_var[j]
        hj = v * inv_var[j]
        p[j] = basis.T @ gj
        q[j] = basis.T @ hj
    s = 0.0
    n_prop = 0
    while True:
        step = INF
        k_best = -1
        for j in range(n_comp):
            for k in range(d):
                u = linear_rate_time_nb(theta[k] * (p[j, k] + s * q[j, k]), theta[k] * q[j, k],
                                        rng.standard_exponential())
                if u < step:
                    step = u
                    k_best = k
        if step == INF:
            return INF, -1, n_prop
        s += step
        n_prop += 1
        emin = INF
        en = np.empty(n_comp)
        for j in range(n_comp):
            en[j] = e0[j] + s * (alpha[j] + 0.5 * beta[j] * s)
            emin = min(emin, en[j])
        wsum = 0.0
        lam = 0.0
        env = 0.0
        for j in range(n_comp):
            w = math.exp(-(en[j] - emin))
            r = theta[k_best] * (p[j, k_best] + s * q[j, k_best])
            wsum += w
            lam += w * r
            if r > 0.0:
                env += r
        lam /= wsum
        if env > 0.0 and rng.random() * env < max(0.0, lam):
            return s, k_best, n_prop


@njit(cache=True)
def _zz_logistic_time(C, c_abs, labels, zeta2, a, bvec, u, theta, rng):
    """Thinning with the bound |sigmoid - y| <= 1 plus the exact prior term.

    ``u = B^T x`` and the prior slope along the flow is theta_k / zeta2.
    """
    d = theta.shape[0]
    n = a.shape[0]
    s = 0.0
    n_prop = 0
    while True:
        step = INF
        k_best = -1
        for k in range(d):
            if c_abs[k] > 0.0:
                t1 = rng.standard_exponential() / c_abs[k]
                if t1 < step:
                    step = t1
                    k_best = k
            t2 = linear_rate_time_nb(theta[k] * (u[k] + s * theta[k]) / zeta2, 1.0 / zeta2,
                                     rng.standard_exponential())
            if t2 < step:
                step = t2
                k_best = k
        if step == INF:
            return INF, -1, n_prop
        s += step
        n_prop += 1
        k = k_best
        prior = theta[k] * (u[k] + s * theta[k]) / zeta2
        lam = prior
        for i in range(n):
            lam += theta[k] * C[i, k] * (_sigmoid(a[i] + s * bvec[i]) - labels[i])
        env = c_abs[k] + max(0.0, prior)
        if env > 0.0 and rng.random() * env < max(0.0, lam):
            return s, k, n_prop


@njit(cache=True)
def _drive_zigzag(fam, A, B, vec, sc, basis, x0, theta0, horizon, max_events, delta, record, rng):
    d = x0.shape[0]
    x = x0.copy()
    theta = theta0.copy()
    v = basis @ theta
    t = 0.0

    # Gaussian: w = B^T P x, c = B^T P v = M theta
    gauss = fam == FAM_GAUSSIAN or fam == FAM_GAUSSIAN_FACTORS
    if gauss:
        M = basis.T @ (vec[:, None] * basis)
        w = basis.T @ (vec * x)
        c = M @ theta
    else:
        M = np.zeros((0, 0))
        w = np.zeros(0)
        c = np.zeros(0)
    if fam == FAM_LOGISTIC:
        C = A @ basis
        c_abs = np.abs(C).sum(axis=0)
        a = A @ x
        bvec = A @ v
        u = basis.T @ x
    else:
        C = np.zeros((0, 0))
        c_abs = np.zeros(0)
        a = np.zeros(0)
        bvec = np.zeros(0)
        u = np.zeros(0)

    samples = np.empty((16, d))
    n_samp = 0
    cap = 16 if record else 0
    seg_s = np.empty(cap)
    seg_x = np.empty((cap, d))
    seg_y = np.empty((cap, d))
    seg_dt = np.empty(cap)
    seg_kind = np.empty(cap)
    seg_fac = np.empty(cap)
    n_seg = 0
    ev_t = np.empty(cap)
    ev_kind = np.empty(cap)
    ev_fac = np.empty(cap)
    ev_ker = np.empty(cap)
    ev_e = np.empty(cap)
    n_ev = 0
    n_grad = 0
    n_prop = 0
    status = ST_OK

    while n_grad < max_events:
        remaining = horizon - t
        if remaining <= 0.0:
            break
        if gauss:
            tau, k, e_used = _zz_gaussian_time(w, c, theta, rng)
            n_prop += 1
        elif fam == FAM_MIXTURE:
            tau, k, props = _zz_mixture_time(A, B, vec, basis, x, v, theta, rng)
            e_used = math.nan
            n_prop += props
        else:
            tau, k, props = _zz_logistic_time(C, c_abs, vec, sc, a, bvec, u, theta, rng)
            e_used = math.nan
            n_prop += props
        kind = EV_GRADIENT
        dt = tau
        if remaining <= dt:
            dt = remaining
            kind = EV_END
        if dt == INF:
            status = ST_STUCK
            break
        samples, n_samp = _emit_samples(samples, n_samp, x, v, t, dt, delta)
        if record:
            need = n_seg + 1
            seg_s = _grow1(seg_s, need)
            seg_x = _grow2(seg_x, need)
            seg_y = _grow2(seg_y, need)
            seg_dt = _grow1(seg_dt, need)
            seg_kind = _grow1(seg_kind, need)
            seg_fac = _grow1(seg_fac, need)
            seg_s[n_seg] = t
            seg_x[n_seg] = x
            seg_y[n_seg] = v
            seg_dt[n_seg] = dt
            seg_kind[n_seg] = kind
            seg_fac[n_seg] = k if kind == EV_GRADIENT else -1
            n_seg += 1
        x += dt * v
        if gauss:
            w += dt * c
        else:
            if fam == FAM_LOGISTIC:
                a += dt * bvec
                u += dt * theta
        t = t + dt if kind != EV_END else horizon
        if kind == EV_END:
            break
        old = theta[k]
        theta[k] = -old
        v -= 2.0 * old * basis[:, k]
        if gauss:
            c -= 2.0 * old * M[:, k]
        if fam == FAM_LOGISTIC:
            bvec = A @ v
        n_grad += 1
        if record:
            need = n_ev + 1
            ev_t = _grow1(ev_t, need)
            ev_kind = _grow1(ev_kind, need)
            ev_fac = _grow1(ev_fac, need)
            ev_ker = _grow1(ev_ker, need)
            ev_e = _grow1(ev_e, need)
            ev_t[n_ev] = t
            ev_kind[n_ev] = EV_GRADIENT
            ev_fac[n_ev] = k
            ev_ker[n_ev] = -1
            ev_e[n_ev] = e_used
            n_ev += 1
        ok = True
        for i in range(d):
            if not math.isfinite(x[i]):
                ok = False
        if not ok:
            status = ST_NONFINITE
            break

    counts = np.array([n_grad, 0, 0, n_prop, status, n_samp, n_seg, n_ev], dtype=np.int64)
    return (counts, t, x, v, samples[:n_samp].copy(),
            seg_s[:n_seg].copy(), seg_x[:n_seg].copy(), seg_y[:n_seg].copy(), seg_dt[:n_seg].copy(),
            seg_kind[:n_seg].copy(), seg_fac[:n_seg].copy(),
            ev_t[:n_ev].copy(), ev_kind[:n_ev].copy(), ev_fac[:n_ev].copy(), ev_ker[:n_ev].copy(),
            ev_e[:n_ev].copy())


# --------------------------------------------------------------------------
# Python entry points


def _check_run_args(target, horizon, max_events, delta):
    if horizon is None:
        horizon = INF
    if not horizon >= 0:
        raise ValueError("horizon must be non-negative")
    if max_events is None:
        max_events = np.iinfo(np.int64).max
    if max_events < 0:
        raise ValueError("max_events must be non-negative")
    if horizon == INF and max_events == np.iinfo(np.int64).max:
        raise ValueError("need a finite horizon or a maximum event count")
    if delta is not None and not delta > 0:
        raise ValueError("delta must be positive")
    return float(horizon), int(max_events), (0.0 if delta is None else float(delta))


def _initial_position(target, x0):
    if x0 is None:
        return np.zeros(target.dim)
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape[0] != target.dim:
        raise ValueError(f"initial position has dimension {x.shape[0]}, target has {target.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial position must be finite")
    return x


def _package(out, dim, delta, record, meta) -> Trajectory:
    (counts, t, x, y, samples, s_s, s_x, s_y, s_dt, s_k, s_f, e_t, e_k, e_f, e_ker, e_e) = out
    n_grad, n_ref, n_resets, n_prop, status = (int(c) for c in counts[:5])
    if status != ST_OK:
        raise SamplerError(f"sampler aborted at t={t:.6g} after {n_grad + n_ref} events: {_STATUS_TEXT[status]}")
    traj = Trajectory(
        dim=dim, total_time=float(t), n_gradient=n_grad, n_refresh=n_ref,
        final_position=x, final_direction=y, n_flag_resets=n_resets, n_candidates=n_prop, meta=meta,
    )
    if record:
        traj.segments = Segments(s_s, s_x, s_y, s_dt, s_k.astype(np.int64), s_f.astype(np.int64))
        traj.events = EventLog(e_t, e_k.astype(np.int64), e_f.astype(np.int64), e_ker.astype(np.int64), e_e)
    if delta > 0:
        traj.samples = SampleSeries(delta, samples, traj.n_events)
    return traj


def _run_pdmp(target, spec, refresh, x0, y0, horizon, rng, max_events, delta, record, factorized):
    if not isinstance(target, TargetModel):
        raise TypeError("target must be a TargetModel")
    horizon, max_events, delta = _check_run_args(target, horizon, max_events, delta)
    d = target.dim
    spec = spec.for_dimension(d)
    kv0 = spec.as_vector(d)
    kv1 = spec.without_orthogonal().as_vector(d)
    x = _initial_position(target, x0)
    law = spec.direction_law(d)
    if y0 is None:
        y = sample_direction_nb(law.code, d, rng)
    else:
        y = np.array(y0, dtype=float).reshape(-1)
        if y.shape[0] != d or not np.all(np.isfinite(y)):
            raise ValueError("initial direction must be a finite vector of the target's dimension")
    A, B, vec, sc = target.arrays()
    out = _drive_pdmp(
        target.family, factorized, A, B, vec, float(sc), kv0, kv1, refresh.code, float(refresh.param),
        x, y, horizon, max_events, delta, bool(record), rng,
    )
    meta = {"spec": spec.describe(), "refresh": refresh.describe(), "factorized": factorized}
    return _package(out, d, delta, record, meta)


def run_forward_ec(
    target: TargetModel,
    spec: KernelSpec,
    refresh: RefreshStrategy,
    rng: np.random.Generator,
    x0=None,
    y0=None,
    horizon: float | None = None,
    max_events: int | None = None,
    delta: float | None = None,
    record: bool = True,
) -> Trajectory:
    """Simulate a Forward event-chain process with the full gradient.

    The run stops at ``horizon`` or after ``max_events`` events
    (gradient events plus refreshes), whichever comes first.  With
    ``delta`` the trajectory carries samples at times ``k * delta``.
    Plane-based orthogonal kernels fall back to the identity in d = 2.
    """
    return _run_pdmp(target, spec, refresh, x0, y0, horizon, rng, max_events, delta, record, False)


def run_factorized(
    target: TargetModel,
    spec: KernelSpec,
    refresh: RefreshStrategy,
    rng: np.random.Generator,
    x0=None,
    y0=None,
    horizon: float | None = None,
    max_events: int | None = None,
    delta: float | None = None,
    record: bool = True,
) -> Trajectory:
    """Factorized variant: one clock per factor, kernel built from the firing factor's gradient."""
    if target.family not in (FAM_LOGISTIC, FAM_GAUSSIAN_FACTORS):
        raise ValueError("target has no factorization with exact per-factor event times")
    return _run_pdmp(target, spec, refresh, x0, y0, horizon, rng, max_events, delta, record, True)


def haar_basis(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def run_zigzag(
    target: TargetModel,
    rng: np.random.Generator,
    basis: str | np.ndarray = "canonical",
    basis_seed: int | None = None,
    x0=None,
    theta0=None,
    horizon: float | None = None,
    max_events: int | None = None,
    delta: float | None = None,
    record: bool = True,
) -> Trajectory:
    """Zig-Zag process: direction ``sum_k theta_k b_k`` with one flip clock per basis vector.

    ``basis`` is ``"canonical"``, ``"random"`` (Haar orthogonal, drawn
    from ``basis_seed`` if given, otherwise from ``rng``) or an explicit
    orthogonal matrix whose columns are the basis vectors.
    """
    horizon, max_events, delta = _check_run_args(target, horizon, max_events, delta)
    d = target.dim
    if isinstance(basis, str):
        if basis == "canonical":
            mat = np.eye(d)
        elif basis in ("random", "random-orthogonal"):
            src = rng if basis_seed is None else np.random.default_rng(basis_seed)
            mat = haar_basis(d, src)
        else:
            raise ValueError(f"unknown basis {basis!r}")
    else:
        mat = np.array(basis, dtype=float)
        if mat.shape != (d, d) or not np.allclose(mat.T @ mat, np.eye(d), atol=1e-10):
            raise ValueError("basis must be a d x d orthogonal matrix")
    x = _initial_position(target, x0)
    if theta0 is None:
        theta = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    else:
        theta = np.array(theta0, dtype=float).reshape(-1)
        if theta.shape[0] != d or not np.all(np.abs(theta) == 1):
            raise ValueError("theta0 must have entries +-1")
    A, B, vec, sc = target.arrays()
    if target.family == FAM_GAUSSIAN_FACTORS:
        A = np.zeros((0, 0))
    out = _drive_zigzag(target.family, A, B, vec, float(sc), np.ascontiguousarray(mat), x, theta,
                        horizon, max_events, delta, bool(record), rng)
    meta = {"spec": "zigzag", "basis": basis if isinstance(basis, str) else "explicit", "refresh": "none"}
    traj = _package(out, d, delta, record, meta)
    traj.meta["basis_matrix"] = mat
    return traj


# --------------------------------------------------------------------------
# discretization and CSV output


def discretize(traj: Trajectory, delta: float) -> SampleSeries:
    """Positions at ``delta, 2 delta, ...`` interpolated from the recorded segments.

    A step larger than the total time gives an empty series.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if traj.segments is None:
        if traj.samples is not None and traj.samples.delta == delta:
            return traj.samples
        raise ValueError("trajectory was run without recording segments")
    seg = traj.segments
    if len(seg) == 0:
        raise ValueError("trajectory is empty")
    limit = traj.total_time + _TIME_SLACK * max(1.0, traj.total_time)
    n = int(math.floor(limit / delta))
    while n > 0 and n * delta > limit:
        n -= 1
    times = delta * np.arange(1, n + 1)
    # segment j covers (start_j, start_j + duration_j]
    idx = np.searchsorted(seg.start, times, side="left") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    s = np.clip(times - seg.start[idx], 0.0, seg.duration[idx])
    pos = seg.position[idx] + s[:, None] * seg.direction[idx]
    return SampleSeries(delta, pos, traj.n_events)


def _fmt(v) -> str:
    return "%.17g" % v


def write_segments_csv(traj: Trajectory, path, meta: dict | None = None) -> None:
    if traj.segments is None:
        raise ValueError("trajectory was run without recording segments")
    seg = traj.segments
    d = traj.dim
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        cols = ["s", "duration"] + [f"x_{i + 1}" for i in range(d)] + [f"y_{i + 1}" for i in range(d)]
        fh.write(",".join(cols + ["event_kind", "factor"]) + "\n")
        for j in range(len(seg)):
            row = [_fmt(seg.start[j]), _fmt(seg.duration[j])]
            row += [_fmt(v) for v in seg.position[j]] + [_fmt(v) for v in seg.direction[j]]
            row += [EVENT_KINDS[seg.end_kind[j]], str(seg.factor[j])]
            fh.write(",".join(row) + "\n")


def write_samples_csv(series: SampleSeries, path, meta: dict | None = None) -> None:
    d = series.positions.shape[1] if series.positions.ndim == 2 else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write(f"# delta={_fmt(series.delta)}\n# n_delta={_fmt(series.n_delta)}\n")
        fh.write(",".join(["index", "t"] + [f"x_{i + 1}" for i in range(d)]) + "\n")
        for j in range(series.n):
            row = [str(j + 1), _fmt(series.delta * (j + 1))] + [_fmt(v) for v in series.positions[j]]
            fh.write(",".join(row) + "\n")


# --------------------------------------------------------------------------
# named comparison schemes


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str  # "pdmp" or "zigzag"
    spec: KernelSpec | None
    refresh: Callable[[float], RefreshStrategy]
    basis: str = "canonical"

    @property
    def needs_period(self) -> bool:
        return self.refresh is not _no_refresh

    def build(self, period: float | None):
        if self.needs_period and period is None:
            raise ValueError(f"preset {self.name!r} needs a refresh period T")
        return self.spec, self.refresh(period)


def _no_refresh(_period):
    return RefreshStrategy.none()


_DIRECT = ParallelKernel("direct")
_SWITCH_POS = OrthogonalKernel("switch", polarity="positive")

PRESETS: dict[str, Preset] = {
    "forward-no-ref": Preset("forward-no-ref", "pdmp", KernelSpec(_DIRECT, OrthogonalKernel()), _no_refresh),
    "forward-ref-all": Preset("forward-ref-all", "pdmp", KernelSpec(_DIRECT, _SWITCH_POS), _no_refresh),
    "forward-ref": Preset("forward-ref", "pdmp", KernelSpec(_DIRECT, _SWITCH_POS), RefreshStrategy.fixed_flag),
    "forward-full-ref": Preset("forward-full-ref", "pdmp", KernelSpec(_DIRECT, OrthogonalKernel()),
                               RefreshStrategy.fixed_full),
    "bps-full-ref": Preset("bps-full-ref", "pdmp", KernelSpec(), RefreshStrategy.fixed_full),
    "bps-no-ref": Preset("bps-no-ref", "pdmp", KernelSpec(), _no_refresh),
    "zigzag": Preset("zigzag", "zigzag", None, _no_refresh, "random"),
    "zigzag-canonical": Preset("zigzag-canonical", "zigzag", None, _no_refresh, "canonical"),
}

_ALIASES = {
    "forward-all-ref": "forward-ref-all",
    "zz": "zigzag",
    "zz-fit-metric": "zigzag-canonical",
}


def get_preset(name: str) -> Preset:
    key = name.strip().lower().replace("_", "-").replace(" ", "-")
    key = _ALIASES.get(key, key)
    if key not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")
    return PRESETS[key]


def run_preset(
    name: str,
    target: TargetModel,
    rng: np.random.Generator,
    period: float | None = None,
    factorized: bool = False,
    **kwargs,
) -> Trajectory:
    """Run one of the named schemes; ``period`` is the refresh time T where relevant."""
    preset = get_preset(name)
    if preset.kind == "zigzag":
        kwargs.pop("y0", None)
        return run_zigzag(target, rng, basis=preset.basis, **kwargs)
    spec, refresh = preset.build(period)
    runner = run_factorized if factorized else run_forward_ec
    traj = runner(target, spec, refresh, rng, **kwargs)
    traj.meta["preset"] = preset.name
    return traj
