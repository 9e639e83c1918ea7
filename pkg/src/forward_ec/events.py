"""Event-time generation along a linear flow ``x + t y``.

A gradient event happens at the first time the integrated rate
``int_0^T <y, grad U(x + s y)>_+ ds`` reaches an exponential(1) variate
``E``.  Closed forms exist for quadratic and logistic factors.  The
Gaussian mixture is handled by thinning, and factorized targets by
superposing one clock per factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy import integrate

INF = math.inf


@dataclass(frozen=True)
class EventDraw:
    """Elapsed time to the next event, the factor that fired and the variate used."""

    time: float
    factor: int | None = None
    exponential: float = math.nan


@dataclass(frozen=True)
class QuadraticLineRate:
    """Rate ``max(0, 2 u0 (t + t0))`` of a quadratic potential along a line."""

    u0: float
    t0: float

    @classmethod
    def from_gaussian(cls, x, y, inv_var) -> "QuadraticLineRate":
        x, y, p = (np.asarray(a, dtype=float) for a in (x, y, inv_var))
        u0 = 0.5 * float(np.dot(y * p, y))
        if u0 <= 0:
            raise ValueError("direction has zero curvature along the line")
        return cls(u0, float(np.dot(y * p, x)) / (2.0 * u0))

    def rate(self, t: float) -> float:
        return max(0.0, 2.0 * self.u0 * (t + self.t0))


# --------------------------------------------------------------------------
# numba solvers


@njit(cache=True)
def quadratic_time_nb(u0, t0, e):
    """Solve int_0^T max(0, 2 u0 (t + t0)) dt = e (u0 > 0)."""
    r = e / u0
    if t0 >= 0.0:
        # -t0 + sqrt(r + t0^2), written without cancellation
        den = t0 + math.sqrt(r + t0 * t0)
        return r / den if den > 0.0 else 0.0
    return -t0 + math.sqrt(r)


@njit(cache=True)
def linear_rate_time_nb(a, b, e):
    """Solve int_0^T max(0, a + b t) dt = e; returns inf if the mass never reaches e."""
    if b > 0.0:
        return quadratic_time_nb(0.5 * b, a / b, e)
    if b == 0.0:
        if a > 0.0:
            return e / a
        return INF
    if a <= 0.0:
        return INF
    if e >= a * a / (-2.0 * b):
        return INF
    return 2.0 * e / (a + math.sqrt(max(0.0, a * a + 2.0 * b * e)))


@njit(cache=True)
def _softplus(s):
    if s > 0.0:
        return s + math.log1p(math.exp(-s))
    return math.log1p(math.exp(s))


@njit(cache=True)
def logistic_time_nb(a, b, label, e):
    """Event time of U_i(theta + t v) with a = <theta, x_i>, b = <v, x_i>."""
    if (label - 0.5) * b >= 0.0:
        return INF
    if e <= 0.0:
        return 0.0
    s = a if label == 1.0 else -a
    # log(e^E + (e^E - 1)(1 + e^s) - (e^E - 1)) = log(1 + (1 + e^s) expm1(E))
    if e > 30.0:
        log_expm1 = e + math.log1p(-math.exp(-e))
    else:
        log_expm1 = math.log(math.expm1(e))
    w = _softplus(s) + log_expm1
    return _softplus(w) / abs(b)


@njit(cache=True)
def mixture_line_terms_nb(means, inv_var, log_coef, x, y):
    """Per-component energy, slope and curvature along x + t y."""
    n_comp, d = means.shape
    e0 = np.empty(n_comp)
    alpha = np.empty(n_comp)
    beta = np.empty(n_comp)
    for j in range(n_comp):
        en = 0.0
        al = 0.0
        be = 0.0
        for i in range(d):
            diff = x[i] - means[j, i]
            p = inv_var[j, i]
            en += diff * diff * p
            al += y[i] * p * diff
            be += y[i] * y[i] * p
        e0[j] = 0.5 * en - log_coef[j]
        alpha[j] = al
        beta[j] = be
    return e0, alpha, beta


@njit(cache=True)
def mixture_rate_nb(e0, alpha, beta, s):
    """True rate <y, grad U(x + s y)>_+ and the envelope sum_j (alpha_j + beta_j s)_+."""
    n_comp = e0.shape[0]
    emin = INF
    en = np.empty(n_comp)
    for j in range(n_comp):
        en[j] = e0[j] + s * (alpha[j] + 0.5 * beta[j] * s)
        if en[j] < emin:
            emin = en[j]
    wsum = 0.0
    acc = 0.0
    env = 0.0
    for j in range(n_comp):
        w = math.exp(-(en[j] - emin))
        slope = alpha[j] + beta[j] * s
        wsum += w
        acc += w * slope
        if slope > 0.0:
            env += slope
    return max(0.0, acc / wsum), env


@njit(cache=True)
def mixture_event_nb(means, inv_var, log_coef, x, y, rng):
    """Thinning with the superposed per-component linear envelopes.

    Returns (time, number of proposed candidates).
    """
    e0, alpha, beta = mixture_line_terms_nb(means, inv_var, log_coef, x, y)
    n_comp = e0.shape[0]
    s = 0.0
    n_prop = 0
    while True:
        step = INF
        for j in range(n_comp):
            if beta[j] <= 0.0:
                continue
            u = quadratic_time_nb(0.5 * beta[j], alpha[j] / beta[j] + s, rng.standard_exponential())
            if u < step:
                step = u
        if step == INF:
            return INF, n_prop
        s += step
        n_prop += 1
        lam, env = mixture_rate_nb(e0, alpha, beta, s)
        if env > 0.0 and rng.random() * env < lam:
            return s, n_prop


@njit(cache=True)
def logistic_first_arrival_nb(a, b, labels, prior_u0, prior_t0, rng):
    """First arrival among the prior clock (index 0) and the data clocks (1..N)."""
    best = INF
    idx = -1
    best_e = math.nan
    if prior_u0 > 0.0:
        e = rng.standard_exponential()
        best = quadratic_time_nb(prior_u0, prior_t0, e)
        idx = 0
        best_e = e
    for i in range(a.shape[0]):
        if (labels[i] - 0.5) * b[i] >= 0.0:
            continue
        e = rng.standard_exponential()
        t = logistic_time_nb(a[i], b[i], labels[i], e)
        if t < best:
            best = t
            idx = i + 1
            best_e = e
    return best, idx, best_e


@njit(cache=True)
def gaussian_factors_first_arrival_nb(precisions, x, y, rng):
    best = INF
    idx = -1
    best_e = math.nan
    for k in range(precisions.shape[0]):
        u0 = 0.0
        c = 0.0
        for i in range(x.shape[0]):
            u0 += precisions[k, i] * y[i] * y[i]
            c += precisions[k, i] * y[i] * x[i]
        u0 *= 0.5
        if u0 <= 0.0:
            continue
        e = rng.standard_exponential()
        t = quadratic_time_nb(u0, c / (2.0 * u0), e)
        if t < best:
            best = t
            idx = k
            best_e = e
    return best, idx, best_e


# --------------------------------------------------------------------------
# public API


def quadratic_event_time(line: QuadraticLineRate, E: float) -> EventDraw:
    if not line.u0 > 0:
        raise ValueError("u0 must be positive")
    if E < 0:
        raise ValueError("exponential variate must be non-negative")
    return EventDraw(quadratic_time_nb(float(line.u0), float(line.t0), float(E)), None, float(E))


def linear_rate_event_time(a: float, b: float, E: float) -> EventDraw:
    """Event time for the rate ``max(0, a + b t)``."""
    return EventDraw(linear_rate_time_nb(float(a), float(b), float(E)), None, float(E))


def logistic_event_time(x_i, y_i: int, theta, v, E: float) -> EventDraw:
    """Event time of one logistic-regression factor along ``theta + t v``.

    Returns ``inf`` when the factor's potential does not increase along
    the line.
    """
    if E < 0:
        raise ValueError("exponential variate must be non-negative")
    if y_i not in (0, 1):
        raise ValueError("label must be 0 or 1")
    x_i = np.asarray(x_i, dtype=float)
    a = float(np.dot(theta, x_i))
    b = float(np.dot(v, x_i))
    return EventDraw(logistic_time_nb(a, b, float(y_i), float(E)), None, float(E))


def thinned_event_time(target, x, y, rng: np.random.Generator) -> EventDraw:
    """Gradient-event time for a Gaussian mixture target, by thinning."""
    y = np.asarray(y, dtype=float)
    if not np.any(y != 0):
        raise ValueError("direction must be non-zero")
    t, _ = mixture_event_nb(target.means, target.inv_var, target.log_coef, np.asarray(x, dtype=float), y, rng)
    return EventDraw(t)


def superposition_first_arrival(
    factors: Sequence[Callable[[np.ndarray, np.ndarray, float], float]],
    x,
    y,
    rng: np.random.Generator,
) -> EventDraw:
    """Run one clock per factor and return the earliest one.

    Each solver is called as ``solver(x, y, E)`` with its own exponential
    variate and returns an elapsed time (possibly ``inf``).  The factor
    index is 0-based.
    """
    if not factors:
        raise ValueError("need at least one factor")
    es = rng.standard_exponential(len(factors))
    times = np.array([solver(x, y, float(e)) for solver, e in zip(factors, es)])
    i = int(np.argmin(times))
    if times[i] == INF:
        return EventDraw(INF, None, math.nan)
    return EventDraw(float(times[i]), i, float(es[i]))


def oracle_event_time(
    rate: Callable[[float], float],
    E: float,
    t_max: float,
    tol: float = 1e-10,
    breakpoints: Sequence[float] = (),
) -> EventDraw:
    """Invert ``int_0^T rate = E`` numerically (adaptive quadrature plus bisection).

    Used as an independent reference for the closed-form solvers.
    ``breakpoints`` lists known kinks of the rate (for instance the onset
    of ``max(0, .)``); quadrature never straddles them, since a sliver of
    positive rate next to a kink can fall between all quadrature nodes.
    """
    kinks = sorted(float(b) for b in breakpoints if 0.0 < b < t_max)

    def checked(t):
        r = rate(t)
        if not math.isfinite(r):
            raise ValueError(f"rate is not finite at t={t}")
        return r

    def integral(lo, hi):
        edges = [lo] + [b for b in kinks if lo < b < hi] + [hi]
        return sum(integrate.quad(checked, a, b, limit=200, epsabs=1e-15, epsrel=1e-13)[0]
                   for a, b in zip(edges[:-1], edges[1:]))

    if E <= 0:
        return EventDraw(0.0, None, float(E))
    # bracket on a doubling grid so kinks are localised
    lo, f_lo = 0.0, 0.0
    hi = min(t_max, 1.0)
    while True:
        f_hi = f_lo + integral(lo, hi)
        if f_hi >= E:
            break
        if hi >= t_max:
            return EventDraw(INF, None, float(E))
        lo, f_lo = hi, f_hi
        hi = min(t_max, 2.0 * hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = f_lo + integral(lo, mid)
        if f_mid >= E:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return EventDraw(0.5 * (lo + hi), None, float(E))
