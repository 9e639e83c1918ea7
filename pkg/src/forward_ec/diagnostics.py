"""Autocorrelation, integrated autocorrelation time, ESS and scaling fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .model import GaussianTarget, LogisticPosterior, TargetModel
from .samplers import SampleSeries

DEFAULT_CUTOFF = 1e-3
OBSERVABLES = ("U", "sqnorm", "coords", "nll")


@dataclass
class AcfCurve:
    """C_h(k) for k = 0..K with the moments used to normalise it."""

    values: np.ndarray
    mean: float | np.ndarray
    variance: float | np.ndarray
    n: int
    n_delta: float = 1.0
    moments: str = "empirical"

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.values.shape[0])

    @property
    def lag_events(self) -> np.ndarray:
        return self.lags * self.n_delta

    @property
    def max_lag(self) -> int:
        return self.values.shape[0] - 1

    def per_event(self, n_delta: float) -> "AcfCurve":
        """Same curve with lags measured in events."""
        return AcfCurve(self.values, self.mean, self.variance, self.n, float(n_delta), self.moments)


@dataclass
class TauEstimate:
    tau: float
    n_int: int
    truncated: bool


@dataclass
class ScalingFit:
    """tau = A d^z fitted by least squares on log tau."""

    dims: np.ndarray
    taus: np.ndarray
    tau_errors: np.ndarray | None
    amplitude: float
    exponent: float
    amplitude_error: float
    exponent_error: float
    residuals: np.ndarray


@dataclass
class DiagnosticsReport:
    observable: str
    curve: AcfCurve
    tau_samples: float
    tau_samples_err: float
    tau_events: float
    ess: float
    ess_per_event: float
    n_delta: float
    truncated: bool
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# autocorrelation


def _lagged_products(c: np.ndarray, max_lag: int) -> np.ndarray:
    """sum_{i < n-k} c_i c_{i+k} for k = 0..max_lag (zero-padded FFT)."""
    n = c.shape[0]
    size = sfft.next_fast_len(2 * n)
    f = sfft.rfft(c, size)
    return sfft.irfft(f * np.conj(f), size)[: max_lag + 1]


def acf(series, max_lag: int, mean: float | None = None, variance: float | None = None,
        centered: bool = False) -> AcfCurve:
    """Autocorrelation function

    ``C(k) = (n-k)^{-1} sum_{i<n-k} (h_i h_{i+k} - m^2) / sigma^2``

    with ``m`` and ``sigma^2`` either supplied (true moments) or taken
    from the series itself.  Computed on the series centred at ``m``,
    which is algebraically the same sum but avoids cancellation.

    ``centered=True`` drops the term ``m (c_i + c_{i+k})`` (with
    ``c = h - m``), giving ``sum c_i c_{i+k}``.  The dropped term has mean
    zero under stationarity but its fluctuations scale with ``m``, which
    swamps the estimate for observables with a large mean such as U.
    """
    h = np.asarray(series, dtype=float).reshape(-1)
    n = h.shape[0]
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must satisfy 0 <= max_lag < n (n={n}, max_lag={max_lag})")
    moments = "supplied" if mean is not None and variance is not None else "empirical"
    m = float(np.mean(h)) if mean is None else float(mean)
    c = h - m
    var = float(np.mean(c * c)) if variance is None else float(variance)
    if not var > 0:
        raise ValueError("series variance is zero; the autocorrelation is undefined")
    cross = _lagged_products(c, max_lag)
    # h_i h_{i+k} - m^2 = c_i c_{i+k} + m (c_i + c_{i+k})
    cs = np.concatenate([[0.0], np.cumsum(c)])
    k = np.arange(max_lag + 1)
    head = cs[n - k]  # sum_{i < n-k} c_i
    tail = cs[n] - cs[k]  # sum_{i >= k} c_i
    lin = 0.0 if centered else m * (head + tail)
    vals = (cross + lin) / ((n - k) * var)
    return AcfCurve(vals, m, var, n, 1.0, moments)


def acf_bruteforce(series, max_lag: int, mean: float, variance: float) -> np.ndarray:
    """Direct double loop over the defining sum (reference implementation)."""
    h = np.asarray(series, dtype=float)
    n = h.shape[0]
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        s = 0.0
        for i in range(n - k):
            s += h[i] * h[i + k] - mean * mean
        out[k] = s / ((n - k) * variance)
    return out


def average_curves(curves: list[AcfCurve]) -> AcfCurve:
    if not curves:
        raise ValueError("no curves to average")
    k = min(c.values.shape[0] for c in curves)
    vals = np.mean([c.values[:k] for c in curves], axis=0)
    first = curves[0]
    return AcfCurve(vals, first.mean, first.variance, int(np.mean([c.n for c in curves])), first.n_delta,
                    first.moments)


def acf_vector(samples, max_lag: int, means=None, variances=None, centered: bool = False) -> AcfCurve:
    """Average of per-coordinate ACFs of a vector observable (n x d array)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("vector observable needs an n x d array")
    d = x.shape[1]
    means = [None] * d if means is None else np.broadcast_to(means, (d,))
    variances = [None] * d if variances is None else np.broadcast_to(variances, (d,))
    curves = [acf(x[:, i], max_lag, means[i], variances[i], centered) for i in range(d)]
    out = average_curves(curves)
    out.mean = np.array([c.mean for c in curves])
    out.variance = np.array([c.variance for c in curves])
    return out


# --------------------------------------------------------------------------
# integrated time and ESS


def integrated_time_details(curve: AcfCurve, n: int | None = None, cutoff: float = DEFAULT_CUTOFF) -> TauEstimate:
    """tau = 1/2 + sum_{k=1}^{N_int} (1 - k/N) C(k).

    ``N_int`` is the smallest lag from which every later |C| within the
    computed window stays below ``cutoff``.  If the last lag is still
    above the cutoff the sum runs to the end of the window and the
    result is flagged as truncated.
    """
    n = curve.n if n is None else int(n)
    c = curve.values
    kmax = c.shape[0] - 1
    if kmax == 0:
        return TauEstimate(0.5, 0, False)
    above = np.nonzero(np.abs(c[1:]) > cutoff)[0]
    if above.size == 0:
        n_int = 1
    else:
        n_int = int(above[-1]) + 2  # first lag after the last exceedance
    truncated = n_int > kmax
    n_int = min(n_int, kmax)
    k = np.arange(1, n_int + 1)
    tau = 0.5 + float(np.sum((1.0 - k / n) * c[1:n_int + 1]))
    return TauEstimate(tau, n_int, truncated)


def integrated_time(curve: AcfCurve, n: int | None = None, cutoff: float = DEFAULT_CUTOFF) -> float:
    return integrated_time_details(curve, n, cutoff).tau


def ess(n: int, tau: float, events_total: int) -> tuple[float, float]:
    """Return (n / (2 tau), that value divided by the number of events)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    e = n / (2.0 * tau)
    return e, (e / events_total if events_total > 0 else math.nan)


# --------------------------------------------------------------------------
# scaling fit


def fit_scaling(dims, taus, tau_errors=None) -> ScalingFit:
    """Weighted least squares of ``log tau = log A + z log d``.

    With errors the weights are ``(tau / err)^2`` (delta method) and the
    parameter errors come from the weights alone; without errors they
    are scaled by the residual variance.
    """
    d = np.asarray(dims, dtype=float)
    t = np.asarray(taus, dtype=float)
    if d.shape != t.shape or d.ndim != 1:
        raise ValueError("dims and taus must be 1-D arrays of equal length")
    if d.shape[0] < 3:
        raise ValueError("need at least three points")
    if np.any(t <= 0) or np.any(d <= 0):
        raise ValueError("dimensions and tau values must be positive")
    ly, lx = np.log(t), np.log(d)
    if tau_errors is not None:
        err = np.asarray(tau_errors, dtype=float)
        if err.shape != t.shape or np.any(err <= 0):
            raise ValueError("tau errors must be positive and match taus")
        sig = err / t
    else:
        err = None
        sig = np.ones_like(t)
    design = np.column_stack([np.ones_like(lx), lx]) / sig[:, None]
    coef, *_ = np.linalg.lstsq(design, ly / sig, rcond=None)
    cov = np.linalg.inv(design.T @ design)
    resid = ly - (coef[0] + coef[1] * lx)
    if err is None:
        dof = len(t) - 2
        cov = cov * float(np.sum(resid**2)) / dof
    log_a, z = coef
    amp = math.exp(log_a)
    return ScalingFit(d, t, err, amp, float(z), amp * math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1]), resid)


# --------------------------------------------------------------------------
# mixture occupancy


def nearest_mean_labels(positions, means) -> np.ndarray:
    x = np.asarray(positions, dtype=float)
    mu = np.asarray(means, dtype=float)
    if x.ndim != 2 or mu.ndim != 2 or x.shape[1] != mu.shape[1]:
        raise ValueError("positions and means must be 2-D with matching dimension")
    d2 = np.sum(x * x, axis=1)[:, None] - 2.0 * x @ mu.T + np.sum(mu * mu, axis=1)[None, :]
    return np.argmin(d2, axis=1)  # first minimum on ties


def mixture_occupancy(samples, means) -> np.ndarray:
    """Fraction of samples whose nearest (Euclidean) mean is each component."""
    x = samples.positions if isinstance(samples, SampleSeries) else np.asarray(samples, dtype=float)
    mu = np.asarray(means, dtype=float)
    if x.shape[0] == 0 or mu.shape[0] == 0:
        raise ValueError("need at least one sample and one mean")
    labels = nearest_mean_labels(x, mu)
    return np.bincount(labels, minlength=mu.shape[0]) / x.shape[0]


# --------------------------------------------------------------------------
# observables


def observable_values(target: TargetModel, name: str, positions: np.ndarray) -> np.ndarray:
    """Evaluate a test function on every row of ``positions``.

    ``coords`` returns the positions themselves (an n x d array).
    """
    x = np.asarray(positions, dtype=float)
    if name == "coords":
        return x
    if name == "sqnorm":
        return np.sum(x * x, axis=1)
    if name == "U":
        if isinstance(target, GaussianTarget):
            return 0.5 * np.sum(x * x * target.inv_var, axis=1)
        if isinstance(target, LogisticPosterior):
            return target.nll_batch(x) + np.sum(x * x, axis=1) / (2.0 * target.prior_variance)
        return np.array([target.potential(row) for row in x])
    if name == "nll":
        if not isinstance(target, LogisticPosterior):
            raise ValueError("the nll observable needs a logistic-regression target")
        return target.nll_batch(x)
    raise ValueError(f"unknown observable {name!r}; expected one of {', '.join(OBSERVABLES)}")


def true_moments(target: TargetModel, name: str):
    """(mean, variance) in closed form where available, else None."""
    if not isinstance(target, GaussianTarget):
        return None
    if name == "coords":
        return np.zeros(target.dim), target.variances.copy()
    mom = target.moments()
    return mom.get(name)


def _default_max_lag(n: int) -> int:
    return int(max(1, min(n - 1, max(100, n // 20))))


def diagnose(
    observable: str,
    values: list[np.ndarray],
    n_events: list[int],
    moments=None,
    max_lag: int | None = None,
    cutoff: float = DEFAULT_CUTOFF,
    centered: bool = True,
) -> DiagnosticsReport:
    """ACF, tau and ESS of one observable over independent replicas.

    The ACF (centred form by default) is averaged over replicas before
    tau is computed; the error
    on tau is a leave-one-replica-out jackknife.  ``moments`` is an
    optional (mean, variance) pair; otherwise the pooled empirical
    moments over all replicas are used.
    """
    if not values:
        raise ValueError("need at least one replica")
    n = min(v.shape[0] for v in values)
    if n < 2:
        raise ValueError("need at least two samples per replica")
    k = _default_max_lag(n) if max_lag is None else min(int(max_lag), n - 1)
    vector = values[0].ndim == 2
    if moments is None:
        pooled = np.concatenate([v[:n] for v in values], axis=0)
        mean = pooled.mean(axis=0)
        var = pooled.var(axis=0)
        moments_kind = "pooled"
    else:
        mean, var = moments
        moments_kind = "true"
    curves = []
    for v in values:
        v = v[:n]
        curves.append(acf_vector(v, k, mean, var, centered) if vector else acf(v, k, mean, var, centered))
    total_events = int(np.sum(n_events))
    n_delta = total_events / (n * len(values))
    avg = average_curves(curves).per_event(n_delta)
    avg.moments = moments_kind
    est = integrated_time_details(avg, n, cutoff)
    r = len(curves)
    if r > 1:
        jack = []
        for i in range(r):
            sub = average_curves(curves[:i] + curves[i + 1:])
            jack.append(integrated_time_details(sub, n, cutoff).tau)
        jack = np.asarray(jack)
        err = math.sqrt((r - 1) / r * float(np.sum((jack - jack.mean()) ** 2)))
    else:
        err = math.nan
    tau = est.tau
    if tau > 0:
        e, _ = ess(n, tau, total_events)
        e_per_event = 1.0 / (2.0 * tau * n_delta)
    else:
        e, e_per_event = math.nan, math.nan
    return DiagnosticsReport(
        observable=observable, curve=avg, tau_samples=tau, tau_samples_err=err,
        tau_events=tau * n_delta, ess=e, ess_per_event=e_per_event, n_delta=n_delta,
        truncated=est.truncated, extra={"n_int": est.n_int, "replicas": r, "n": n},
    )
