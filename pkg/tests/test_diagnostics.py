import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forward_ec.diagnostics import (
    AcfCurve,
    acf,
    acf_bruteforce,
    acf_vector,
    diagnose,
    ess,
    fit_scaling,
    integrated_time,
    integrated_time_details,
    mixture_occupancy,
    observable_values,
    true_moments,
)
from forward_ec.model import build_anisotropic_gaussian, build_gaussian_mixture
from forward_ec.samplers import SampleSeries


def curve(values, n=10**9):
    return AcfCurve(np.asarray(values, dtype=float), 0.0, 1.0, n)


# -- acf ----------------------------------------------------------------------

def test_acf_matches_double_loop():
    rng = np.random.default_rng(0)
    for n in (2, 17, 300, 1000):
        # correlated, O(1) mean and variance so the double loop itself is accurate
        h = 0.3 + np.convolve(rng.normal(size=n + 4), np.ones(5) / 2, mode="valid")
        for mean, var in ((None, None), (2.5, 0.7)):
            c = acf(h, n - 1 if n < 50 else 60, mean, var)
            ref = acf_bruteforce(h, c.max_lag, c.mean, c.variance)
            np.testing.assert_allclose(c.values, ref, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=60), st.floats(-5, 5), st.floats(0.1, 10))
def test_acf_bruteforce_property(values, mean, var):
    h = np.array(values)
    c = acf(h, len(values) - 1, mean, var)
    ref = acf_bruteforce(h, len(values) - 1, mean, var)
    assert np.max(np.abs(c.values - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_acf_alternating():
    h = np.array([1.0, -1.0] * 50)
    c = acf(h, 5, 0.0, 1.0)
    assert c.values[1] == pytest.approx(-1.0, abs=1e-15)
    assert c.values[2] == pytest.approx(1.0, abs=1e-15)


def test_acf_unit_at_zero_with_empirical_moments():
    rng = np.random.default_rng(1)
    for _ in range(20):
        h = rng.exponential(size=int(rng.integers(5, 500))) + rng.normal()
        assert acf(h, 3).values[0] == pytest.approx(1.0, abs=1e-9)
        assert acf(h, 3, centered=True).values[0] == pytest.approx(1.0, abs=1e-9)


def test_acf_white_noise():
    n = 10**5
    h = np.random.default_rng(2).normal(size=n)
    assert abs(acf(h, 10, 0.0, 1.0).values[1]) <= 4 / math.sqrt(n)


def test_acf_rejects():
    with pytest.raises(ValueError, match="variance"):
        acf(np.ones(10), 2)
    with pytest.raises(ValueError):
        acf(np.arange(5.0), 5)
    with pytest.raises(ValueError):
        acf(np.arange(5.0), 2, 0.0, 0.0)


def test_centered_acf_equals_bruteforce_without_mean_terms():
    rng = np.random.default_rng(3)
    h = rng.normal(size=400) + 10.0
    c = acf(h, 20, 10.0, 1.0, centered=True).values
    ref = acf_bruteforce(h - 10.0, 20, 0.0, 1.0)
    np.testing.assert_allclose(c, ref, atol=1e-12)


def test_acf_vector_averages_coordinates():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(500, 3))
    v = acf_vector(x, 10)
    manual = np.mean([acf(x[:, i], 10).values for i in range(3)], axis=0)
    np.testing.assert_allclose(v.values, manual, atol=1e-15)


# -- integrated time -------------------------------------------------------------

def test_tau_independent():
    assert integrated_time(curve([1.0] + [0.0] * 50)) == 0.5


def test_tau_geometric():
    r = 0.5
    vals = r ** np.arange(200)
    assert integrated_time(curve(vals)) == pytest.approx(1.5, abs=1e-3)
    d = integrated_time_details(curve(vals))
    assert not d.truncated and r ** d.n_int <= 1e-3


def test_tau_alternating_is_antithetic():
    vals = (-1.0) ** np.arange(11)
    d = integrated_time_details(curve(vals, n=1000))
    assert d.truncated
    assert d.tau < 0.5


def test_tau_window_factor_uses_series_length():
    vals = np.array([1.0, 0.5, 0.25, 0.0])
    n = 10
    assert integrated_time(curve(vals, n)) == pytest.approx(0.5 + 0.9 * 0.5 + 0.8 * 0.25, abs=1e-15)


def test_tau_cutoff_rule():
    vals = np.array([1.0, 0.5, 5e-4, 2e-3, 1e-4, 0.0])
    d = integrated_time_details(curve(vals))
    assert d.n_int == 4  # first lag after the last |C| > 1e-3 (lag 3)


def test_per_event_scaling_exact():
    c = curve(0.7 ** np.arange(100), n=5000)
    for nd in (1.0, 12.77, 55.0):
        e = c.per_event(nd)
        np.testing.assert_array_equal(e.lag_events, c.lags * nd)
        assert integrated_time(e) * nd == integrated_time(c) * nd


# -- ess ---------------------------------------------------------------------

def test_ess_examples():
    assert ess(1000, 5.0, 1)[0] == 100.0
    assert ess(10**5, 0.5, 1)[0] == 10**5
    e, per = ess(1000, 5.0, 10**5)
    assert e == 100.0 and per == pytest.approx(1e-3, rel=1e-15)
    with pytest.raises(ValueError):
        ess(10, 0.0, 1)


def test_diagnose_ess_per_event_identity():
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(4):
        z = np.empty(2000)
        z[0] = rng.normal()
        for i in range(1, 2000):
            z[i] = 0.6 * z[i - 1] + 0.8 * rng.normal()
        vals.append(z)
    rep = diagnose("x", vals, [2000 * 11] * 4, moments=(0.0, 1.0))
    assert rep.n_delta == 11.0
    assert rep.tau_events == rep.tau_samples * rep.n_delta
    assert rep.ess_per_event == pytest.approx(1 / (2 * rep.tau_samples * rep.n_delta), rel=1e-14)
    assert rep.ess == pytest.approx(2000 / (2 * rep.tau_samples), rel=1e-14)
    # AR(1) with coefficient 0.6: tau = 1/2 + 0.6 / 0.4 = 2
    assert rep.tau_samples == pytest.approx(2.0, abs=4 * rep.tau_samples_err + 0.05)


# -- scaling fit ----------------------------------------------------------------

def test_fit_planted_exponent():
    d = np.array([16.0, 64.0, 256.0])
    fit = fit_scaling(d, 2 * d**0.9)
    assert abs(fit.exponent - 0.9) <= 1e-10
    assert fit.amplitude == pytest.approx(2.0, rel=1e-10)
    assert np.max(np.abs(fit.residuals)) <= 1e-12
    assert abs(fit_scaling(d, np.full(3, 7.0)).exponent) <= 1e-12
    assert fit_scaling(d, d).exponent == pytest.approx(1.0, abs=1e-12)
    assert fit_scaling(d, 2 * d**0.9, 0.05 * 2 * d**0.9).exponent == pytest.approx(0.9, abs=1e-10)


def test_fit_under_noise_within_two_se():
    rng = np.random.default_rng(6)
    d = np.array([16.0, 32.0, 64.0, 128.0, 256.0])
    hits = 0
    trials = 400
    for _ in range(trials):
        tau = 3 * d**0.53 * np.exp(0.05 * rng.normal(size=d.size))
        fit = fit_scaling(d, tau, 0.05 * tau)
        hits += abs(fit.exponent - 0.53) <= 2 * fit.exponent_error
    # two-sided 2-SE coverage is 95.4%
    assert hits / trials >= 0.92


def test_fit_rejects():
    with pytest.raises(ValueError):
        fit_scaling([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_scaling([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError):
        fit_scaling([1, 2, 3], [1, 1, 2], [1, -1, 1])


# -- occupancy ---------------------------------------------------------------

def test_occupancy_examples():
    means = np.arange(15.0).reshape(5, 3)
    at2 = np.tile(means[1], (10, 1))
    np.testing.assert_array_equal(mixture_occupancy(at2, means), [0, 1, 0, 0, 0])
    np.testing.assert_array_equal(mixture_occupancy(np.random.default_rng(0).normal(size=(7, 3)), means[:1]), [1.0])
    # tie goes to the lower index
    np.testing.assert_array_equal(mixture_occupancy(np.array([[0.5]]), np.array([[0.0], [1.0]])), [1.0, 0.0])
    series = SampleSeries(0.5, at2, 10)
    np.testing.assert_array_equal(mixture_occupancy(series, means), [0, 1, 0, 0, 0])
    with pytest.raises(ValueError):
        mixture_occupancy(np.zeros((0, 3)), means)


def test_occupancy_of_exact_draws():
    target = build_gaussian_mixture(8, 0)
    n = 10**6
    x, _ = target.sample(n, np.random.default_rng(7))
    occ = mixture_occupancy(x, target.means)
    ref_x, _ = target.sample(n, np.random.default_rng(8))
    ref = mixture_occupancy(ref_x, target.means)
    se = np.sqrt(ref * (1 - ref) / n * 2)
    assert np.all(np.abs(occ - ref) <= 3 * se + 1e-12)


# -- observables -------------------------------------------------------------

def test_observables_and_true_moments():
    target = build_anisotropic_gaussian(5)
    x = target.sample(200_000, np.random.default_rng(9))
    for name in ("U", "sqnorm"):
        m, v = true_moments(target, name)
        vals = observable_values(target, name, x)
        assert vals.mean() == pytest.approx(m, abs=5 * math.sqrt(v / x.shape[0]))
        assert vals.var() == pytest.approx(v, rel=0.03)
    m, v = true_moments(target, "coords")
    np.testing.assert_array_equal(m, 0)
    np.testing.assert_allclose(x.var(axis=0), v, rtol=0.02)
    with pytest.raises(ValueError):
        observable_values(target, "nll", x)
    with pytest.raises(ValueError):
        observable_values(target, "bogus", x)
