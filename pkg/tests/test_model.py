import math

import numpy as np
import pytest

from forward_ec.model import (
    DatasetError,
    LogisticDataset,
    build_anisotropic_gaussian,
    build_gaussian_mixture,
    build_logistic_posterior,
    gaussian_mixture_spec,
    load_german_credit,
    load_uci_csv,
)


def central_diff(f, x, rel=1e-5):
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def assert_gradient_matches(target, points):
    for x in points:
        g = target.gradient(x)
        fd = central_diff(target.potential, x)
        scale = np.maximum(np.abs(g), 1e-3 * max(1.0, np.max(np.abs(g))))
        assert np.all(np.abs(g - fd) / scale <= 1e-4)


# -- anisotropic Gaussian ---------------------------------------------------

def test_anisotropic_endpoints():
    g = build_anisotropic_gaussian(400)
    assert g.variances[0] == pytest.approx(1.0, rel=1e-12)
    assert g.variances[-1] == pytest.approx(1e6, rel=1e-12)
    assert build_anisotropic_gaussian(2).variances[1] == pytest.approx(1e6, rel=1e-12)
    assert build_anisotropic_gaussian(3).variances[1] == pytest.approx(1e3, rel=1e-12)


def test_anisotropic_log_linear():
    v = np.log(build_anisotropic_gaussian(37).variances)
    assert np.allclose(np.diff(v, 2), 0.0, atol=1e-12)


def test_anisotropic_rejects_small_dim():
    with pytest.raises(ValueError):
        build_anisotropic_gaussian(1)


def test_gaussian_potential_and_gradient():
    g = build_anisotropic_gaussian(10)
    rng = np.random.default_rng(0)
    pts = g.sample(100, rng)
    x = pts[0]
    assert g.potential(x) == pytest.approx(0.5 * np.sum(x**2 / g.variances))
    assert_gradient_matches(g, pts)


# -- mixture ----------------------------------------------------------------

def test_mixture_spec_invariants():
    spec = gaussian_mixture_spec(8, 3)
    assert np.all((spec.base_variances >= 0.5) & (spec.base_variances <= 3.0))
    assert 1.0 <= spec.nu1 <= 2.0 and 1.0 <= spec.nu2 <= 2.0
    assert np.allclose(spec.weights, 0.2)
    assert np.all(spec.means[0] == 0)
    base = np.sort(spec.base_variances)
    for j in range(5):
        assert np.array_equal(np.sort(spec.variances[j]), base)
    sig = np.sqrt(spec.base_variances)
    for j in range(1, 5):
        step = spec.nu1 * sig[spec.permutations[j]] + spec.nu2 * sig[spec.permutations[j - 1]]
        assert np.allclose(spec.means[j] - spec.means[j - 1], step, rtol=1e-14)


def test_mixture_d2_mean_separation():
    spec = gaussian_mixture_spec(2, 11)
    sig_min = math.sqrt(spec.base_variances.min())
    assert np.all(spec.means[0] == 0)
    assert np.linalg.norm(spec.means[1] - spec.means[0]) >= 2 * math.sqrt(2) * sig_min


def test_mixture_reproducible():
    a, b = gaussian_mixture_spec(6, 42), gaussian_mixture_spec(6, 42)
    for name in ("base_variances", "permutations", "means", "variances", "weights"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert (a.nu1, a.nu2) == (b.nu1, b.nu2)
    assert not np.array_equal(a.means, gaussian_mixture_spec(6, 43).means)


def test_mixture_gradient_convex_combination():
    t = build_gaussian_mixture(5, 1)
    rng = np.random.default_rng(2)
    pts = rng.normal(scale=4.0, size=(100, 5)) + t.means[2]
    for x in pts:
        w = t.responsibilities(x)
        assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12
        comb = np.sum(w[:, None] * (x - t.means) * t.inv_var, axis=0)
        assert np.allclose(t.gradient(x), comb, rtol=1e-12, atol=1e-14)
    assert_gradient_matches(t, pts)


def test_mixture_far_point_is_finite():
    t = build_gaussian_mixture(4, 0)
    x = np.full(4, 500.0)
    assert np.isfinite(t.potential(x)) and np.all(np.isfinite(t.gradient(x)))


# -- logistic posterior -----------------------------------------------------

def small_posterior(seed=0, n=30, d=4):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.4).astype(float)
    return build_logistic_posterior(LogisticDataset(x, y))


def test_logistic_zero_theta():
    t = small_posterior()
    fp = t.factor_potentials(np.zeros(4))
    assert np.allclose(fp[1:], math.log(2.0), rtol=0, atol=1e-15)
    assert np.all(t.factor_gradient(0, np.zeros(4)) == 0)


def test_logistic_single_datum():
    t = build_logistic_posterior(LogisticDataset(np.array([[1.0]]), np.array([1.0])))
    u1 = t.factor_potentials(np.array([2.0]))[1]
    assert u1 == pytest.approx(math.log1p(math.e**2) - 2.0, abs=1e-15)
    assert u1 == pytest.approx(0.126928, abs=1e-6)


def test_logistic_factorization_and_gradient():
    t = small_posterior(1)
    rng = np.random.default_rng(3)
    thetas = rng.normal(scale=2.0, size=(100, 4))
    for th in thetas:
        u = t.potential(th)
        assert abs(u - t.factor_potentials(th).sum()) <= 1e-9 * (1 + abs(u))
        fg = sum(t.factor_gradient(i, th) for i in range(31))
        assert np.allclose(fg, t.gradient(th), rtol=1e-12, atol=1e-12)
    assert_gradient_matches(t, thetas)
    assert np.allclose(t.nll_batch(thetas), [t.nll(th) for th in thetas], rtol=1e-13)


def test_logistic_factor_callables():
    t = small_posterior(2, n=5, d=3)
    th = np.array([0.3, -0.2, 1.1])
    fs = t.factors
    assert len(fs) == 6
    assert np.allclose([f.potential(th) for f in fs], t.factor_potentials(th), rtol=1e-14)
    assert fs[0].capability == "exact-quadratic" and fs[1].capability == "exact-logistic"


def test_dataset_validation():
    with pytest.raises(ValueError):
        LogisticDataset(np.array([[np.nan]]), np.array([1.0]))
    with pytest.raises(ValueError):
        LogisticDataset(np.array([[1.0]]), np.array([2.0]))


# -- ingestion --------------------------------------------------------------

def test_csv_labels_sorted_and_standardized(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,B\n2,A\n3,B\n")
    ds = load_uci_csv(p, label_column=-1, standardize=True, add_intercept=True)
    assert list(ds.labels) == [1.0, 0.0, 1.0]
    s = math.sqrt(1.5)
    assert np.allclose(ds.covariates[:, 0], [-s, 0.0, s], atol=1e-15)
    assert np.all(ds.covariates[:, 1] == 1.0)


def test_whitespace_and_numeric_labels(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("# comment\n2 0.5 7\n1 1.5 7\n\n2 2.5 8\n")
    ds = load_uci_csv(p, label_column=0, standardize=False, add_intercept=False)
    assert list(ds.labels) == [1.0, 0.0, 1.0]
    assert ds.covariates.shape == (3, 2)


@pytest.mark.parametrize("body,fragment", [
    ("1,0\n2,1,3\n", "row 2"),
    ("1,0\nx,1\n", "row 2"),
    ("1,0\n2,1\n3,2\n", "row 3"),
])
def test_csv_errors_name_rows(tmp_path, body, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DatasetError, match=fragment):
        load_uci_csv(p)


def test_german_credit_shape():
    ds = load_german_credit()
    assert (ds.n_rows, ds.dim) == (1000, 25)
    assert set(np.unique(ds.labels)) == {0.0, 1.0}
    assert ds.labels.sum() == 300
    assert np.allclose(ds.covariates[:, :-1].mean(axis=0), 0, atol=1e-12)
    assert np.allclose(ds.covariates[:, :-1].std(axis=0), 1, atol=1e-12)
