"""Shared oracles for the test-suite."""
import itertools

import numpy as np
from numba import njit

from forward_ec.geometry import sample_direction_nb
from forward_ec.kernels import K_MODE, KernelSpec, OrthogonalKernel, ParallelKernel, assemble_direction_nb

N_TEST_FUNCTIONS = 5


@njit(cache=True)
def _test_functions(y, out):
    out[0] = y[0]
    out[1] = y[1]
    out[2] = y[0] * y[0]
    out[3] = y[0] * y[1]
    out[4] = y[2] * y[2]


@njit(cache=True)
def _balance_moments(kv, g, n, rng):
    """Sums and sums of squares of both sides of the extended-balance identity.

    Left: <y, g>_+ f(Q y) with y ~ mu_Y.  Right: <y, g>_- f(y).
    """
    d = g.shape[0]
    mode = int(kv[K_MODE])
    s = np.zeros((2, 5))
    s2 = np.zeros((2, 5))
    f = np.empty(5)
    for _ in range(n):
        y = sample_direction_nb(mode, d, rng)
        w = np.dot(y, g)
        if w > 0.0:
            _test_functions(assemble_direction_nb(kv, g, y, rng), f)
            for j in range(5):
                v = w * f[j]
                s[0, j] += v
                s2[0, j] += v * v
        y = sample_direction_nb(mode, d, rng)
        w = -np.dot(y, g)
        if w > 0.0:
            _test_functions(y, f)
            for j in range(5):
                v = w * f[j]
                s[1, j] += v
                s2[1, j] += v * v
    return s, s2


def balance_z_scores(spec: KernelSpec, grad: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Standardized differences (left - right) / combined SE, one per test function."""
    kv = spec.as_vector(grad.shape[0])
    s, s2 = _balance_moments(kv, np.asarray(grad, dtype=float), int(n), rng)
    mean = s / n
    var = s2 / n - mean**2
    se = np.sqrt((var[0] + var[1]) / n)
    diff = mean[0] - mean[1]
    return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) > 1e-12, np.inf, 0.0))


PARALLEL = {
    "identity": ParallelKernel("identity"),
    "direct": ParallelKernel("direct"),
    "imh": ParallelKernel("imh"),
    "rwmh": ParallelKernel("rwmh", half_width=0.5),
}
ORTHOGONAL = {
    "identity": dict(variant="identity"),
    "switch": dict(variant="switch"),
    "perp-switch": dict(variant="perp-switch"),
    "ran-2": dict(variant="ranp", p=2),
    "full": dict(variant="full"),
}


def balance_specs():
    """(label, KernelSpec) for every kernel combination that is defined."""
    out = []
    for law, (pname, par), (oname, okw), pol in itertools.product(
        ("sphere", "gaussian"), PARALLEL.items(), ORTHOGONAL.items(), ("naive", "positive")
    ):
        if law == "gaussian" and par.is_metropolis:
            continue
        spec = KernelSpec(par, OrthogonalKernel(polarity=pol, **okw), law)
        out.append((f"{law}/{pname}/{oname}/{pol}", spec))
    extra = [
        ("gaussian/direct/ar(0.5)/naive", KernelSpec(PARALLEL["direct"], OrthogonalKernel("ar", ar_rho=0.5), "gaussian")),
        ("sphere/mix(0.3,direct)/mix(0.5,switch)/positive",
         KernelSpec(ParallelKernel("direct", identity_prob=0.3),
                    OrthogonalKernel("switch", polarity="positive", identity_prob=0.5), "sphere")),
    ]
    return out + extra


def check_balance(spec, dims, n_x, n, seed):
    """Largest |z| over dimensions, gradient points and test functions."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in dims:
        spec.validate(d)
        for _ in range(n_x):
            x = rng.normal(size=d)
            grad = x * np.linspace(0.5, 2.0, d)  # gradient of a diagonal quadratic at x
            z = balance_z_scores(spec, grad, n, rng)
            worst = max(worst, float(np.max(np.abs(z))))
    return worst
