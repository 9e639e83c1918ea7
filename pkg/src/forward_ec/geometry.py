"""Direction-space primitives.

Everything here works on a single gradient direction ``n`` and splits a
direction ``y`` into its component along ``n`` (a scalar) and its
component in the orthogonal complement of ``n`` (a vector).  The
``_nb`` functions are numba kernels shared with the samplers; the
public functions wrap them with validation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

SPHERE = 0
GAUSSIAN = 1

_MODES = {"sphere": SPHERE, "uniform-sphere": SPHERE, "gaussian": GAUSSIAN, "standard-gaussian": GAUSSIAN}

DEGENERATE_NORM = 1e-300
COLLINEAR_NORM = 1e-8


@dataclass(frozen=True)
class DirectionLaw:
    """Law of the direction variable: uniform on the unit sphere or standard Gaussian."""

    mode: str
    dim: int

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown direction law {self.mode!r}; expected 'sphere' or 'gaussian'")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        object.__setattr__(self, "mode", "sphere" if _MODES[self.mode] == SPHERE else "gaussian")

    @property
    def code(self) -> int:
        return _MODES[self.mode]


@dataclass(frozen=True)
class GradientFrame:
    """Unit normal of a gradient together with the induced projections."""

    normal: np.ndarray
    degenerate: bool

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def parallel(self, y: np.ndarray) -> float:
        return float(np.dot(y, self.normal))

    def orthogonal(self, y: np.ndarray) -> np.ndarray:
        return y - np.dot(y, self.normal) * self.normal


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def unit_normal_nb(g):
    """Return (n, norm); n is zero when the gradient is degenerate."""
    nrm = math.sqrt(np.dot(g, g))
    if nrm < DEGENERATE_NORM:
        return np.zeros_like(g), 0.0
    return g / nrm, nrm


@njit(cache=True)
def sample_direction_nb(mode, d, rng):
    g = rng.standard_normal(d)
    if mode == SPHERE:
        nrm = math.sqrt(np.dot(g, g))
        while nrm == 0.0:
            g = rng.standard_normal(d)
            nrm = math.sqrt(np.dot(g, g))
        g /= nrm
    return g


@njit(cache=True)
def rho_from_uniform_nb(v, d):
    return -math.sqrt(max(0.0, 1.0 - v ** (2.0 / (d - 1.0))))


@njit(cache=True)
def rho_from_exponential_nb(e):
    return -math.sqrt(2.0 * e)


@njit(cache=True)
def sample_rho_nb(mode, d, rng):
    if mode == SPHERE:
        return rho_from_uniform_nb(rng.random(), d)
    return rho_from_exponential_nb(rng.standard_exponential())


@njit(cache=True)
def project_out_nb(v, n):
    return v - np.dot(v, n) * n


@njit(cache=True)
def orthonormal_pair_nb(n, rng):
    d = n.shape[0]
    while True:
        g1 = project_out_nb(rng.standard_normal(d), n)
        n1 = math.sqrt(np.dot(g1, g1))
        if n1 >= COLLINEAR_NORM:
            break
    e1 = g1 / n1
    while True:
        g2 = project_out_nb(rng.standard_normal(d), n)
        g2 = g2 - np.dot(e1, g2) * e1
        n2 = math.sqrt(np.dot(g2, g2))
        if n2 >= COLLINEAR_NORM:
            break
    e2 = g2 / n2
    # second pass keeps orthogonality at round-off level
    e2 = project_out_nb(e2, n)
    e2 = e2 - np.dot(e1, e2) * e1
    e2 /= math.sqrt(np.dot(e2, e2))
    return e1, e2


@njit(cache=True)
def orthonormal_frame_nb(n, p, rng):
    """Uniformly random orthonormal p-frame (columns) in the complement of n."""
    d = n.shape[0]
    frame = np.empty((d, p))
    for j in range(p):
        while True:
            g = project_out_nb(rng.standard_normal(d), n)
            for _ in range(2):
                for k in range(j):
                    g = g - np.dot(frame[:, k], g) * frame[:, k]
                g = project_out_nb(g, n)
            nrm = math.sqrt(np.dot(g, g))
            if nrm >= COLLINEAR_NORM:
                break
        frame[:, j] = g / nrm
    return frame


@njit(cache=True)
def uniform_in_complement_nb(n, rng):
    d = n.shape[0]
    while True:
        g = project_out_nb(rng.standard_normal(d), n)
        nrm = math.sqrt(np.dot(g, g))
        if nrm >= COLLINEAR_NORM:
            return g / nrm


# --------------------------------------------------------------------------
# public API


def make_frame(grad) -> GradientFrame:
    """Build the parallel/orthogonal decomposition induced by ``grad``.

    A gradient of norm below 1e-300 is degenerate; its normal is the zero
    vector, so every direction is purely orthogonal.
    """
    g = np.asarray(grad, dtype=float)
    if g.ndim != 1:
        raise ValueError("gradient must be a vector")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    n, nrm = unit_normal_nb(g)
    return GradientFrame(normal=n, degenerate=nrm == 0.0)


def sample_direction(law: DirectionLaw, rng: np.random.Generator) -> np.ndarray:
    return sample_direction_nb(law.code, law.dim, rng)


def sample_rho(law: DirectionLaw, rng: np.random.Generator) -> float:
    """Draw the parallel component of a freshly reflected direction.

    The value is always non-positive: it is the component along the
    gradient of a direction that points downhill after an event.
    """
    if law.code == SPHERE and law.dim < 2:
        raise ValueError("sphere mode needs d >= 2")
    return sample_rho_nb(law.code, law.dim, rng)


def orthonormal_pair(frame: GradientFrame, rng: np.random.Generator):
    """Two random orthonormal vectors orthogonal to the frame normal (Gram-Schmidt on projected Gaussians)."""
    if frame.dim < 3:
        raise ValueError("a 2-plane orthogonal to the gradient needs d >= 3")
    if frame.degenerate:
        raise ValueError("degenerate frame")
    return orthonormal_pair_nb(frame.normal, rng)


def householder_matrix(frame: GradientFrame) -> tuple[np.ndarray, int]:
    """Householder reflection exchanging the frame normal with a canonical vector.

    Returns the matrix and the index ``i`` of the canonical vector that is
    mapped onto the normal.  ``i`` is chosen where ``|n_i|`` is smallest,
    which keeps ``n - e_i`` well away from zero.
    """
    if frame.degenerate:
        raise ValueError("degenerate frame")
    n = frame.normal
    i = int(np.argmin(np.abs(n)))
    v = n.copy()
    v[i] -= 1.0
    h = np.eye(n.shape[0]) - 2.0 * np.outer(v, v) / np.dot(v, v)
    return h, i


def orthonormal_basis_householder(frame: GradientFrame) -> list[np.ndarray]:
    h, i = householder_matrix(frame)
    return [h[:, j].copy() for j in range(frame.dim) if j != i]
