"""Direction-update kernels applied at gradient events.

At an event the current direction ``y`` is split along the unit gradient
``n``.  The parallel part ``-<y, n>`` is moved by a *parallel kernel*
that leaves the reflected-event law invariant, the orthogonal part by an
*orthogonal kernel* that leaves the conditional law of the complement
invariant, and the two are reassembled into the new direction.

Kernels are described by small frozen dataclasses and packed into a
float vector for the numba code paths (see ``KernelSpec.as_vector``).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .geometry import (
    GAUSSIAN,
    SPHERE,
    DirectionLaw,
    GradientFrame,
    orthonormal_frame_nb,
    orthonormal_pair_nb,
    project_out_nb,
    sample_direction_nb,
    sample_rho_nb,
    uniform_in_complement_nb,
    unit_normal_nb,
)

P_IDENTITY, P_DIRECT, P_IMH, P_RWMH = 0, 1, 2, 3
O_IDENTITY, O_FULL, O_SWITCH, O_PERP, O_RANP, O_AR = 0, 1, 2, 3, 4, 5

_PARALLEL_CODES = {"identity": P_IDENTITY, "direct": P_DIRECT, "imh": P_IMH, "rwmh": P_RWMH}
_ORTHOGONAL_CODES = {
    "identity": O_IDENTITY,
    "full": O_FULL,
    "switch": O_SWITCH,
    "perp-switch": O_PERP,
    "ranp": O_RANP,
    "ar": O_AR,
}
_PLANE_VARIANTS = ("switch", "perp-switch", "ranp")

# layout of the packed kernel vector
K_MODE, K_PCODE, K_PID, K_HW, K_OCODE, K_OID, K_P, K_THETA, K_AR, K_POS = range(10)
KVEC_LEN = 10


@dataclass(frozen=True)
class ParallelKernel:
    """Kernel on the parallel component.

    ``identity_prob`` turns the kernel into the mixture
    ``identity_prob * Id + (1 - identity_prob) * variant``.
    """

    variant: str = "identity"
    half_width: float = 0.5
    identity_prob: float = 0.0

    def __post_init__(self):
        if self.variant not in _PARALLEL_CODES:
            raise ValueError(f"unknown parallel kernel {self.variant!r}; expected one of {sorted(_PARALLEL_CODES)}")
        if not 0.0 <= self.identity_prob <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        if not self.half_width > 0:
            raise ValueError("random-walk half-width must be positive")

    @property
    def code(self) -> int:
        return _PARALLEL_CODES[self.variant]

    @property
    def is_metropolis(self) -> bool:
        return self.variant in ("imh", "rwmh")

    def describe(self) -> str:
        s = f"rwmh({self.half_width:g})" if self.variant == "rwmh" else self.variant
        return f"mix({self.identity_prob:g},{s})" if self.identity_prob > 0 else s


@dataclass(frozen=True)
class OrthogonalKernel:
    """Kernel on the component orthogonal to the gradient.

    ``theta=None`` draws the ran-p angle uniformly on [0, 2*pi) at each
    application; a number fixes it.  ``identity_prob`` is the mixture
    weight of the identity kernel.
    """

    variant: str = "identity"
    polarity: str = "naive"
    p: int = 2
    theta: float | None = None
    ar_rho: float = 0.5
    identity_prob: float = 0.0

    def __post_init__(self):
        if self.variant not in _ORTHOGONAL_CODES:
            raise ValueError(
                f"unknown orthogonal kernel {self.variant!r}; expected one of {sorted(_ORTHOGONAL_CODES)}"
            )
        if self.polarity not in ("naive", "positive"):
            raise ValueError("polarity must be 'naive' or 'positive'")
        if self.variant == "ranp" and self.p < 2:
            raise ValueError("ran-p needs p >= 2")
        if not 0.0 <= self.ar_rho <= 1.0:
            raise ValueError("auto-regressive coefficient must lie in [0, 1]")
        if not 0.0 <= self.identity_prob <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        if self.variant == "ar" and self.polarity == "positive":
            raise ValueError("positive polarity is only defined for orthogonal transformations, not 'ar'")

    @property
    def code(self) -> int:
        return _ORTHOGONAL_CODES[self.variant]

    def describe(self) -> str:
        if self.variant == "ranp":
            s = f"ranp({self.p})" if self.theta is None else f"ranp({self.p},{self.theta:g})"
        elif self.variant == "ar":
            s = f"ar({self.ar_rho:g})"
        else:
            s = self.variant
        return f"mix({self.identity_prob:g},{s})" if self.identity_prob > 0 else s


@dataclass(frozen=True)
class KernelSpec:
    """Full event kernel: parallel kernel, orthogonal kernel and direction law."""

    parallel: ParallelKernel = field(default_factory=ParallelKernel)
    orthogonal: OrthogonalKernel = field(default_factory=OrthogonalKernel)
    law: str = "sphere"

    def __post_init__(self):
        if self.law not in ("sphere", "gaussian"):
            raise ValueError("direction law must be 'sphere' or 'gaussian'")
        if self.law == "gaussian" and self.parallel.is_metropolis:
            raise ValueError("Metropolis parallel kernels are only defined for the sphere law")
        if self.law == "sphere" and self.orthogonal.variant == "ar":
            raise ValueError("the auto-regressive orthogonal kernel needs the gaussian law")

    def direction_law(self, d: int) -> DirectionLaw:
        return DirectionLaw(self.law, d)

    def validate(self, d: int) -> None:
        if self.orthogonal.variant == "ranp" and self.orthogonal.p > d - 1:
            raise ValueError(f"ran-p with p={self.orthogonal.p} needs d >= p + 1 (got d={d})")
        if self.orthogonal.variant in _PLANE_VARIANTS and d < 3:
            raise ValueError(f"orthogonal kernel {self.orthogonal.variant!r} needs d >= 3")

    def without_orthogonal(self) -> "KernelSpec":
        return replace(self, orthogonal=OrthogonalKernel())

    def for_dimension(self, d: int) -> "KernelSpec":
        """Drop plane-based orthogonal kernels when the complement is one-dimensional.

        With d = 2 the complement of the gradient is a line and the only
        orthogonal maps on it are +-Id, so switch-type kernels reduce to
        the identity.
        """
        if d < 3 and self.orthogonal.variant in _PLANE_VARIANTS:
            return self.without_orthogonal()
        return self

    def as_vector(self, d: int) -> np.ndarray:
        self.validate(d)
        kv = np.zeros(KVEC_LEN)
        kv[K_MODE] = SPHERE if self.law == "sphere" else GAUSSIAN
        kv[K_PCODE] = self.parallel.code
        kv[K_PID] = self.parallel.identity_prob
        kv[K_HW] = self.parallel.half_width
        kv[K_OCODE] = self.orthogonal.code
        kv[K_OID] = self.orthogonal.identity_prob
        kv[K_P] = self.orthogonal.p
        kv[K_THETA] = np.nan if self.orthogonal.theta is None else self.orthogonal.theta
        kv[K_AR] = self.orthogonal.ar_rho
        kv[K_POS] = 1.0 if self.orthogonal.polarity == "positive" else 0.0
        return kv

    def describe(self) -> str:
        return f"parallel={self.parallel.describe()} orthogonal={self.orthogonal.describe()} " \
               f"polarity={self.orthogonal.polarity} law={self.law}"


# --------------------------------------------------------------------------
# string parsing for configuration files

_CALL = re.compile(r"^\s*([a-z\-]+)\s*(?:\((.*)\))?\s*$")


def _split_args(body: str) -> list[str]:
    depth, cur, out = 0, "", []
    for ch in body:
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def _parse_call(text: str) -> tuple[str, list[str]]:
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot parse kernel expression {text!r}")
    return m.group(1), _split_args(m.group(2) or "")


def parse_parallel(text: str) -> ParallelKernel:
    """Parse ``identity|direct|imh|rwmh[(h)]|mix(w,inner)``."""
    name, args = _parse_call(text)
    if name == "mix":
        if len(args) != 2:
            raise ValueError("mix expects (weight, inner)")
        inner = parse_parallel(args[1])
        return replace(inner, identity_prob=float(args[0]))
    if name == "rwmh" and args:
        return ParallelKernel("rwmh", half_width=float(args[0]))
    if args:
        raise ValueError(f"parallel kernel {name!r} takes no arguments")
    return ParallelKernel(name)


def parse_orthogonal(text: str, polarity: str = "naive") -> OrthogonalKernel:
    """Parse ``identity|full|switch|perp-switch|ranp(p[,theta])|ar(rho)|mix(p_r,inner)``.

    ``ran-<p>`` is accepted as shorthand for ``ranp(<p>)``.
    """
    short = re.fullmatch(r"\s*ran-(\d+)\s*", text)
    if short:
        text = f"ranp({short.group(1)})"
    name, args = _parse_call(text)
    if name == "mix":
        if len(args) != 2:
            raise ValueError("mix expects (p_r, inner)")
        inner = parse_orthogonal(args[1], polarity)
        return replace(inner, identity_prob=float(args[0]))
    if name == "ranp":
        p = int(args[0]) if args else 2
        theta = float(args[1]) if len(args) > 1 else None
        return OrthogonalKernel("ranp", polarity=polarity, p=p, theta=theta)
    if name == "ar":
        if len(args) != 1:
            raise ValueError("ar expects (rho)")
        return OrthogonalKernel("ar", polarity=polarity, ar_rho=float(args[0]))
    if args:
        raise ValueError(f"orthogonal kernel {name!r} takes no arguments")
    return OrthogonalKernel(name, polarity=polarity)


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def rho_log_density_nb(u, d):
    """Log density (up to a constant) of u = -y_par on [0, 1] for the sphere law."""
    if u <= 0.0 or u >= 1.0:
        if u == 1.0 and d == 3:
            return 0.0
        return -np.inf
    return math.log(u) + 0.5 * (d - 3.0) * math.log1p(-u * u)


@njit(cache=True)
def mh_step_nb(u, u_prop, d, uniform):
    """One Metropolis-Hastings accept/reject for a symmetric proposal."""
    lp = rho_log_density_nb(u, d)
    lq = rho_log_density_nb(u_prop, d)
    if lp == -np.inf:
        return u_prop
    if lq - lp >= 0.0 or uniform < math.exp(lq - lp):
        return u_prop
    return u


@njit(cache=True)
def apply_parallel_nb(kv, d, y_par, rng):
    if kv[K_PID] > 0.0 and rng.random() < kv[K_PID]:
        return y_par
    code = int(kv[K_PCODE])
    mode = int(kv[K_MODE])
    if code == P_IDENTITY:
        return y_par
    if code == P_DIRECT:
        return sample_rho_nb(mode, d, rng)
    u = -y_par
    if code == P_IMH:
        u_prop = rng.random()
    else:
        t = u + kv[K_HW] * (2.0 * rng.random() - 1.0)
        u_prop = t - math.floor(t)
    return -mh_step_nb(u, u_prop, d, rng.random())


@njit(cache=True)
def haar_orthogonal_nb(p, rng):
    z = rng.standard_normal((p, p))
    q, r = np.linalg.qr(z)
    for j in range(p):
        if r[j, j] < 0.0:
            q[:, j] = -q[:, j]
    return np.ascontiguousarray(q)


@njit(cache=True)
def plane_map_nb(y, e1, e2, m00, m01, m10, m11):
    """Apply the 2x2 map [[m00, m01], [m10, m11]] to the (e1, e2) coordinates of y."""
    c1 = np.dot(e1, y)
    c2 = np.dot(e2, y)
    n1 = m00 * c1 + m01 * c2
    n2 = m10 * c1 + m11 * c2
    return y + (n1 - c1) * e1 + (n2 - c2) * e2


@njit(cache=True)
def apply_orthogonal_nb(kv, n, y_perp, rng):
    if kv[K_OID] > 0.0 and rng.random() < kv[K_OID]:
        return y_perp.copy()
    code = int(kv[K_OCODE])
    if code == O_IDENTITY:
        return y_perp.copy()
    d = n.shape[0]
    mode = int(kv[K_MODE])
    if code == O_SWITCH or code == O_PERP or code == O_RANP:
        if d < 3:
            return y_perp.copy()
    if code == O_SWITCH:
        e1, e2 = orthonormal_pair_nb(n, rng)
        out = plane_map_nb(y_perp, e1, e2, 0.0, 1.0, 1.0, 0.0)
    elif code == O_PERP:
        e1, e2 = orthonormal_pair_nb(n, rng)
        out = plane_map_nb(y_perp, e1, e2, 0.0, -1.0, 1.0, 0.0)
    elif code == O_RANP:
        p = int(kv[K_P])
        if p == 2:
            theta = kv[K_THETA]
            if np.isnan(theta):
                theta = 2.0 * math.pi * rng.random()
            e1, e2 = orthonormal_pair_nb(n, rng)
            c, s = math.cos(theta), math.sin(theta)
            out = plane_map_nb(y_perp, e1, e2, c, s, s, -c)
        else:
            f = orthonormal_frame_nb(n, p, rng)
            coef = np.ascontiguousarray(f.T) @ y_perp
            rot = haar_orthogonal_nb(p, rng)
            out = y_perp + f @ (rot @ coef - coef)
    elif code == O_FULL:
        if mode == SPHERE:
            out = math.sqrt(np.dot(y_perp, y_perp)) * uniform_in_complement_nb(n, rng)
        else:
            out = project_out_nb(rng.standard_normal(d), n)
    else:
        r = kv[K_AR]
        out = r * y_perp + math.sqrt(1.0 - r * r) * project_out_nb(rng.standard_normal(d), n)
    if kv[K_POS] > 0.0 and np.dot(y_perp, out) < 0.0:
        out = -out
    return project_out_nb(out, n)


@njit(cache=True)
def assemble_direction_nb(kv, g, y, rng):
    d = y.shape[0]
    mode = int(kv[K_MODE])
    n, nrm = unit_normal_nb(g)
    if nrm == 0.0:
        return sample_direction_nb(mode, d, rng)
    y_par = np.dot(y, n)
    y_perp = y - y_par * n
    new_par = apply_parallel_nb(kv, d, -y_par, rng)
    new_perp = apply_orthogonal_nb(kv, n, y_perp, rng)
    if mode == SPHERE:
        radius = math.sqrt(max(0.0, 1.0 - new_par * new_par))
        m = math.sqrt(np.dot(new_perp, new_perp))
        if m > 0.0:
            new_perp *= radius / m
        elif radius > 0.0:
            new_perp = radius * uniform_in_complement_nb(n, rng)
    return new_par * n + new_perp


# --------------------------------------------------------------------------
# public API


def apply_parallel(kernel: ParallelKernel, law: DirectionLaw, y_par_in: float, rng: np.random.Generator) -> float:
    """Move the (non-positive) parallel component with ``kernel``."""
    if law.mode == "gaussian" and kernel.is_metropolis:
        raise ValueError("Metropolis parallel kernels are only defined for the sphere law")
    lo = -1.0 if law.mode == "sphere" else -np.inf
    if not lo <= y_par_in <= 0.0:
        raise ValueError(f"parallel input {y_par_in} outside the support of the reflected-event law")
    spec = KernelSpec(parallel=kernel, law=law.mode)
    return apply_parallel_nb(spec.as_vector(law.dim), law.dim, float(y_par_in), rng)


def apply_orthogonal(
    kernel: OrthogonalKernel,
    frame: GradientFrame,
    y_perp_in: np.ndarray,
    rng: np.random.Generator,
    law: str = "sphere",
) -> np.ndarray:
    """Move the orthogonal component with ``kernel``; the output stays orthogonal to the gradient."""
    if frame.degenerate:
        raise ValueError("degenerate frame")
    spec = KernelSpec(orthogonal=kernel, law=law)
    kv = spec.as_vector(frame.dim)
    return apply_orthogonal_nb(kv, frame.normal, np.asarray(y_perp_in, dtype=float), rng)


def assemble_direction(spec: KernelSpec, frame: GradientFrame, y_in: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """New direction after a gradient event at a point with gradient frame ``frame``.

    In sphere mode the orthogonal part is rescaled to norm
    ``sqrt(1 - y_par**2)`` so the result stays on the unit sphere.  A
    degenerate frame returns a fresh direction.
    """
    y = np.asarray(y_in, dtype=float)
    kv = spec.as_vector(frame.dim)
    if frame.degenerate:
        return sample_direction_nb(int(kv[K_MODE]), frame.dim, rng)
    return assemble_direction_nb(kv, frame.normal, y, rng)


def reflect(grad: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bouncy-particle reflection of ``y`` in the hyperplane orthogonal to ``grad``."""
    n = grad / np.linalg.norm(grad)
    return y - 2.0 * np.dot(y, n) * n
