"""Target distributions and dataset ingestion.

Every target exposes its potential ``U`` (negative log density up to a
constant) and gradient.  Factorized targets also expose the per-factor
terms ``U_i``.  The ``family`` and ``arrays`` attributes are what the
compiled samplers consume.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logsumexp

EXACT_QUADRATIC = "exact-quadratic"
EXACT_LOGISTIC = "exact-logistic"
THINNING = "thinning-required"

# family codes shared with the compiled drivers
FAM_GAUSSIAN = 0
FAM_MIXTURE = 1
FAM_LOGISTIC = 2
FAM_GAUSSIAN_FACTORS = 3


@dataclass(frozen=True)
class Factor:
    potential: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    capability: str


class TargetModel:
    """Base class: a density ``exp(-U)`` on R^d."""

    family: int
    capability: str

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)

    def potential(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def factors(self) -> list[Factor] | None:
        return None

    def factor_potentials(self, x: np.ndarray) -> np.ndarray:
        fs = self.factors
        if fs is None:
            raise ValueError("target is not factorized")
        return np.array([f.potential(x) for f in fs])

    def arrays(self):
        """(matrix_a, matrix_b, vector, scalar) packed for the compiled drivers."""
        raise NotImplementedError


# --------------------------------------------------------------------------
# Gaussian targets


@dataclass(frozen=True)
class AnisotropicGaussianSpec:
    variances: np.ndarray

    @property
    def dim(self) -> int:
        return self.variances.shape[0]


class GaussianTarget(TargetModel):
    """Zero-mean Gaussian with diagonal covariance ``diag(variances)``."""

    family = FAM_GAUSSIAN
    capability = EXACT_QUADRATIC

    def __init__(self, variances):
        v = np.asarray(variances, dtype=float)
        if v.ndim != 1 or np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("variances must be a vector of positive reals")
        super().__init__(v.shape[0])
        self.variances = v
        self.inv_var = 1.0 / v

    @property
    def spec(self) -> AnisotropicGaussianSpec:
        return AnisotropicGaussianSpec(self.variances)

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(np.dot(x * self.inv_var, x))

    def gradient(self, x):
        return np.asarray(x, dtype=float) * self.inv_var

    def arrays(self):
        return np.zeros((0, 0)), np.zeros((0, 0)), self.inv_var, 0.0

    # closed-form moments used by the diagnostics
    def moments(self) -> dict[str, tuple[float, float]]:
        d, v = self.dim, self.variances
        return {
            "U": (d / 2.0, d / 2.0),
            "sqnorm": (float(v.sum()), float(2.0 * np.sum(v**2))),
        }

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) * np.sqrt(self.variances)


def anisotropic_variances(d: int) -> np.ndarray:
    """Diagonal covariance with entries log-linearly spaced from 1 to 1e6."""
    if d < 2:
        raise ValueError("anisotropic Gaussian needs d >= 2")
    i = np.arange(d)
    return np.exp(6.0 * i / (d - 1) * math.log(10.0))


def build_anisotropic_gaussian(d: int) -> GaussianTarget:
    return GaussianTarget(anisotropic_variances(d))


def build_standard_gaussian(d: int) -> GaussianTarget:
    return GaussianTarget(np.ones(d))


class FactorizedGaussianTarget(TargetModel):
    """Zero-mean Gaussian whose potential is a sum of diagonal quadratic factors.

    Factor ``k`` is ``U_k(x) = sum_i precisions[k, i] * x_i**2 / 2``; the
    overall precision is the column sum.
    """

    family = FAM_GAUSSIAN_FACTORS
    capability = EXACT_QUADRATIC

    def __init__(self, precisions):
        p = np.atleast_2d(np.asarray(precisions, dtype=float))
        if np.any(p < 0) or np.any(~np.isfinite(p)):
            raise ValueError("factor precisions must be finite and non-negative")
        if np.any(p.sum(axis=0) <= 0):
            raise ValueError("every coordinate needs positive total precision")
        super().__init__(p.shape[1])
        self.precisions = p
        self.inv_var = p.sum(axis=0)

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(np.dot(x * self.inv_var, x))

    def gradient(self, x):
        return np.asarray(x, dtype=float) * self.inv_var

    @property
    def factors(self):
        out = []
        for row in self.precisions:
            out.append(Factor(
                potential=lambda x, r=row: 0.5 * float(np.dot(np.asarray(x) * r, x)),
                gradient=lambda x, r=row: np.asarray(x, dtype=float) * r,
                capability=EXACT_QUADRATIC,
            ))
        return out

    def arrays(self):
        return self.precisions, np.zeros((0, 0)), self.inv_var, 0.0


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Five-mode chain of shifted, coordinate-permuted Gaussians."""

    base_variances: np.ndarray  # sigma_i^2, i = 1..d
    permutations: np.ndarray  # (J, d) integer array, kappa_j
    nu1: float
    nu2: float
    means: np.ndarray  # (J, d)
    variances: np.ndarray  # (J, d) diagonal of Sigma_j
    weights: np.ndarray  # (J,)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


def gaussian_mixture_spec(d: int, seed: int, n_components: int = 5) -> GaussianMixtureSpec:
    if d < 2:
        raise ValueError("mixture needs d >= 2")
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.5, 3.0, size=d)
    perms = np.stack([rng.permutation(d) for _ in range(n_components)])
    nu1, nu2 = rng.uniform(1.0, 2.0, size=2)
    sig = np.sqrt(base)
    means = np.zeros((n_components, d))
    for j in range(1, n_components):
        means[j] = means[j - 1] + nu1 * sig[perms[j]] + nu2 * sig[perms[j - 1]]
    variances = base[perms]
    weights = np.full(n_components, 1.0 / n_components)
    return GaussianMixtureSpec(base, perms, float(nu1), float(nu2), means, variances, weights)


class GaussianMixtureTarget(TargetModel):
    family = FAM_MIXTURE
    capability = THINNING

    def __init__(self, spec: GaussianMixtureSpec):
        super().__init__(spec.dim)
        self.spec = spec
        self.means = spec.means
        self.inv_var = 1.0 / spec.variances
        # log w_j - log det(Sigma_j) / 2
        self.log_coef = np.log(spec.weights) - 0.5 * np.sum(np.log(spec.variances), axis=1)

    def component_energies(self, x) -> np.ndarray:
        diff = np.asarray(x, dtype=float) - self.means
        return 0.5 * np.sum(diff * diff * self.inv_var, axis=1) - self.log_coef

    def responsibilities(self, x) -> np.ndarray:
        e = -self.component_energies(x)
        return np.exp(e - logsumexp(e))

    def potential(self, x):
        return float(-logsumexp(-self.component_energies(x)))

    def gradient(self, x):
        w = self.responsibilities(x)
        diff = np.asarray(x, dtype=float) - self.means
        return np.sum(w[:, None] * diff * self.inv_var, axis=0)

    def arrays(self):
        return self.means, self.inv_var, self.log_coef, 0.0

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Exact draws and their component labels."""
        j = rng.choice(self.spec.n_components, size=n, p=self.spec.weights)
        x = self.means[j] + rng.standard_normal((n, self.dim)) * np.sqrt(self.spec.variances[j])
        return x, j


def build_gaussian_mixture(d: int, seed: int) -> GaussianMixtureTarget:
    return GaussianMixtureTarget(gaussian_mixture_spec(d, seed))


# --------------------------------------------------------------------------
# Bayesian logistic regression


@dataclass(frozen=True)
class LogisticDataset:
    covariates: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) in {0, 1}
    prior_variance: float = 1000.0
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("covariates must be (N, d) and labels (N,)")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates contain non-finite entries")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        if not self.prior_variance > 0:
            raise ValueError("prior variance must be positive")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_rows(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]


class LogisticPosterior(TargetModel):
    """Posterior of a logistic regression with an isotropic Gaussian prior.

    Factor 0 is the prior ``|theta|^2 / (2 zeta^2)``; factor ``i >= 1`` is
    the negative log-likelihood of datum ``i - 1``.
    """

    family = FAM_LOGISTIC
    capability = EXACT_LOGISTIC

    def __init__(self, data: LogisticDataset):
        super().__init__(data.dim)
        self.data = data
        self.X = np.ascontiguousarray(data.covariates)
        self.y = data.labels
        self.prior_variance = float(data.prior_variance)

    def data_terms(self, theta) -> np.ndarray:
        a = self.X @ np.asarray(theta, dtype=float)
        # log(1 + e^a) - y a
        return np.logaddexp(0.0, a) - self.y * a

    def nll(self, theta) -> float:
        return float(np.sum(self.data_terms(theta)))

    def nll_batch(self, thetas: np.ndarray, chunk: int = 2048) -> np.ndarray:
        out = np.empty(thetas.shape[0])
        for s in range(0, thetas.shape[0], chunk):
            a = thetas[s:s + chunk] @ self.X.T
            out[s:s + chunk] = np.sum(np.logaddexp(0.0, a) - self.y * a, axis=1)
        return out

    def prior_potential(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(np.dot(theta, theta)) / (2.0 * self.prior_variance)

    def potential(self, theta):
        return self.nll(theta) + self.prior_potential(theta)

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        a = self.X @ theta
        return self.X.T @ (expit(a) - self.y) + theta / self.prior_variance

    def factor_potentials(self, theta):
        return np.concatenate([[self.prior_potential(theta)], self.data_terms(theta)])

    def factor_gradient(self, i: int, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if i == 0:
            return theta / self.prior_variance
        xi = self.X[i - 1]
        return xi * (expit(np.dot(xi, theta)) - self.y[i - 1])

    @property
    def factors(self):
        out = [Factor(self.prior_potential, lambda t: self.factor_gradient(0, t), EXACT_QUADRATIC)]
        for i in range(1, self.data.n_rows + 1):
            xi, yi = self.X[i - 1], self.y[i - 1]
            out.append(Factor(
                potential=lambda t, xi=xi, yi=yi: float(np.logaddexp(0.0, np.dot(xi, t)) - yi * np.dot(xi, t)),
                gradient=lambda t, i=i: self.factor_gradient(i, t),
                capability=EXACT_LOGISTIC,
            ))
        return out

    def arrays(self):
        return self.X, np.zeros((0, 0)), self.y, self.prior_variance


def build_logistic_posterior(dataset: LogisticDataset) -> LogisticPosterior:
    return LogisticPosterior(dataset)


# --------------------------------------------------------------------------
# dataset ingestion


class DatasetError(ValueError):
    pass


def _split_row(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        delimiter = "," if "," in line else None
    if delimiter is None:
        return line.split()
    return [c.strip() for c in next(csv.reader([line], delimiter=delimiter))]


def load_uci_csv(
    path,
    label_column: int = -1,
    standardize: bool = True,
    add_intercept: bool = True,
    delimiter: str | None = None,
    skip_columns: Sequence[int] = (),
    prior_variance: float = 1000.0,
) -> LogisticDataset:
    """Read a dense numeric table with one binary label column.

    Comma- and whitespace-delimited files are both accepted (auto-detected
    per line when ``delimiter`` is None).  Labels may be any two distinct
    values; they are mapped to 0 and 1 in sorted order (numeric order when
    every label parses as a number).  With ``standardize`` each covariate
    column is shifted and scaled to mean 0 and population variance 1;
    with ``add_intercept`` a constant-1 column is appended last.
    """
    text = Path(path).read_text()
    rows: list[list[str]] = []
    line_numbers: list[int] = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append(_split_row(line.strip(), delimiter))
        line_numbers.append(lineno)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    width = len(rows[0])
    label_idx = label_column % width
    skip = {c % width for c in skip_columns}
    if label_idx in skip:
        raise DatasetError("label column cannot be skipped")
    keep = [c for c in range(width) if c != label_idx and c not in skip]

    feats = np.empty((len(rows), len(keep)))
    raw_labels = []
    for r, (row, lineno) in enumerate(zip(rows, line_numbers)):
        if len(row) != width:
            raise DatasetError(f"row {lineno}: expected {width} columns, found {len(row)}")
        try:
            feats[r] = [float(row[c]) for c in keep]
        except ValueError as exc:
            raise DatasetError(f"row {lineno}: non-numeric covariate ({exc})") from None
        if not np.all(np.isfinite(feats[r])):
            raise DatasetError(f"row {lineno}: non-finite covariate")
        raw_labels.append(row[label_idx])

    labels = _map_labels(raw_labels, line_numbers)
    if standardize:
        feats = standardize_columns(feats)
    if add_intercept:
        feats = np.hstack([feats, np.ones((feats.shape[0], 1))])
    return LogisticDataset(feats, labels, prior_variance)


def _map_labels(raw: list[str], line_numbers: list[int]) -> np.ndarray:
    try:
        keys = [float(v) for v in raw]
    except ValueError:
        keys = list(raw)
    values = sorted(set(keys))
    if len(values) > 2:
        # report the first row carrying a third value
        allowed = set(values[:2])
        for k, lineno in zip(keys, line_numbers):
            if k not in allowed:
                raise DatasetError(f"row {lineno}: label {k!r} makes the labels non-binary")
    if len(values) < 2:
        raise DatasetError("labels take a single value; need two classes")
    lookup = {values[0]: 0.0, values[1]: 1.0}
    return np.array([lookup[k] for k in keys])


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit population variance; constant columns are only centered."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return (x - mean) / std


# German credit: the vendored file is the original categorical UCI table.
# Ordered attributes become integer codes, nominal ones indicator columns,
# numeric ones pass through; this yields 24 covariates.
_GERMAN_ORDINAL = {
    0: ["A11", "A12", "A13", "A14"],  # checking account status
    2: ["A30", "A31", "A32", "A33", "A34"],  # credit history
    5: ["A61", "A62", "A63", "A64", "A65"],  # savings
    6: ["A71", "A72", "A73", "A74", "A75"],  # employment since
    11: ["A121", "A122", "A123", "A124"],  # property
    16: ["A171", "A172", "A173", "A174"],  # job
}
_GERMAN_NUMERIC = [1, 4, 7, 10, 12, 15, 17]  # duration, amount, rate, residence, age, credits, liable
_GERMAN_INDICATORS = [
    (3, "A40"), (3, "A41"),  # purpose: new car, used car
    (8, "A93"),  # male single
    (9, "A102"), (9, "A103"),  # co-applicant, guarantor
    (13, "A141"), (13, "A142"),  # other installment plans: bank, stores
    (14, "A151"), (14, "A153"),  # housing: rent, for free
    (18, "A192"),  # telephone
    (19, "A201"),  # foreign worker
]


def german_credit_raw() -> list[list[str]]:
    text = resources.files("forward_ec").joinpath("data/german.data").read_text()
    return [line.split() for line in text.splitlines() if line.strip()]


def load_german_credit(standardize: bool = True, add_intercept: bool = True,
                       prior_variance: float = 1000.0) -> LogisticDataset:
    """German credit data (N = 1000) with 24 numeric covariates plus intercept.

    Label 1 marks a bad credit risk (original class 2).
    """
    rows = german_credit_raw()
    cols = []
    names = []
    for c in _GERMAN_NUMERIC:
        cols.append([float(r[c]) for r in rows])
        names.append(f"attr{c + 1}")
    for c, levels in _GERMAN_ORDINAL.items():
        cols.append([float(levels.index(r[c]) + 1) for r in rows])
        names.append(f"attr{c + 1}")
    for c, code in _GERMAN_INDICATORS:
        cols.append([1.0 if r[c] == code else 0.0 for r in rows])
        names.append(f"attr{c + 1}={code}")
    x = np.array(cols).T
    y = np.array([1.0 if r[20] == "2" else 0.0 for r in rows])
    if standardize:
        x = standardize_columns(x)
    if add_intercept:
        x = np.hstack([x, np.ones((x.shape[0], 1))])
        names.append("intercept")
    return LogisticDataset(x, y, prior_variance, tuple(names))
