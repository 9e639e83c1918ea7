"""Experiment configuration: flat ``section.key = value`` text files.

Lines starting with ``#`` are comments.  Every key has a default, so an
empty file is a valid configuration (a 2-d standard Gaussian sampled by
Forward Ref).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .kernels import KernelSpec, parse_orthogonal, parse_parallel
from .model import (
    TargetModel,
    build_anisotropic_gaussian,
    build_gaussian_mixture,
    build_logistic_posterior,
    build_standard_gaussian,
    load_german_credit,
    load_uci_csv,
)
from .samplers import PRESETS, RefreshStrategy, get_preset


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


TARGET_KINDS = ("gaussian", "standard-gaussian", "mixture", "logistic")
REFRESH_KINDS = ("none", "poisson", "fixed-time-full", "fixed-time-flag")
START_KINDS = ("zero", "target")


def _as_bool(key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _as_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    # target
    target_kind: str = "standard-gaussian"
    target_dim: int = 2
    target_seed: int = 0
    target_dataset: str = "german-credit"
    target_label_column: int = -1
    target_standardize: bool = True
    target_intercept: bool = True
    target_prior_variance: float = 1000.0
    # sampler
    sampler_preset: str = "forward-ref"
    sampler_parallel: str = "direct"
    sampler_orthogonal: str = "identity"
    sampler_polarity: str = "naive"
    sampler_law: str = "sphere"
    sampler_refresh: str = "none"
    sampler_refresh_rate: float = 0.0
    sampler_period: float = 1.0
    sampler_factorized: bool = False
    # run
    run_delta: float = 1.0
    run_horizon: float = math.inf
    run_max_events: int = 1000
    run_burnin_events: int = 0
    run_replicas: int = 1
    run_seed: int = 0
    run_workers: int = 1
    run_out: str = "out"
    run_start: str = "zero"
    run_observables: tuple[str, ...] = ("U", "sqnorm", "coords")
    run_schemes: tuple[str, ...] = ()
    run_dims: tuple[int, ...] = (25, 100, 400)
    run_max_lag: int = 0
    run_cutoff: float = 1e-3
    run_bins: int = 60
    run_oracle_samples: int = 1000000
    run_synthetic_z: float | None = None
    run_synthetic_amplitude: float = 1.0

    # ------------------------------------------------------------------
    # text form

    @staticmethod
    def _key(attr: str) -> str:
        section, _, rest = attr.partition("_")
        return f"{section}.{rest}"

    @classmethod
    def keys(cls) -> list[str]:
        return [cls._key(f.name) for f in fields(cls)]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                s = ""
            elif isinstance(v, tuple):
                s = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{self._key(f.name)} = {s}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        pairs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
        return cls().with_overrides(pairs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_text(text)

    def with_overrides(self, pairs: dict[str, str]) -> "ExperimentConfig":
        known = {self._key(f.name): f for f in fields(self)}
        updates = {}
        for key, text in pairs.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(known))}")
            f = known[key]
            updates[f.name] = _convert(key, f.type, text)
        cfg = replace(self, **updates)
        cfg.validate()
        return cfg

    # ------------------------------------------------------------------
    # validation

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.target_kind in TARGET_KINDS, "target.kind", f"must be one of {', '.join(TARGET_KINDS)}")
        need(self.target_dim >= 1, "target.dim", "must be positive")
        need(self.target_prior_variance > 0, "target.prior_variance", "must be positive")
        need(self.sampler_refresh in REFRESH_KINDS, "sampler.refresh", f"must be one of {', '.join(REFRESH_KINDS)}")
        need(self.sampler_refresh_rate >= 0, "sampler.refresh_rate", "must be non-negative")
        need(self.sampler_period > 0 and math.isfinite(self.sampler_period), "sampler.period", "must be positive")
        need(self.sampler_law in ("sphere", "gaussian"), "sampler.law", "must be sphere or gaussian")
        need(self.sampler_polarity in ("naive", "positive"), "sampler.polarity", "must be naive or positive")
        need(self.run_delta > 0, "run.delta", "must be positive")
        need(self.run_horizon > 0, "run.horizon", "must be positive")
        need(self.run_max_events >= 1, "run.max_events", "must be positive")
        need(self.run_burnin_events >= 0, "run.burnin_events", "must be non-negative")
        need(self.run_replicas >= 1, "run.replicas", "must be at least 1")
        need(self.run_workers >= 1, "run.workers", "must be at least 1")
        need(self.run_start in START_KINDS, "run.start", f"must be one of {', '.join(START_KINDS)}")
        need(self.run_max_lag >= 0, "run.max_lag", "must be non-negative (0 = automatic)")
        need(self.run_cutoff > 0, "run.cutoff", "must be positive")
        need(self.run_bins >= 1, "run.bins", "must be positive")
        need(self.run_oracle_samples >= 1, "run.oracle_samples", "must be positive")
        need(all(d >= 1 for d in self.run_dims), "run.dims", "dimensions must be positive")
        bad = [o for o in self.run_observables if o not in ("U", "sqnorm", "coords", "nll")]
        need(not bad, "run.observables", f"unknown observable(s) {', '.join(bad)}; valid: U, sqnorm, coords, nll")
        for name in (self.sampler_preset,) + self.run_schemes:
            if name == "custom":
                continue
            try:
                get_preset(name)
            except KeyError:
                key = "sampler.preset" if name == self.sampler_preset else "run.schemes"
                raise ConfigError(f"{key}: unknown preset {name!r}; valid presets: "
                                  f"custom, {', '.join(sorted(PRESETS))}") from None
        if self.sampler_preset == "custom":
            try:
                self.custom_spec()
            except ValueError as exc:
                raise ConfigError(f"sampler: {exc}") from exc

    # ------------------------------------------------------------------
    # builders

    @property
    def schemes(self) -> tuple[str, ...]:
        return self.run_schemes or (self.sampler_preset,)

    def custom_spec(self) -> tuple[KernelSpec, RefreshStrategy]:
        spec = KernelSpec(
            parallel=parse_parallel(self.sampler_parallel),
            orthogonal=parse_orthogonal(self.sampler_orthogonal, self.sampler_polarity),
            law=self.sampler_law,
        )
        if self.sampler_refresh == "none":
            refresh = RefreshStrategy.none()
        elif self.sampler_refresh == "poisson":
            refresh = RefreshStrategy.poisson(self.sampler_refresh_rate)
        elif self.sampler_refresh == "fixed-time-full":
            refresh = RefreshStrategy.fixed_full(self.sampler_period)
        else:
            refresh = RefreshStrategy.fixed_flag(self.sampler_period)
        return spec, refresh

    def build_target(self, dim: int | None = None) -> TargetModel:
        d = self.target_dim if dim is None else int(dim)
        kind = self.target_kind
        if kind == "gaussian":
            return build_anisotropic_gaussian(d)
        if kind == "standard-gaussian":
            return build_standard_gaussian(d)
        if kind == "mixture":
            return build_gaussian_mixture(d, self.target_seed)
        if self.target_dataset == "german-credit":
            data = load_german_credit(self.target_standardize, self.target_intercept, self.target_prior_variance)
        else:
            data = load_uci_csv(
                self.target_dataset, label_column=self.target_label_column, standardize=self.target_standardize,
                add_intercept=self.target_intercept, prior_variance=self.target_prior_variance,
            )
        return build_logistic_posterior(data)


def _convert(key: str, typ, text: str):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ == "bool":
            return _as_bool(key, text)
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "float | None":
            return None if text.strip().lower() in ("", "none", "off") else float(text)
        if typ == "tuple[str, ...]":
            return _as_list(text)
        if typ == "tuple[int, ...]":
            return tuple(int(p) for p in _as_list(text))
        return text.strip()
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ}") from None
