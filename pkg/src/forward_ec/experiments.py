"""Replicated experiments behind the command-line subcommands.

Each replica ``i`` uses ``numpy.random.default_rng(seed + i)``.  Replicas
run in a process pool when more than one worker is configured; results
are gathered in replica order, so output files do not depend on the
worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import ExperimentConfig
from .model import GaussianMixtureTarget, GaussianTarget, LogisticPosterior, TargetModel
from .samplers import (
    Trajectory,
    discretize,
    get_preset,
    haar_basis,
    run_factorized,
    run_forward_ec,
    run_zigzag,
    write_samples_csv,
    write_segments_csv,
)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header: list[str], rows, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={_fmt(v)}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _meta(cfg: ExperimentConfig, **more) -> dict:
    out = {"seed": cfg.run_seed, "replicas": cfg.run_replicas, "target": cfg.target_kind}
    out.update(more)
    return out


# --------------------------------------------------------------------------
# single replica


def initial_position(cfg: ExperimentConfig, target: TargetModel, rng: np.random.Generator) -> np.ndarray:
    if cfg.run_start == "target":
        if isinstance(target, GaussianTarget):
            return target.sample(1, rng)[0]
        if isinstance(target, GaussianMixtureTarget):
            return target.sample(1, rng)[0][0]
        raise ValueError("run.start=target needs a target with an exact sampler (gaussian or mixture)")
    return np.zeros(target.dim)


def run_replica(cfg: ExperimentConfig, scheme: str, target: TargetModel, index: int,
                record: bool = False) -> Trajectory:
    """One seeded run of ``scheme``, after the optional burn-in."""
    seed = cfg.run_seed + index
    rng = np.random.default_rng(seed)
    x0 = initial_position(cfg, target, rng)
    horizon = cfg.run_horizon
    limits = dict(horizon=horizon, max_events=cfg.run_max_events)

    if scheme != "custom" and get_preset(scheme).kind == "zigzag":
        preset = get_preset(scheme)
        basis = haar_basis(target.dim, rng) if preset.basis == "random" else np.eye(target.dim)
        theta0 = None
        if cfg.run_burnin_events:
            warm = run_zigzag(target, rng, basis=basis, x0=x0, max_events=cfg.run_burnin_events, record=False)
            x0, theta0 = warm.final_position, np.sign(basis.T @ warm.final_direction)
        traj = run_zigzag(target, rng, basis=basis, x0=x0, theta0=theta0, delta=cfg.run_delta,
                          record=record, **limits)
        traj.meta.update(preset=preset.name, seed=seed)
        return traj

    if scheme == "custom":
        spec, refresh = cfg.custom_spec()
    else:
        spec, refresh = get_preset(scheme).build(cfg.sampler_period)
    runner = run_factorized if cfg.sampler_factorized else run_forward_ec
    y0 = None
    if cfg.run_burnin_events:
        warm = runner(target, spec, refresh, rng, x0=x0, max_events=cfg.run_burnin_events, record=False)
        x0, y0 = warm.final_position, warm.final_direction
    traj = runner(target, spec, refresh, rng, x0=x0, y0=y0, delta=cfg.run_delta, record=record, **limits)
    traj.meta.update(preset=scheme, seed=seed)
    return traj


@dataclass
class ReplicaResult:
    index: int
    seed: int
    n_events: int
    n_samples: int
    total_time: float
    values: dict
    positions: np.ndarray | None


def _replica_job(args) -> ReplicaResult:
    cfg_text, scheme, dim, index, observables, keep_positions = args
    cfg = ExperimentConfig.from_text(cfg_text)
    target = cfg.build_target(dim)
    traj = run_replica(cfg, scheme, target, index, record=False)
    pos = traj.samples.positions
    values = {ob: dg.observable_values(target, ob, pos) for ob in observables}
    return ReplicaResult(index, cfg.run_seed + index, traj.n_events, pos.shape[0], traj.total_time, values,
                         pos if keep_positions else None)


def run_replicas(cfg: ExperimentConfig, scheme: str, dim: int | None, observables, keep_positions=False):
    text = cfg.to_text()
    jobs = [(text, scheme, dim, i, tuple(observables), keep_positions) for i in range(cfg.run_replicas)]
    if cfg.run_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.run_workers, len(jobs))) as pool:
            return list(pool.map(_replica_job, jobs))
    return [_replica_job(j) for j in jobs]


# --------------------------------------------------------------------------
# subcommand bodies


def _observables_for(cfg: ExperimentConfig, target: TargetModel) -> tuple[str, ...]:
    obs = cfg.run_observables
    if not isinstance(target, LogisticPosterior):
        obs = tuple(o for o in obs if o != "nll")
    return obs


def _moments(target: TargetModel, observable: str):
    return dg.true_moments(target, observable)


def cmd_sample(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    target = cfg.build_target()
    traj = run_replica(cfg, cfg.sampler_preset, target, 0, record=True)
    meta = _meta(cfg, preset=cfg.sampler_preset, n_events=traj.n_events, total_time=traj.total_time)
    write_segments_csv(traj, out / "segments.csv", meta)
    series = discretize(traj, cfg.run_delta)
    write_samples_csv(series, out / "samples.csv", meta)
    return {"n_events": traj.n_events, "n_samples": series.n, "n_delta": series.n_delta}


def _diagnose_scheme(cfg, target, results, observables):
    reports = {}
    for ob in observables:
        vals = [r.values[ob] for r in results]
        reports[ob] = dg.diagnose(
            ob, vals, [r.n_events for r in results], _moments(target, ob),
            max_lag=cfg.run_max_lag or None, cutoff=cfg.run_cutoff,
        )
    return reports


def bench_scheme(cfg: ExperimentConfig, scheme: str, dim: int | None = None):
    target = cfg.build_target(dim)
    observables = _observables_for(cfg, target)
    results = run_replicas(cfg, scheme, dim, observables)
    if min(r.n_samples for r in results) < 2:
        raise RuntimeError(f"scheme {scheme}: fewer than two samples per replica; lower run.delta")
    return target, results, _diagnose_scheme(cfg, target, results, observables)


def cmd_bench(cfg: ExperimentConfig, out: Path) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    summary, box = [], []
    for scheme in cfg.schemes:
        target, results, reports = bench_scheme(cfg, scheme)
        for ob, rep in reports.items():
            summary.append(dict(scheme=scheme, observable=ob, tau_samples=rep.tau_samples,
                                tau_samples_err=rep.tau_samples_err, tau_events=rep.tau_events,
                                tau_events_err=rep.tau_samples_err * rep.n_delta, ess=rep.ess,
                                ess_per_event=rep.ess_per_event, n_delta=rep.n_delta, truncated=rep.truncated))
            c = rep.curve
            write_csv(out / f"acf_{scheme}_{ob}.csv", ["lag_samples", "lag_events", "C"],
                      zip(c.lags, c.lag_events, c.values),
                      _meta(cfg, preset=scheme, observable=ob, n_delta=rep.n_delta, moments=c.moments,
                            aggregation="mean of per-coordinate ACFs" if ob == "coords" else "scalar"))
            # per-replica estimates for box plots
            for r in results:
                v = r.values[ob]
                if v.ndim == 2:
                    pooled = np.concatenate([q.values[ob] for q in results], axis=0)
                    j = int(np.argmax(pooled.var(axis=0)))
                    box.append((scheme, r.index, r.seed, f"x_{j + 1}", float(v[:, j].mean())))
                else:
                    box.append((scheme, r.index, r.seed, ob, float(v.mean())))
    cols = ["scheme", "observable", "tau_samples", "tau_samples_err", "tau_events", "tau_events_err",
            "ess", "ess_per_event", "n_delta", "truncated"]
    write_csv(out / "summary.csv", cols, ([row[c] for c in cols] for row in summary),
              _meta(cfg, delta=cfg.run_delta, period=cfg.sampler_period))
    write_csv(out / "boxplot.csv", ["scheme", "replica", "seed", "observable", "estimate"], box, _meta(cfg))
    return summary


def cmd_scaling(cfg: ExperimentConfig, out: Path) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    dims = list(cfg.run_dims)
    if len(dims) < 3:
        raise ValueError("run.dims: need at least three dimensions for a scaling fit")
    fits = []
    synthetic = cfg.run_synthetic_z is not None
    for scheme in cfg.schemes:
        table: dict[str, list] = {}
        if synthetic:
            for d in dims:
                tau = cfg.run_synthetic_amplitude * d ** cfg.run_synthetic_z
                table.setdefault("synthetic", []).append((d, tau, 0.01 * tau, math.nan, math.nan))
        else:
            for d in dims:
                _, _, reports = bench_scheme(cfg, scheme, d)
                for ob, rep in reports.items():
                    table.setdefault(ob, []).append(
                        (d, rep.tau_events, rep.tau_samples_err * rep.n_delta, rep.tau_samples, rep.n_delta))
        for ob, rows in table.items():
            d_arr = np.array([r[0] for r in rows], dtype=float)
            tau = np.array([r[1] for r in rows])
            err = np.array([r[2] for r in rows])
            use_err = err if np.all(np.isfinite(err)) and np.all(err > 0) else None
            if np.all(tau > 0):
                fit = dg.fit_scaling(d_arr, tau, use_err)
                a, a_err, z, z_err = fit.amplitude, fit.amplitude_error, fit.exponent, fit.exponent_error
            else:
                a = a_err = z = z_err = math.nan
            fits.append(dict(scheme=scheme, observable=ob, A=a, A_err=a_err, z=z, z_err=z_err))
            write_csv(out / f"scaling_{scheme}_{ob}.csv", ["d", "tau", "tau_err", "tau_samples", "n_delta"], rows,
                      _meta(cfg, preset=scheme, observable=ob, A=a, A_err=a_err, z=z, z_err=z_err,
                            tau_unit="events"))
    cols = ["scheme", "observable", "A", "A_err", "z", "z_err"]
    write_csv(out / "scaling_fits.csv", cols, ([f[c] for c in cols] for f in fits), _meta(cfg))
    return fits


def _histogram(x, edges):
    """Bin counts plus the number of values left and right of the range."""
    counts, _ = np.histogram(x, bins=edges)
    # np.histogram puts values equal to the last edge in the last bin
    return counts, int(np.sum(x < edges[0])), int(np.sum(x > edges[-1]))


def mixture_oracle(target: GaussianMixtureTarget, n: int, seed: int):
    """Exact draws: nearest-mean occupancy and first coordinates."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    x, _ = target.sample(n, rng)
    return dg.mixture_occupancy(x, target.means), x[:, 0]


def cmd_mixture(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    target = cfg.build_target()
    if not isinstance(target, GaussianMixtureTarget):
        raise ValueError("target.kind: the mixture command needs target.kind=mixture")
    k = target.spec.n_components
    exact_occ, exact_x1 = mixture_oracle(target, cfg.run_oracle_samples, cfg.run_seed)
    lo, hi = float(exact_x1.min()), float(exact_x1.max())
    pad = 0.1 * (hi - lo)
    edges = np.linspace(lo - pad, hi + pad, cfg.run_bins + 1)

    occ_rows = [("exact-oracle", -1, -1, cfg.run_oracle_samples, *exact_occ)]
    hist_rows = []
    counts, below, above = _histogram(exact_x1, edges)
    hist_rows += [("exact-oracle", edges[i], edges[i + 1], counts[i], below, above) for i in range(len(counts))]
    per_scheme = {}
    for scheme in cfg.schemes:
        results = run_replicas(cfg, scheme, None, (), keep_positions=True)
        occs = []
        x1 = []
        for r in results:
            occ = dg.mixture_occupancy(r.positions, target.means)
            occs.append(occ)
            occ_rows.append((scheme, r.index, r.seed, r.n_samples, *occ))
            x1.append(r.positions[:, 0])
        x1 = np.concatenate(x1)
        counts, below, above = _histogram(x1, edges)
        hist_rows += [(scheme, edges[i], edges[i + 1], counts[i], below, above) for i in range(len(counts))]
        per_scheme[scheme] = np.array(occs)
    write_csv(out / "occupancy.csv", ["scheme", "replica", "seed", "n_samples"] + [f"p_{j + 1}" for j in range(k)],
              occ_rows, _meta(cfg, dim=target.dim, mixture_seed=cfg.target_seed, assignment="nearest mean"))
    write_csv(out / "histogram.csv", ["scheme", "bin_left", "bin_right", "count", "below_range", "above_range"],
              hist_rows, _meta(cfg, coordinate="x_1"))
    return {"exact": exact_occ, "schemes": per_scheme}
