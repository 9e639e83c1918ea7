import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from forward_ec.cli import EXIT_CONFIG, EXIT_OK, main
from forward_ec.config import ConfigError, ExperimentConfig
from forward_ec.samplers import PRESETS


def rows(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    reader = list(csv.reader(lines))
    return reader[0], reader[1:]


def comments(path):
    with open(path, encoding="utf-8") as fh:
        return dict(ln[2:].split("=", 1) for ln in fh.read().splitlines() if ln.startswith("# "))


# -- config ------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig().with_overrides({
        "target.kind": "mixture", "target.dim": "8", "run.schemes": "forward-ref-all,bps-no-ref",
        "run.dims": "16,64,256", "run.delta": "0.1", "sampler.period": "2.5", "run.synthetic_z": "0.9",
        "sampler.factorized": "yes", "run.horizon": "inf",
    })
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg
    cfg.save(tmp_path / "c.txt")
    assert ExperimentConfig.load(tmp_path / "c.txt") == cfg
    assert ExperimentConfig.from_text(ExperimentConfig().to_text()) == ExperimentConfig()
    assert ExperimentConfig.from_text("# comment only\n\n") == ExperimentConfig()


def test_config_errors_name_the_field():
    cases = {
        "run.replicas": "0",
        "run.delta": "-1",
        "target.kind": "banana",
        "sampler.period": "0",
        "run.observables": "U,entropy",
        "run.max_events": "many",
    }
    for key, value in cases.items():
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            ExperimentConfig().with_overrides({key: value})
    with pytest.raises(ConfigError, match="valid keys"):
        ExperimentConfig().with_overrides({"run.speed": "1"})
    with pytest.raises(ConfigError, match="line 2"):
        ExperimentConfig.from_text("run.seed = 1\nnonsense\n")
    with pytest.raises(ConfigError) as err:
        ExperimentConfig().with_overrides({"sampler.preset": "forward-maybe"})
    assert all(name in str(err.value) for name in PRESETS)


def test_custom_spec():
    cfg = ExperimentConfig().with_overrides({
        "sampler.preset": "custom", "sampler.parallel": "rwmh(0.5)", "sampler.orthogonal": "ran-2",
        "sampler.polarity": "positive", "sampler.refresh": "poisson", "sampler.refresh_rate": "0.3",
    })
    spec, refresh = cfg.custom_spec()
    assert spec.parallel.variant == "rwmh" and spec.orthogonal.p == 2 and spec.orthogonal.polarity == "positive"
    assert refresh.variant == "poisson" and refresh.rate == 0.3
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides({"sampler.preset": "custom", "sampler.parallel": "teleport"})


# -- sample ------------------------------------------------------------------

def sample_args(out, seed=3, extra=()):
    return ["sample", "--out", str(out), "--seed", str(seed), "--set", "sampler.preset=forward-ref",
            "--set", "target.dim=2", "--set", "run.max_events=1000", "--set", "run.delta=0.3", *extra]


def test_sample_writes_files(tmp_path):
    assert main(sample_args(tmp_path / "a")) == EXIT_OK
    hdr, seg = rows(tmp_path / "a" / "segments.csv")
    assert hdr[:4] == ["s", "duration", "x_1", "x_2"]
    total = float(seg[-1][0]) + float(seg[-1][1])
    hdr, samp = rows(tmp_path / "a" / "samples.csv")
    assert hdr == ["index", "t", "x_1", "x_2"]
    assert len(samp) == math.floor(total / 0.3 + 1e-9)
    meta = comments(tmp_path / "a" / "samples.csv")
    assert meta["seed"] == "3" and meta["preset"] == "forward-ref" and meta["n_events"] == "1000"
    assert float(meta["n_delta"]) == pytest.approx(1000 / len(samp))
    assert ExperimentConfig.load(tmp_path / "a" / "config.txt").run_seed == 3


def test_sample_is_deterministic(tmp_path):
    assert main(sample_args(tmp_path / "a")) == EXIT_OK
    assert main(sample_args(tmp_path / "b")) == EXIT_OK
    assert main(sample_args(tmp_path / "c", seed=4)) == EXIT_OK
    a = (tmp_path / "a" / "samples.csv").read_bytes()
    assert a == (tmp_path / "b" / "samples.csv").read_bytes()
    assert a != (tmp_path / "c" / "samples.csv").read_bytes()
    assert (tmp_path / "a" / "segments.csv").read_bytes() == (tmp_path / "b" / "segments.csv").read_bytes()


def test_sample_from_config_file(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("target.kind = mixture\ntarget.dim = 8\nsampler.preset = zigzag\nrun.max_events = 500\n")
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    hdr, _ = rows(tmp_path / "o" / "samples.csv")
    assert hdr[-1] == "x_8"


def test_exit_codes(tmp_path, capsys):
    assert main(["sample", "--out", str(tmp_path), "--set", "sampler.preset=nope"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "valid presets" in err and "forward-ref-all" in err
    assert main(["bench", "--out", str(tmp_path), "--replicas", "0"]) == EXIT_CONFIG
    assert "run.replicas" in capsys.readouterr().err
    assert main(["sample", "--config", str(tmp_path / "missing.txt")]) == EXIT_CONFIG
    assert main(["mixture", "--out", str(tmp_path / "m")]) == EXIT_CONFIG  # default target is not a mixture
    assert main(["scaling", "--out", str(tmp_path / "s"), "--set", "run.dims=4,8"]) == EXIT_CONFIG
    assert main(["sample", "--set", "run.seed"]) == EXIT_CONFIG


def test_runtime_failure_exit_code(tmp_path):
    # a regular file where the output directory should go
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["sample", "--out", str(blocker / "sub"), "--set", "run.max_events=10"]) == 3


def test_dump_config(capsys):
    assert main(["bench", "--dump-config", "--seed", "11"]) == EXIT_OK
    text = capsys.readouterr().out
    assert ExperimentConfig.from_text(text).run_seed == 11


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "forward_ec.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("sample", "bench", "scaling", "mixture"):
        assert cmd in res.stdout


# -- bench ---------------------------------------------------------------------

def bench_args(out, extra=()):
    return ["bench", "--out", str(out), "--replicas", "3", "--seed", "5",
            "--set", "target.kind=gaussian", "--set", "target.dim=10", "--set", "run.schemes=forward-ref,bps-full-ref",
            "--set", "sampler.period=50", "--set", "run.delta=50", "--set", "run.max_events=20000",
            "--set", "run.start=target", *extra]


def test_bench_outputs(tmp_path):
    assert main(bench_args(tmp_path)) == EXIT_OK
    hdr, summary = rows(tmp_path / "summary.csv")
    assert hdr == ["scheme", "observable", "tau_samples", "tau_samples_err", "tau_events", "tau_events_err",
                   "ess", "ess_per_event", "n_delta", "truncated"]
    assert {(r[0], r[1]) for r in summary} == {(s, o) for s in ("forward-ref", "bps-full-ref")
                                               for o in ("U", "sqnorm", "coords")}
    for r in summary:
        tau, tau_ev, ess_ev, nd = float(r[2]), float(r[4]), float(r[7]), float(r[8])
        assert tau_ev == pytest.approx(tau * nd, rel=1e-12)
        assert ess_ev == pytest.approx(1 / (2 * tau_ev), rel=1e-12)
    hdr, acf = rows(tmp_path / "acf_forward-ref_U.csv")
    assert hdr == ["lag_samples", "lag_events", "C"]
    assert float(acf[0][2]) == pytest.approx(1.0, abs=0.05)
    assert comments(tmp_path / "acf_forward-ref_coords.csv")["aggregation"] == "mean of per-coordinate ACFs"
    hdr, box = rows(tmp_path / "boxplot.csv")
    assert hdr == ["scheme", "replica", "seed", "observable", "estimate"]
    assert len(box) == 2 * 3 * 3
    assert {r[2] for r in box} == {"5", "6", "7"}


def test_bench_independent_of_worker_count(tmp_path):
    assert main(bench_args(tmp_path / "one", ["--set", "run.schemes=forward-ref"])) == EXIT_OK
    assert main(bench_args(tmp_path / "two", ["--set", "run.schemes=forward-ref", "--workers", "2"])) == EXIT_OK
    assert (tmp_path / "one" / "summary.csv").read_bytes().splitlines()[1:] == \
        (tmp_path / "two" / "summary.csv").read_bytes().splitlines()[1:]


def test_bench_logistic_reports_nll(tmp_path):
    args = ["bench", "--out", str(tmp_path), "--replicas", "2", "--set", "target.kind=logistic",
            "--set", "sampler.preset=forward-no-ref", "--set", "sampler.factorized=true",
            "--set", "run.delta=0.1", "--set", "run.max_events=20000", "--set", "run.observables=nll,coords"]
    assert main(args) == EXIT_OK
    _, summary = rows(tmp_path / "summary.csv")
    nll = [r for r in summary if r[1] == "nll"]
    assert len(nll) == 1 and float(nll[0][7]) > 0


# -- scaling -------------------------------------------------------------------

def test_scaling_synthetic_recovers_exponent(tmp_path):
    args = ["scaling", "--out", str(tmp_path), "--set", "run.dims=16,64,256", "--set", "run.synthetic_z=0.9",
            "--set", "run.synthetic_amplitude=2", "--set", "run.schemes=forward-ref-all"]
    assert main(args) == EXIT_OK
    hdr, fits = rows(tmp_path / "scaling_fits.csv")
    assert hdr == ["scheme", "observable", "A", "A_err", "z", "z_err"]
    assert abs(float(fits[0][4]) - 0.9) <= 1e-10 and float(fits[0][2]) == pytest.approx(2.0, rel=1e-10)
    meta = comments(tmp_path / "scaling_forward-ref-all_synthetic.csv")
    assert float(meta["z"]) == pytest.approx(0.9, abs=1e-10)
    _, table = rows(tmp_path / "scaling_forward-ref-all_synthetic.csv")
    assert [int(r[0]) for r in table] == [16, 64, 256]


def test_scaling_missing_scheme(tmp_path, capsys):
    args = ["scaling", "--out", str(tmp_path), "--set", "run.schemes=forward-ref-all,forward-warp"]
    assert main(args) == EXIT_CONFIG
    assert "forward-warp" in capsys.readouterr().err


def test_scaling_small_run(tmp_path):
    args = ["scaling", "--out", str(tmp_path), "--replicas", "2", "--set", "target.kind=gaussian",
            "--set", "run.dims=4,8,16", "--set", "run.schemes=forward-ref-all", "--set", "run.delta=20",
            "--set", "run.max_events=5000", "--set", "run.observables=U", "--set", "run.start=target"]
    assert main(args) == EXIT_OK
    _, fits = rows(tmp_path / "scaling_fits.csv")
    assert fits[0][:2] == ["forward-ref-all", "U"] and math.isfinite(float(fits[0][4]))


# -- mixture -------------------------------------------------------------------

def test_mixture_outputs(tmp_path):
    args = ["mixture", "--out", str(tmp_path), "--replicas", "3", "--set", "target.kind=mixture",
            "--set", "target.dim=8", "--set", "run.schemes=forward-ref-all,bps-no-ref", "--set", "run.delta=1",
            "--set", "run.max_events=20000", "--set", "run.oracle_samples=50000", "--set", "run.bins=40"]
    assert main(args) == EXIT_OK
    hdr, occ = rows(tmp_path / "occupancy.csv")
    assert hdr[4:] == [f"p_{j}" for j in range(1, 6)]
    assert len(occ) == 1 + 2 * 3
    for r in occ:
        p = np.array([float(v) for v in r[4:]])
        assert p.sum() == pytest.approx(1.0, abs=1e-12) and np.all(p >= 0)
    hdr, hist = rows(tmp_path / "histogram.csv")
    assert hdr == ["scheme", "bin_left", "bin_right", "count", "below_range", "above_range"]
    n_samples = {s: sum(int(r[3]) for r in occ if r[0] == s) for s in ("exact-oracle", "forward-ref-all")}
    n_samples["exact-oracle"] = 50000
    for scheme, n in n_samples.items():
        sel = [r for r in hist if r[0] == scheme]
        assert len(sel) == 40
        assert sum(int(r[3]) for r in sel) + int(sel[0][4]) + int(sel[0][5]) == n
    assert comments(tmp_path / "occupancy.csv")["assignment"] == "nearest mean"


def test_mixture_runs_start_from_zero(tmp_path):
    from forward_ec.experiments import initial_position
    cfg = ExperimentConfig().with_overrides({"target.kind": "mixture", "target.dim": "8"})
    x0 = initial_position(cfg, cfg.build_target(), np.random.default_rng(0))
    np.testing.assert_array_equal(x0, np.zeros(8))
