"""Command-line entry point: ``forward-ec {sample,bench,scaling,mixture}``.

Exit codes: 0 on success, 2 for configuration errors, 3 for failures
while sampling or writing results.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments
from .config import ConfigError, ExperimentConfig
from .samplers import SamplerError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("forward_ec")

COMMANDS = {
    "sample": "run one trajectory and write its segments and samples",
    "bench": "replicated runs with ACF, integrated time and ESS per observable",
    "scaling": "integrated times across dimensions with power-law fits",
    "mixture": "mixture-mode occupancies and first-coordinate histograms",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forward-ec", description="Forward event-chain Monte Carlo experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--seed", type=int, help="base seed; replica i uses seed + i")
        p.add_argument("--replicas", type=int, help="number of independent runs")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration field (repeatable)")
        p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    for flag, key in (("seed", "run.seed"), ("replicas", "run.replicas"), ("workers", "run.workers"),
                      ("out", "run.out")):
        val = getattr(args, flag)
        if val is not None:
            pairs[key] = str(val)
    return cfg.with_overrides(pairs) if pairs else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    out = Path(cfg.run_out)
    try:
        if args.command == "sample":
            info = experiments.cmd_sample(cfg, out)
            log.info("wrote %d samples (%d events)", info["n_samples"], info["n_events"])
        elif args.command == "bench":
            rows = experiments.cmd_bench(cfg, out)
            for r in rows:
                log.info("%s %s tau_events=%.4g ess_per_event=%.4g", r["scheme"], r["observable"],
                         r["tau_events"], r["ess_per_event"])
        elif args.command == "scaling":
            for f in experiments.cmd_scaling(cfg, out):
                log.info("%s %s z=%.3f +- %.3f", f["scheme"], f["observable"], f["z"], f["z_err"])
        else:
            experiments.cmd_mixture(cfg, out)
        cfg.save(out / "config.txt")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # raised while building targets or kernels from otherwise well-formed values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SamplerError, RuntimeError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
