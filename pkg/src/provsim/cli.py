"""Command-line entry point: ``provsim simulate|sweep|calibrate``.

Exit codes: 0 success, 1 configuration error, 2 simulation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .architectures import ArchitectureKind
from .calibration import calibrate, load_targets
from .config import WARMUP_MODES, ConfigError, RunConfig, dump_config, load_config
from .engine import SimulationError
from .harness import ScenarioKind, run_experiment
from .model import PlacementError, ValidationError
from .report import emit_csv, emit_summary, write_trace

log = logging.getLogger("provsim")

EXIT_OK, EXIT_CONFIG, EXIT_SIM = 0, 1, 2


def _add_run_flags(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--config", help="INI config file (default: calibrated 5-node cluster)")
    if not grid:
        p.add_argument("--arch", choices=[a.value for a in ArchitectureKind])
        p.add_argument("--scenario", choices=[s.value for s in ScenarioKind])
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jitter", type=float, metavar="SIGMA")
    p.add_argument("--warmup", choices=WARMUP_MODES)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--dump-config", action="store_true",
                   help="print the fully resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="one architecture x scenario experiment")
    _add_run_flags(sim)
    sim.add_argument("--trace", help="write the event trace of the first run to this CSV")

    sweep = sub.add_parser("sweep", help="full 4x4 architecture x scenario grid")
    _add_run_flags(sweep, grid=True)

    cal = sub.add_parser("calibrate", help="fit free parameters to target deployment times")
    cal.add_argument("--config")
    cal.add_argument("--targets", help="arch,scenario,target_minutes[,metric] CSV "
                                       "(default: built-in anchor targets)")
    cal.add_argument("--out", help="write the calibrated config here")
    return parser


def resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "arch", None):
        cfg = cfg.with_arch(args.arch)
    if getattr(args, "scenario", None):
        cfg = cfg.with_scenario(args.scenario)
    overrides = {}
    for flag, name in (("runs", "runs"), ("seed", "seed"), ("jitter", "jitter"),
                       ("warmup", "warmup")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if overrides.get("runs", 1) < 1:
        raise ConfigError("--runs must be >= 1")
    if overrides.get("jitter", 0.0) < 0:
        raise ConfigError("--jitter must be >= 0")
    return replace(cfg, out=getattr(args, "out", None), trace=getattr(args, "trace", None),
                   **overrides)


def experiment(cfg: RunConfig, arch=None, scenario=None, keep_records=False):
    cfg = cfg.with_arch(arch or cfg.arch)
    return run_experiment(cfg.cluster, cfg.arch, scenario or cfg.scenario, cfg.calib,
                          cfg.stages, seed=cfg.seed, runs=cfg.runs, sigma=cfg.jitter,
                          warmup=cfg.warmup, n_vms=cfg.n_vms, interval=cfg.interval,
                          template=cfg.template or None, keep_records=keep_records)


def cmd_simulate(cfg: RunConfig) -> int:
    result = experiment(cfg, keep_records=cfg.trace is not None)
    emit_csv(result, cfg.out or sys.stdout)
    if cfg.trace:
        write_trace(result.records[0].trace, cfg.trace)
    print(emit_summary([result]), end="", file=sys.stderr if cfg.out is None else sys.stdout)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    results = [experiment(cfg, arch, scen) for arch in ArchitectureKind for scen in ScenarioKind]
    emit_csv(results, cfg.out or sys.stdout)
    print(emit_summary(results), end="", file=sys.stderr if cfg.out is None else sys.stdout)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    targets = load_targets(args.targets)
    res = calibrate(cfg, targets)
    print(f"objective {res.objective:.6g} after {res.evaluations} evaluations")
    for name, value in res.values.items():
        print(f"  {name} = {value:.6g}")
    print("arch   scenario metric         target   simulated")
    for target, minutes in res.fitted:
        bound = f"{'' if target.op == '=' else target.op}{target.minutes:g}"
        print(f"{target.arch.value:<6} {target.scenario.value:<8} {target.metric:<14} "
              f"{bound:>7} {minutes:10.2f}")
    text = dump_config(res.config)
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "calibrate":
            return cmd_calibrate(args)
        cfg = resolve(args)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_sweep(cfg)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, PlacementError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
