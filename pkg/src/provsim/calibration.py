"""Fit free model parameters to observed deployment times.

Targets file, one per line::

    arch,scenario,target_minutes[,metric]

``target_minutes`` may carry a ``>=`` or ``<=`` prefix for a one-sided
bound.  ``metric`` is ``total`` (aggregate total, default), ``max_deploy`` or
``median_deploy``.  The fit is a coordinate-wise sweep in log space that
minimises the summed squared relative error.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, replace
from typing import Optional

from scipy.optimize import minimize, minimize_scalar

from .architectures import ArchitectureKind
from .config import ConfigError, RunConfig
from .harness import ScenarioKind, run_experiment
from .model import MiB

METRICS = ("total", "max_deploy", "median_deploy")
# One-sided bounds are pulled this far inside so the fit does not sit on the edge.
BOUND_SLACK = 1e-3

DEFAULT_TARGETS = """\
arch,scenario,target_minutes,metric
arch1,sb,75,total
arch2,sb,75,total
arch3,sb,>=200,total
arch4,sb,10,median_deploy
arch4,sb,<=15,max_deploy
arch2,mi,<=30,max_deploy
arch3,mi,<=30,max_deploy
"""


@dataclass(frozen=True)
class Target:
    arch: ArchitectureKind
    scenario: ScenarioKind
    minutes: float
    metric: str = "total"
    op: str = "="

    def error(self, simulated: float) -> float:
        rel = simulated / self.minutes - 1.0
        if self.op == ">=":
            return min(0.0, simulated / (self.minutes * (1 + BOUND_SLACK)) - 1.0)
        if self.op == "<=":
            return max(0.0, simulated / (self.minutes * (1 - BOUND_SLACK)) - 1.0)
        return rel

    def satisfied(self, simulated: float, rel_tol: float = 0.05) -> bool:
        if self.op == ">=":
            return simulated >= self.minutes
        if self.op == "<=":
            return simulated <= self.minutes
        return abs(simulated / self.minutes - 1.0) <= rel_tol


def parse_targets(text: str) -> list[Target]:
    targets = []
    rows = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(rows, 1):
        row = [c.strip() for c in row]
        if not row or not row[0] or row[0].startswith("#"):
            continue
        if row[0].lower() == "arch":
            continue
        if len(row) not in (3, 4):
            raise ConfigError(f"targets line {lineno}: expected arch,scenario,target_minutes")
        value, op = row[2], "="
        for prefix in (">=", "<="):
            if value.startswith(prefix):
                op, value = prefix, value[2:].strip()
        metric = row[3] if len(row) == 4 and row[3] else "total"
        if metric not in METRICS:
            raise ConfigError(f"targets line {lineno}: unknown metric {metric!r}")
        try:
            minutes = float(value)
            target = Target(ArchitectureKind.parse(row[0]), ScenarioKind.parse(row[1]),
                            minutes, metric, op)
        except ValueError as exc:
            raise ConfigError(f"targets line {lineno}: {exc}") from None
        if not minutes > 0:
            raise ConfigError(f"targets line {lineno}: target must be positive")
        targets.append(target)
    if not targets:
        raise ConfigError("targets file contains no targets")
    return targets


@dataclass(frozen=True)
class Knob:
    name: str

    def get(self, cfg: RunConfig) -> float:
        section, key = self.name.split(".")
        if self.name == "storage.disk_mibps":
            return cfg.cluster.storage.disk_rate / MiB
        if self.name == "storage.nic_mibps":
            return cfg.cluster.storage.nic_bandwidth / MiB
        if self.name == "cluster.local_disk_mibps":
            return cfg.cluster.nodes[0].local_disk_rate / MiB
        if self.name == "cluster.nic_mibps":
            return cfg.cluster.nodes[0].nic_bandwidth / MiB
        if self.name == "calibration.ssh_stream_mibps":
            return cfg.calib.ssh_stream_rate / MiB
        if self.name == "calibration.boot_io_mib":
            return cfg.calib.boot_io_bytes / MiB
        if section == "calibration":
            return getattr(cfg.calib, key)
        raise KeyError(self.name)

    def set(self, cfg: RunConfig, value: float) -> RunConfig:
        cl = cfg.cluster
        if self.name == "storage.disk_mibps":
            return replace(cfg, cluster=replace(cl, storage=replace(cl.storage,
                                                                    disk_rate=value * MiB)))
        if self.name == "storage.nic_mibps":
            return replace(cfg, cluster=replace(cl, storage=replace(cl.storage,
                                                                    nic_bandwidth=value * MiB)))
        if self.name == "cluster.local_disk_mibps":
            nodes = [replace(n, local_disk_rate=value * MiB) for n in cl.nodes]
            return replace(cfg, cluster=replace(cl, nodes=nodes))
        if self.name == "cluster.nic_mibps":
            nodes = [replace(n, nic_bandwidth=value * MiB) for n in cl.nodes]
            return replace(cfg, cluster=replace(cl, nodes=nodes))
        if self.name == "calibration.ssh_stream_mibps":
            return replace(cfg, calib=replace(cfg.calib, ssh_stream_rate=value * MiB))
        if self.name == "calibration.boot_io_mib":
            return replace(cfg, calib=replace(cfg.calib, boot_io_bytes=value * MiB))
        section, key = self.name.split(".")
        if section == "calibration":
            return replace(cfg, calib=replace(cfg.calib, **{key: value}))
        raise KeyError(self.name)


DEFAULT_KNOBS = (
    Knob("calibration.boot_io_mib"),
    Knob("calibration.ssh_stream_mibps"),
    Knob("cluster.local_disk_mibps"),
)


def simulate_target(cfg: RunConfig, target: Target) -> float:
    """Simulated value of ``target`` in minutes (single noiseless run)."""
    result = run_experiment(cfg.with_arch(target.arch).cluster, target.arch, target.scenario,
                            cfg.calib, cfg.stages, seed=cfg.seed, runs=1, sigma=0.0,
                            warmup=cfg.warmup, n_vms=cfg.n_vms, interval=cfg.interval,
                            template=cfg.template or None)
    deploy = [d for d in result.deploy_times if d is not None]
    if not deploy:
        return math.inf
    if target.metric == "total":
        value = result.total
    elif target.metric == "max_deploy":
        value = max(deploy)
    else:
        value = statistics.median(deploy)
    return value / 60.0


def objective(cfg: RunConfig, targets) -> float:
    return sum(t.error(simulate_target(cfg, t)) ** 2 for t in targets)


@dataclass
class CalibrationResult:
    config: RunConfig
    values: dict
    objective: float
    fitted: list  # (target, simulated minutes)
    evaluations: int


def calibrate(cfg: RunConfig, targets, knobs=DEFAULT_KNOBS, sweeps: int = 6,
              span: float = 64.0, tol: float = 1e-10) -> CalibrationResult:
    """Coordinate descent over ``knobs``; each step is a bounded 1-D search in log space.

    A step is kept only if it strictly lowers the objective, so a knob that
    already satisfies its targets is left alone.
    """
    targets = list(targets)
    evaluations = 0

    def score(c):
        nonlocal evaluations
        evaluations += 1
        return objective(c, targets)

    best = score(cfg)
    for _ in range(sweeps):
        start = best
        for knob in knobs:
            if best <= tol:
                break
            x0 = knob.get(cfg)
            lo, hi = math.log(x0 / span), math.log(x0 * span)
            res = minimize_scalar(lambda u: score(knob.set(cfg, math.exp(u))),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-6})
            if res.fun < best:
                cfg, best = knob.set(cfg, math.exp(res.x)), res.fun
        if best <= tol or start - best <= tol * max(start, 1.0):
            break
    if best > tol and len(knobs) > 1:
        # coupled knobs (two stages on the same storage server) need a joint move
        u0 = [math.log(k.get(cfg)) for k in knobs]

        def joint(u):
            c = cfg
            for k, v in zip(knobs, u):
                c = k.set(c, math.exp(v))
            return score(c)

        res = minimize(joint, u0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": tol, "maxiter": 400 * len(knobs),
                                "initial_simplex": _simplex(u0, 0.2)})
        if res.fun < best:
            for k, v in zip(knobs, res.x):
                cfg = k.set(cfg, math.exp(v))
            best = res.fun
    fitted = [(t, simulate_target(cfg, t)) for t in targets]
    return CalibrationResult(cfg, {k.name: k.get(cfg) for k in knobs}, best, fitted,
                             evaluations)


def _simplex(u0, step):
    pts = [list(u0)]
    for i in range(len(u0)):
        p = list(u0)
        p[i] += step
        pts.append(p)
    return pts


def load_targets(path: Optional[str]) -> list[Target]:
    if path is None:
        return parse_targets(DEFAULT_TARGETS)
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_targets(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read targets {path}: {exc}") from None
