"""Benchmark scenarios, repeated seeded runs and deployment metrics."""

from __future__ import annotations

import enum
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .architectures import ArchitectureKind, Calibration
from .lifecycle import StageDurations
from .model import ClusterSpec, VmRequest
from .simulator import RunRecord, simulate

DEFAULT_N_VMS = 10
DEFAULT_INTERVAL = 180.0


class ScenarioKind(str, enum.Enum):
    SB = "sb"
    MB = "mb"
    SI = "si"
    MI = "mi"

    @classmethod
    def parse(cls, text) -> "ScenarioKind":
        if isinstance(text, cls):
            return text
        aliases = {"singleburst": "sb", "multiburst": "mb", "singleinterval": "si",
                   "multiinterval": "mi"}
        key = str(text).strip().lower().replace("_", "").replace("-", "")
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown scenario {text!r} (expected sb, mb, si or mi)") from None

    @property
    def label(self) -> str:
        return self.value.upper()

    @property
    def burst(self) -> bool:
        return self in (ScenarioKind.SB, ScenarioKind.MB)

    @property
    def single(self) -> bool:
        return self in (ScenarioKind.SB, ScenarioKind.SI)


class EmptyScenario(ValueError):
    pass


def generate_requests(kind, cluster: ClusterSpec, n_vms: int = DEFAULT_N_VMS,
                      interval: float = DEFAULT_INTERVAL,
                      template: Optional[str] = None) -> list[VmRequest]:
    kind = ScenarioKind.parse(kind)
    if n_vms <= 0:
        raise EmptyScenario("scenario must request at least one VM")
    if not cluster.nodes:
        raise EmptyScenario("scenario needs at least one node")
    template = template or cluster.templates[0].id
    nodes = cluster.node_ids
    requests = []
    for i in range(n_vms):
        arrival = 0.0 if kind.burst else i * interval
        node = nodes[0] if kind.single else nodes[i % len(nodes)]
        requests.append(VmRequest(f"vm{i + 1:02d}", template, arrival, node))
    return requests


@dataclass
class RunMetrics:
    vm_ids: list
    nodes: list
    arrivals: list
    running: list  # None for failed VMs
    curve: list
    total: Optional[float]
    failed: dict = field(default_factory=dict)

    @property
    def deploy(self) -> list:
        return [None if r is None else r - a for a, r in zip(self.arrivals, self.running)]


def compute_metrics(trace, order: Optional[list] = None) -> RunMetrics:
    """Reconstruct per-VM deployment times from an event trace.

    ``order`` fixes the VM ordering (request index); by default VMs appear in
    arrival order.
    """
    arrivals, running, nodes, failed = {}, {}, {}, {}
    for rec in trace:
        if rec.kind == "RequestArrival":
            arrivals[rec.vm] = rec.time
            nodes[rec.vm] = rec.node
        elif rec.kind == "StageComplete":
            if rec.detail.endswith("->Running"):
                running[rec.vm] = rec.time
            elif "->Failed" in rec.detail:
                failed[rec.vm] = rec.detail.split(": ", 1)[-1]
    ids = list(order) if order is not None else list(arrivals)
    run_times = [running.get(v) for v in ids]
    done = sorted(t for t in run_times if t is not None)
    total = None
    if done:
        total = done[-1] - min(arrivals[v] for v in ids)
    return RunMetrics(ids, [nodes.get(v, "") for v in ids], [arrivals.get(v) for v in ids],
                      run_times, done, total, failed)


def _mean(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if all(v == vals[0] for v in vals):
        return vals[0]
    return math.fsum(vals) / len(vals)


@dataclass
class ExperimentResult:
    arch: ArchitectureKind
    scenario: ScenarioKind
    runs: list  # RunMetrics per run, in seed order
    records: list = field(default_factory=list, repr=False)

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def n_vms(self) -> int:
        return len(self.runs[0].vm_ids) if self.runs else 0

    @property
    def vm_ids(self) -> list:
        return self.runs[0].vm_ids if self.runs else []

    @property
    def nodes(self) -> list:
        return self.runs[0].nodes if self.runs else []

    @property
    def mean_arrivals(self) -> list:
        return [_mean(col) for col in zip(*(r.arrivals for r in self.runs))]

    @property
    def mean_running(self) -> list:
        return [_mean(col) for col in zip(*(r.running for r in self.runs))]

    @property
    def deploy_times(self) -> list:
        """Per-VM deployment time averaged across runs (request order)."""
        return [_mean(col) for col in zip(*(r.deploy for r in self.runs))]

    @property
    def deploy_std(self) -> list:
        out = []
        for col in zip(*(r.deploy for r in self.runs)):
            vals = [v for v in col if v is not None]
            out.append(statistics.pstdev(vals) if len(vals) > 1 else 0.0)
        return out

    @property
    def curve(self) -> list:
        n = min((len(r.curve) for r in self.runs), default=0)
        return [_mean(r.curve[k] for r in self.runs) for k in range(n)]

    @property
    def total(self) -> Optional[float]:
        return _mean(r.total for r in self.runs)

    @property
    def failures(self) -> int:
        return sum(len(r.failed) for r in self.runs)


def run_once(cluster: ClusterSpec, arch, scenario, calib: Calibration = Calibration(),
             stages: Optional[StageDurations] = None, seed: int = 0, sigma: float = 0.0,
             warmup: str = "full", n_vms: int = DEFAULT_N_VMS,
             interval: float = DEFAULT_INTERVAL, template: Optional[str] = None,
             registry: Optional[dict] = None, observers=None) -> RunRecord:
    requests = generate_requests(scenario, cluster, n_vms, interval, template)
    return simulate(cluster, arch, requests, calib, stages, seed, sigma, warmup, registry,
                    observers)


def run_experiment(cluster: ClusterSpec, arch, scenario, calib: Calibration = Calibration(),
                   stages: Optional[StageDurations] = None, seed: int = 0, runs: int = 3,
                   sigma: float = 0.0, warmup: str = "full", n_vms: int = DEFAULT_N_VMS,
                   interval: float = DEFAULT_INTERVAL, template: Optional[str] = None,
                   parallel: bool = False, keep_records: bool = False) -> ExperimentResult:
    """Run ``runs`` simulations with seeds seed, seed+1, ... and collect metrics."""
    arch = ArchitectureKind.parse(arch)
    scenario = ScenarioKind.parse(scenario)
    if runs < 1:
        raise ValueError("runs must be >= 1")

    def one(k):
        return run_once(cluster, arch, scenario, calib, stages, seed + k, sigma, warmup,
                        n_vms, interval, template)

    if parallel and runs > 1:
        with ThreadPoolExecutor(max_workers=runs) as pool:
            records = list(pool.map(one, range(runs)))
    else:
        records = [one(k) for k in range(runs)]
    metrics = [compute_metrics(rec.trace, [r.id for r in rec.requests]) for rec in records]
    return ExperimentResult(arch, scenario, metrics, records if keep_records else [])
