"""One simulated provisioning run: requests in, lifecycle trace out."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .architectures import (ArchitectureKind, Calibration, ClusterState, ProvisionPlan, Stage,
                            link_capacities, on_shutdown, plan_provision)
from .engine import DEFAULT_WATCHDOG, Engine, EventKind, TraceRecord, TransferJob
from .images import ImageManager
from .lifecycle import (LifecycleState, StageDurations, advance_lifecycle, enter, fail, jitter)
from .model import (ClusterSpec, MacPoolExhausted, PlacementError, UnknownMacError, VmInstance,
                    VmRequest)


@dataclass
class RunRecord:
    arch: ArchitectureKind
    requests: list
    instances: dict
    trace: list
    clock: float
    state: ClusterState
    images: Optional[ImageManager] = None


@dataclass
class _Progress:
    vm: VmInstance
    plan: ProvisionPlan
    index: int = 0


class Provisioner:
    """Drives VM requests through plan stages and the boot lifecycle."""

    def __init__(self, cluster: ClusterSpec, arch, calib: Calibration = Calibration(),
                 stages: Optional[StageDurations] = None, seed: int = 0, sigma: float = 0.0,
                 warmup: str = "full", registry: Optional[dict] = None,
                 watchdog: int = DEFAULT_WATCHDOG):
        self.cluster = cluster
        self.arch = ArchitectureKind.parse(arch)
        self.calib = calib
        self.stages = stages or StageDurations()
        self.sigma = sigma
        self.engine = Engine(seed=seed, watchdog=watchdog)
        self.state = ClusterState(cluster, calib)
        # hostname lookups go through this mapping; None means the MAC pool itself
        self.registry = registry
        for link_id, cap in link_capacities(self.arch, cluster, calib).items():
            self.engine.add_link(link_id, cap)
        self.images = None
        if self.arch is ArchitectureKind.ARCH4:
            self.images = ImageManager(self.engine, self.state)
            for template in cluster.templates:
                if warmup == "full":
                    self.images.warm(template, cluster.node_ids)
                elif warmup == "none":
                    self.images.register_template(template, cluster.node_ids)
                else:
                    raise ValueError(f"unknown warmup mode {warmup!r}")
        self.instances: dict[str, VmInstance] = {}
        self.requests: list[VmRequest] = []
        self._mac_waiters: deque = deque()
        self._ssh_active: dict[str, int] = {n.id: 0 for n in cluster.nodes}
        self._ssh_queue: dict[str, deque] = {n.id: deque() for n in cluster.nodes}

    # -- helpers ---------------------------------------------------------

    def _os(self, vm: VmInstance):
        return self.cluster.template(vm.request.template).os_family

    def _transition(self, vm, prev, nxt):
        self.engine.record(EventKind.STAGE_COMPLETE, vm.id, vm.node,
                           f"{prev.value}->{nxt.value}")

    def _timed(self, vm, seconds, action, label):
        self.engine.schedule_in(seconds, EventKind.STAGE_COMPLETE, lambda ev: action(),
                                vm=vm.id, stage=label)

    # -- arrivals and MACs -----------------------------------------------

    def submit(self, req: VmRequest) -> None:
        if req.target_node not in self._ssh_active:
            raise PlacementError(f"request {req.id}: unknown target node {req.target_node!r}")
        self.requests.append(req)
        self.engine.schedule_at(req.arrival_time, EventKind.REQUEST_ARRIVAL,
                                lambda ev, r=req: self._arrive(r), vm=req.id)

    def _arrive(self, req: VmRequest) -> None:
        vm = VmInstance(req, req.target_node)
        self.instances[req.id] = vm
        enter(vm, LifecycleState.QUEUED, self.engine.now)
        self.engine.record(EventKind.REQUEST_ARRIVAL, vm.id, vm.node, f"template={req.template}")
        if self._mac_waiters:
            self._mac_waiters.append(vm)
            return
        self._try_start(vm)

    def _try_start(self, vm: VmInstance) -> bool:
        try:
            vm.mac = self.state.mac_pool.allocate(vm.id)
        except MacPoolExhausted:
            self._mac_waiters.append(vm)
            return False
        self._start(vm)
        return True

    def _release_mac(self, vm: VmInstance) -> None:
        if vm.mac is None:
            return
        self.state.mac_pool.release(vm.mac)
        while self._mac_waiters:
            if not self._try_start(self._mac_waiters.popleft()):
                break

    # -- provisioning plan -----------------------------------------------

    def _start(self, vm: VmInstance) -> None:
        now = self.engine.now
        advance_lifecycle(vm, LifecycleState.QUEUED, self._os(vm), now)
        self._transition(vm, LifecycleState.QUEUED, LifecycleState.PROVISIONING)
        try:
            plan = plan_provision(self.arch, vm.request, self.state)
            for stage in plan.stages:
                if stage.reserve is not None:
                    location, nbytes = stage.reserve
                    self.state.reserve(vm.id, location, nbytes)
        except PlacementError as exc:
            self.state.release(vm.id)
            self._fail(vm, f"placement: {exc}")
            return
        self._run_stage(_Progress(vm, plan))

    def _run_stage(self, prog: _Progress) -> None:
        vm, stage = prog.vm, prog.plan.stages[prog.index]
        if stage.kind == "timed":
            seconds = stage.duration * jitter(self.engine.rng, self.sigma)
            self._timed(vm, seconds, lambda: self._stage_done(prog), stage.label)
        elif stage.kind == "transfer":
            if stage.ssh_slot is not None:
                node = stage.ssh_slot
                if self._ssh_active[node] >= self.cluster.node(node).max_concurrent_receives:
                    self._ssh_queue[node].append(prog)
                    return
                self._ssh_active[node] += 1
            self._start_job(prog, stage)
        elif stage.kind == "acquire":
            try:
                self.images.acquire_image(vm.node, prog.plan.template,
                                          on_ready=lambda: self._stage_done(prog))
            except PlacementError as exc:
                self.state.release(vm.id)
                self._fail(vm, f"placement: {exc}")
        elif stage.kind == "handoff":
            self._handoff(vm)
        else:  # pragma: no cover
            raise ValueError(stage.kind)

    def _start_job(self, prog: _Progress, stage: Stage) -> None:
        vm = prog.vm
        job = TransferJob(id=f"{stage.label}:{vm.id}", total_bytes=stage.nbytes,
                          per_job_cap=stage.cap, vm=vm.id, node=vm.node,
                          on_complete=lambda job: self._job_done(prog, stage))
        self.engine.start_transfer(stage.link, job)

    def _job_done(self, prog: _Progress, stage: Stage) -> None:
        if stage.ssh_slot is not None:
            node = stage.ssh_slot
            self._ssh_active[node] -= 1
            if self._ssh_queue[node]:
                nxt = self._ssh_queue[node].popleft()
                self._ssh_active[node] += 1
                self._start_job(nxt, nxt.plan.stages[nxt.index])
        self._stage_done(prog)

    def _stage_done(self, prog: _Progress) -> None:
        prog.index += 1
        self._run_stage(prog)

    # -- contextualization -----------------------------------------------

    def _handoff(self, vm: VmInstance) -> None:
        self._advance(vm, LifecycleState.PROVISIONING)

    def _advance(self, vm: VmInstance, completed: LifecycleState) -> None:
        if completed is LifecycleState.MAC_LOOKUP:
            try:
                vm.hostname = self._lookup(vm.mac)
            except UnknownMacError as exc:
                self._fail(vm, f"hostname lookup: {exc}")
                return
        nxt, duration = advance_lifecycle(vm, completed, self._os(vm), self.engine.now,
                                          self.stages, self.engine.rng, self.sigma)
        self._transition(vm, completed, nxt)
        if duration is not None:
            self._timed(vm, duration, lambda: self._advance(vm, nxt), nxt.value)

    def _lookup(self, mac: str) -> str:
        if self.registry is None:
            return self.state.mac_pool.lookup(mac)
        try:
            return self.registry[mac]
        except KeyError:
            raise UnknownMacError(f"mac {mac} is not registered") from None

    def _fail(self, vm: VmInstance, reason: str) -> None:
        prev = vm.state
        fail(vm, self.engine.now, reason)
        self.engine.record(EventKind.STAGE_COMPLETE, vm.id, vm.node,
                           f"{prev.value}->Failed: {reason}")
        self.state.release(vm.id)
        self._release_mac(vm)

    def shutdown(self, vm_id: str) -> list:
        vm = self.instances[vm_id]
        actions = on_shutdown(self.arch, vm, self.state, self.engine.now)
        self.engine.record(EventKind.STAGE_COMPLETE, vm.id, vm.node, "Running->ShutDown")
        while self._mac_waiters:
            if not self._try_start(self._mac_waiters.popleft()):
                break
        return actions

    def run(self) -> RunRecord:
        clock, trace = self.engine.run_until_idle()
        return RunRecord(self.arch, list(self.requests), self.instances, trace, clock,
                         self.state, self.images)


def simulate(cluster: ClusterSpec, arch, requests, calib: Calibration = Calibration(),
             stages: Optional[StageDurations] = None, seed: int = 0, sigma: float = 0.0,
             warmup: str = "full", registry: Optional[dict] = None,
             observers: Optional[list[Callable]] = None,
             watchdog: int = DEFAULT_WATCHDOG) -> RunRecord:
    prov = Provisioner(cluster, arch, calib, stages, seed, sigma, warmup, registry, watchdog)
    for observer in observers or ():
        prov.engine.observers.append(lambda eng, o=observer: o(prov))
    for req in requests:
        prov.submit(req)
    return prov.run()


__all__ = ["Provisioner", "RunRecord", "TraceRecord", "simulate"]
