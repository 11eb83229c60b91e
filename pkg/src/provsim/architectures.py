"""The four deployment architectures as provisioning plans.

arch1  central NFS storage on its own server, front end elsewhere
arch2  central NFS storage sharing the front-end server
arch3  per-request SSH copy of the template to the target node
arch4  templates pre-cached on every node by the image manager

For arch1/arch2 the running VM's disk lives on the storage server, so its
boot I/O is one transfer crossing both the node's NFS client and the storage
NIC.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .lifecycle import LifecycleError, LifecycleState, shut_down
from .model import MiB, ClusterSpec, MacPool, PlacementError, VmInstance, VmRequest

STORAGE = "storage"


class ArchitectureKind(str, enum.Enum):
    ARCH1 = "arch1"
    ARCH2 = "arch2"
    ARCH3 = "arch3"
    ARCH4 = "arch4"

    @classmethod
    def parse(cls, text) -> "ArchitectureKind":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"unknown architecture {text!r} (expected arch1..arch4)") from None

    @property
    def central(self) -> bool:
        return self in (ArchitectureKind.ARCH1, ArchitectureKind.ARCH2)


@dataclass(frozen=True)
class Calibration:
    """Model parameters that are not hardware capacities."""

    ssh_stream_rate: float = 7 * MiB
    colocation_factor: float = 0.95
    register_s: float = 120.0
    local_register_s: float = 15.0
    boot_io_bytes: float = 1024 * MiB

    def __post_init__(self):
        if not self.ssh_stream_rate > 0:
            raise ValueError("ssh_stream_rate must be positive")
        if not 0 < self.colocation_factor <= 1:
            raise ValueError("colocation_factor must be in (0, 1]")
        for name in ("register_s", "local_register_s", "boot_io_bytes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def storage_disk_link() -> str:
    return f"{STORAGE}:disk"


def storage_nic_link() -> str:
    return f"{STORAGE}:nic"


def node_nic_link(node: str) -> str:
    return f"{node}:nic"


def node_disk_link(node: str) -> str:
    return f"{node}:disk"


def node_nfs_link(node: str) -> str:
    return f"{node}:nfs"


def link_capacities(arch: ArchitectureKind, cluster: ClusterSpec,
                    calib: Calibration) -> dict[str, float]:
    caps = {}
    for node in cluster.nodes:
        caps[node_nic_link(node.id)] = node.nic_bandwidth
        caps[node_disk_link(node.id)] = node.local_disk_rate
        caps[node_nfs_link(node.id)] = node.nfs_client_rate
    if cluster.storage is not None:
        factor = calib.colocation_factor if arch is ArchitectureKind.ARCH2 else 1.0
        caps[storage_disk_link()] = cluster.storage.disk_rate * factor
        caps[storage_nic_link()] = cluster.storage.nic_bandwidth * factor
    return caps


@dataclass(frozen=True)
class Stage:
    label: str
    kind: str  # transfer | timed | acquire | handoff
    nbytes: float = 0.0
    link: object = None  # link id, or a tuple of ids for a transfer crossing several
    cap: float = math.inf
    duration: float = 0.0
    reserve: Optional[tuple] = None  # (location, bytes) held until shutdown
    ssh_slot: Optional[str] = None  # node whose SSH receive slot this copy needs


HANDOFF = Stage("contextualization-handoff", "handoff")


@dataclass(frozen=True)
class ProvisionPlan:
    arch: ArchitectureKind
    vm: str
    node: str
    template: str
    stages: tuple

    @property
    def transfer_links(self) -> list[str]:
        return [s.link for s in self.stages if s.kind == "transfer"]


class ClusterState:
    """Mutable per-run view of the cluster: disk usage, MAC pool, caches."""

    def __init__(self, cluster: ClusterSpec, calib: Calibration = Calibration(), images=None):
        self.cluster = cluster
        self.calib = calib
        self.mac_pool: MacPool = cluster.mac_pool.copy()
        self.capacity = {n.id: n.disk_capacity for n in cluster.nodes}
        if cluster.storage is not None:
            self.capacity[STORAGE] = cluster.storage.disk_capacity
        self.used = {loc: 0.0 for loc in self.capacity}
        self.holdings: dict = {}  # owner -> list of (location, bytes)
        self.images = images

    def free_bytes(self, location: str) -> float:
        return self.capacity[location] - self.used[location]

    def reserve(self, owner, location: str, nbytes: float) -> None:
        if location not in self.capacity:
            raise PlacementError(f"unknown location {location!r}")
        if nbytes > self.free_bytes(location):
            raise PlacementError(
                f"{location}: not enough free disk for {nbytes:.0f} bytes "
                f"({self.free_bytes(location):.0f} free)")
        self.used[location] += nbytes
        self.holdings.setdefault(owner, []).append((location, nbytes))

    def release(self, owner) -> list:
        freed = self.holdings.pop(owner, [])
        for location, nbytes in freed:
            self.used[location] -= nbytes
        return freed

    def check_disk(self) -> None:
        for loc, used in self.used.items():
            assert used <= self.capacity[loc] + 1e-6, f"disk overcommitted on {loc}"


def plan_provision(arch: ArchitectureKind, req: VmRequest, state: ClusterState) -> ProvisionPlan:
    arch = ArchitectureKind.parse(arch)
    cluster, calib = state.cluster, state.calib
    node = req.target_node
    if node not in state.capacity or node == STORAGE:
        raise PlacementError(f"request {req.id}: unknown target node {node!r}")
    template = cluster.template(req.template)
    size = float(template.size)

    if arch.central:
        if cluster.storage is None:
            raise PlacementError(f"{arch.value} needs shared storage")
        if size > state.free_bytes(STORAGE):
            raise PlacementError(f"request {req.id}: shared storage lacks {size:.0f} free bytes")
        stages = (
            Stage("clone-on-central", "transfer", size, storage_disk_link(),
                  reserve=(STORAGE, size)),
            Stage("register-with-node", "timed", duration=calib.register_s),
            Stage("boot-io-over-nfs", "transfer", calib.boot_io_bytes,
                  (node_nfs_link(node), storage_nic_link())),
            HANDOFF,
        )
    elif arch is ArchitectureKind.ARCH3:
        if size > state.free_bytes(node):
            raise PlacementError(f"request {req.id}: node {node} lacks {size:.0f} free bytes")
        stages = (
            Stage("ssh-copy", "transfer", size, node_nic_link(node), cap=calib.ssh_stream_rate,
                  reserve=(node, size), ssh_slot=node),
            Stage("local-register", "timed", duration=calib.local_register_s),
            HANDOFF,
        )
    elif arch is ArchitectureKind.ARCH4:
        cached = state.images is not None and state.images.is_cached(node, template.id)
        held = state.images is not None and state.images.holds_bytes(node, template.id)
        needed = size if held else 2 * size
        if needed > state.free_bytes(node):
            raise PlacementError(f"request {req.id}: node {node} lacks {needed:.0f} free bytes")
        stages = (
            Stage("acquire-cached-image", "acquire", 0.0 if cached else size,
                  node_nic_link(node)),
            Stage("local-clone", "transfer", size, node_disk_link(node), reserve=(node, size)),
            HANDOFF,
        )
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown architecture {arch!r}")
    return ProvisionPlan(arch, req.id, node, template.id, stages)


def on_shutdown(arch: ArchitectureKind, vm: VmInstance, state: ClusterState,
                now: Optional[float] = None) -> list:
    """Free the VM's image bytes and its MAC; returns the cleanup actions.

    Cached templates (arch4) are owned by the image manager and stay resident.
    """
    if vm.state is not LifecycleState.RUNNING:
        raise LifecycleError(
            f"vm {vm.id}: shutdown requested in state {getattr(vm.state, 'value', vm.state)}")
    actions = [("free", loc, nbytes) for loc, nbytes in state.release(vm.id)]
    if vm.mac is not None:
        state.mac_pool.release(vm.mac)
        actions.append(("release-mac", vm.mac))
    if now is None:
        now = max(vm.stage_timestamps.values(), default=0.0)
    shut_down(vm, now)
    return actions
