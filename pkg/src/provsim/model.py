"""Cluster, image, MAC-pool and VM request/instance types."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB
GB = 10**9

SCHEDULER_CHOSEN = "scheduler-chosen"


class ValidationError(ValueError):
    """A cluster or request violates a type invariant."""


class PlacementError(RuntimeError):
    """A node (or the shared storage) cannot hold the requested bytes."""


class MacPoolExhausted(RuntimeError):
    pass


class UnknownMacError(KeyError):
    pass


class OsFamily(str, enum.Enum):
    LINUX = "Linux"
    WINDOWS_XP = "WindowsXP"

    @classmethod
    def parse(cls, text: str) -> "OsFamily":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise ValidationError(f"unknown os family {text!r}")


@dataclass
class ImageTemplate:
    id: str
    size: int
    os_family: OsFamily = OsFamily.WINDOWS_XP
    version: int = 1

    def bump(self) -> int:
        self.version += 1
        return self.version


@dataclass(frozen=True)
class NodeSpec:
    id: str
    disk_capacity: int = 500 * GB
    nic_bandwidth: float = 117 * MiB
    max_concurrent_receives: int = 1
    local_disk_rate: float = 80 * MiB
    ram: int = 8 * GiB
    # throughput of the hypervisor's NFS client for VM disks held on shared storage
    nfs_client_rate: float = 20 * MiB


@dataclass(frozen=True)
class SharedStorageSpec:
    disk_rate: float = 35 * MiB
    nic_bandwidth: float = 117 * MiB
    colocated_with_frontend: bool = False
    disk_capacity: int = 500 * GB


@dataclass
class MacEntry:
    mac: str
    hostname: str
    allocated: bool = False
    vm: Optional[str] = None


class MacPool:
    """Pre-registered MAC addresses with their network-database hostnames.

    Allocation always hands out the lowest-ordered free entry so traces are
    reproducible.
    """

    def __init__(self, entries):
        self.entries: list[MacEntry] = []
        seen_macs, seen_names = set(), set()
        for item in entries:
            entry = item if isinstance(item, MacEntry) else MacEntry(*item)
            mac = normalize_mac(entry.mac)
            if mac in seen_macs:
                raise ValidationError(f"duplicate mac address {mac}")
            if entry.hostname in seen_names:
                raise ValidationError(f"duplicate hostname {entry.hostname}")
            seen_macs.add(mac)
            seen_names.add(entry.hostname)
            self.entries.append(MacEntry(mac, entry.hostname, entry.allocated, entry.vm))
        self._by_mac = {e.mac: e for e in self.entries}

    @classmethod
    def generate(cls, size: int, hostname_prefix: str = "vmtest",
                 oui: str = "02:16:3e") -> "MacPool":
        entries = []
        for i in range(size):
            tail = i + 1
            mac = f"{oui}:{(tail >> 16) & 0xFF:02x}:{(tail >> 8) & 0xFF:02x}:{tail & 0xFF:02x}"
            entries.append((mac, f"{hostname_prefix}{i + 1:02d}"))
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MacPool):
            return NotImplemented
        return self.entries == other.entries

    @property
    def allocated_count(self) -> int:
        return sum(e.allocated for e in self.entries)

    @property
    def free_count(self) -> int:
        return len(self.entries) - self.allocated_count

    def allocate(self, vm: str) -> str:
        for entry in self.entries:
            if not entry.allocated:
                entry.allocated = True
                entry.vm = vm
                return entry.mac
        raise MacPoolExhausted("no registered MAC available")

    def release(self, mac: str) -> None:
        entry = self._by_mac.get(normalize_mac(mac))
        if entry is None:
            raise UnknownMacError(mac)
        if not entry.allocated:
            raise ValueError(f"mac {mac} is not allocated")
        entry.allocated = False
        entry.vm = None

    def lookup(self, mac: str) -> str:
        entry = self._by_mac.get(normalize_mac(mac))
        if entry is None:
            raise UnknownMacError(f"mac {mac} is not registered")
        return entry.hostname

    def bindings(self) -> dict[str, str]:
        """Live mac -> vm bindings."""
        return {e.mac: e.vm for e in self.entries if e.allocated}

    def copy(self) -> "MacPool":
        return MacPool([MacEntry(e.mac, e.hostname, e.allocated, e.vm) for e in self.entries])


def normalize_mac(mac) -> str:
    if isinstance(mac, (bytes, bytearray)):
        if len(mac) != 6:
            raise ValidationError(f"mac must be 6 bytes, got {len(mac)}")
        return ":".join(f"{b:02x}" for b in mac)
    parts = str(mac).lower().replace("-", ":").split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise ValidationError(f"malformed mac address {mac!r}")
    try:
        [int(p, 16) for p in parts]
    except ValueError:
        raise ValidationError(f"malformed mac address {mac!r}") from None
    return ":".join(parts)


def allocate_mac(pool: MacPool, vm: str) -> str:
    return pool.allocate(vm)


def lookup_hostname(pool: MacPool, mac: str) -> str:
    return pool.lookup(mac)


@dataclass(frozen=True)
class VmRequest:
    id: str
    template: str
    arrival_time: float = 0.0
    target_node: str = SCHEDULER_CHOSEN

    def __post_init__(self):
        if self.arrival_time < 0:
            raise ValidationError(f"request {self.id}: arrival_time must be >= 0")


@dataclass
class VmInstance:
    request: VmRequest
    node: str
    state: "object" = None  # LifecycleState, set by the lifecycle module
    mac: Optional[str] = None
    hostname: Optional[str] = None
    stage_timestamps: dict = field(default_factory=dict)
    path: list = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def id(self) -> str:
        return self.request.id


@dataclass
class ClusterSpec:
    nodes: list[NodeSpec]
    storage: Optional[SharedStorageSpec] = field(default_factory=SharedStorageSpec)
    mac_pool: MacPool = field(default_factory=lambda: MacPool.generate(20))
    templates: list[ImageTemplate] = field(
        default_factory=lambda: [ImageTemplate("winxp", 8 * GiB, OsFamily.WINDOWS_XP)])

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"unknown node {node_id!r}")

    def template(self, template_id: str) -> ImageTemplate:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise KeyError(f"unknown template {template_id!r}")

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]


def default_cluster(n_nodes: int = 5, mac_pool_size: int = 20) -> ClusterSpec:
    """Five HP DL380-class hosts: 8 GiB RAM, 500 GB disk, gigabit NIC."""
    return ClusterSpec(
        nodes=[NodeSpec(f"esxi{i + 1}") for i in range(n_nodes)],
        mac_pool=MacPool.generate(mac_pool_size),
    )


def validate_cluster(spec: ClusterSpec) -> ClusterSpec:
    if not spec.nodes:
        raise ValidationError("cluster must contain at least one node")
    seen = set()
    for node in spec.nodes:
        if node.id in seen:
            raise ValidationError(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        for name in ("disk_capacity", "nic_bandwidth", "max_concurrent_receives",
                     "local_disk_rate", "ram", "nfs_client_rate"):
            if not getattr(node, name) > 0:
                raise ValidationError(f"node {node.id}: {name} must be positive")
    if spec.storage is not None:
        for name in ("disk_rate", "nic_bandwidth", "disk_capacity"):
            if not getattr(spec.storage, name) > 0:
                raise ValidationError(f"storage: {name} must be positive")
    if spec.mac_pool is None or len(spec.mac_pool) == 0:
        raise ValidationError("mac_pool must not be empty")
    if not spec.templates:
        raise ValidationError("templates: at least one template is required")
    tids = set()
    for t in spec.templates:
        if t.id in tids:
            raise ValidationError(f"duplicate template id {t.id!r}")
        tids.add(t.id)
        if not t.size > 0:
            raise ValidationError(f"template {t.id}: size must be positive")
        if t.version < 1:
            raise ValidationError(f"template {t.id}: version must be >= 1")
    return spec
