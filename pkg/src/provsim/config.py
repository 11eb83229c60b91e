"""INI run configuration: parsing, defaults and round-trip dumping.

Sections: [cluster] [storage] [templates] [stages] [calibration] [run].
Every key is optional; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from typing import Optional

from .architectures import ArchitectureKind, Calibration
from .harness import DEFAULT_INTERVAL, DEFAULT_N_VMS, ScenarioKind
from .lifecycle import TIMED_STAGES, StageDurations
from .model import (GB, GiB, MiB, ClusterSpec, ImageTemplate, MacPool, NodeSpec, OsFamily,
                    SharedStorageSpec, ValidationError, validate_cluster)

WARMUP_MODES = ("none", "full")


class ConfigError(ValueError):
    pass


# Calibrated against the anchor totals in calibration.DEFAULT_TARGETS.
DEFAULTS = {
    "cluster": {
        "nodes": 5,
        "node_prefix": "esxi",
        "disk_capacity_gb": 500.0,
        "ram_gib": 8.0,
        "nic_mibps": 117.0,
        "local_disk_mibps": 303.4,
        "nfs_client_mibps": 20.0,
        "max_concurrent_receives": 1,
        "mac_pool_size": 20,
        "hostname_prefix": "vmtest",
    },
    "storage": {
        "enabled": True,
        "disk_mibps": 68.0,
        "nic_mibps": 117.0,
        "capacity_gb": 500.0,
    },
    "calibration": {
        "ssh_stream_mibps": 7.0,
        "colocation_factor": 0.95,
        "register_s": 120.0,
        "local_register_s": 15.0,
        "boot_io_mib": 5627.0,
    },
    "run": {
        "arch": "arch4",
        "scenario": "sb",
        "template": "",
        "n_vms": DEFAULT_N_VMS,
        "interval_s": DEFAULT_INTERVAL,
        "seed": 0,
        "runs": 3,
        "jitter": 0.0,
        "warmup": "full",
    },
}
DEFAULT_TEMPLATES = {"winxp": (8192.0, OsFamily.WINDOWS_XP, 1)}
STAGE_KEYS = {s.value.lower(): s for s in TIMED_STAGES}


@dataclass
class RunConfig:
    cluster: ClusterSpec
    arch: ArchitectureKind = ArchitectureKind.ARCH4
    scenario: ScenarioKind = ScenarioKind.SB
    stages: StageDurations = field(default_factory=StageDurations)
    calib: Calibration = field(default_factory=Calibration)
    seed: int = 0
    runs: int = 3
    jitter: float = 0.0
    warmup: str = "full"
    n_vms: int = DEFAULT_N_VMS
    interval: float = DEFAULT_INTERVAL
    template: str = ""
    out: Optional[str] = field(default=None, compare=False)
    trace: Optional[str] = field(default=None, compare=False)
    # homogeneous-node settings kept for dumping
    node_prefix: str = "esxi"
    hostname_prefix: str = "vmtest"

    def with_arch(self, arch) -> "RunConfig":
        arch = ArchitectureKind.parse(arch)
        storage = self.cluster.storage
        if storage is not None:
            storage = replace(storage, colocated_with_frontend=arch is ArchitectureKind.ARCH2)
        return replace(self, arch=arch, cluster=replace(self.cluster, storage=storage))

    def with_scenario(self, scenario) -> "RunConfig":
        return replace(self, scenario=ScenarioKind.parse(scenario))

    @property
    def template_id(self) -> str:
        return self.template or self.cluster.templates[0].id


def _as_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return _as_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _parse_template(tid: str, raw: str) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) not in (2, 3):
        raise ConfigError(f"[templates] {tid}: expected 'size_mib, os_family[, version]'")
    try:
        size = float(parts[0])
        os_family = OsFamily.parse(parts[1])
        version = int(parts[2]) if len(parts) == 3 else 1
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"[templates] {tid}: {exc}") from None
    return size, os_family, version


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    known = set(DEFAULTS) | {"templates", "stages"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")

    values = {s: dict(d) for s, d in DEFAULTS.items()}
    for section, defaults in DEFAULTS.items():
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[section][key] = _convert(section, key, raw, defaults[key])

    templates = dict(DEFAULT_TEMPLATES)
    if parser.has_section("templates") and parser.items("templates"):
        templates = {tid: _parse_template(tid, raw) for tid, raw in parser.items("templates")}

    stages = StageDurations()
    if parser.has_section("stages"):
        for key, raw in parser.items("stages"):
            name, _, os_name = key.partition(".")
            if name.lower() not in STAGE_KEYS:
                raise ConfigError(f"unknown key {key!r} in [stages]")
            stage = STAGE_KEYS[name.lower()]
            seconds = _convert("stages", key, raw, 0.0)
            if seconds < 0:
                raise ConfigError(f"[stages] {key}: duration must be >= 0")
            if os_name:
                try:
                    stages.per_os[(stage, OsFamily.parse(os_name))] = seconds
                except ValidationError as exc:
                    raise ConfigError(f"[stages] {key}: {exc}") from None
            else:
                stages.base[stage] = seconds

    return _resolve(values, templates, stages)


def _resolve(values: dict, templates: dict, stages: StageDurations) -> RunConfig:
    c, s, k, r = values["cluster"], values["storage"], values["calibration"], values["run"]
    try:
        arch = ArchitectureKind.parse(r["arch"])
        scenario = ScenarioKind.parse(r["scenario"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if r["warmup"] not in WARMUP_MODES:
        raise ConfigError(f"[run] warmup must be one of {WARMUP_MODES}")
    if r["runs"] < 1:
        raise ConfigError("[run] runs must be >= 1")
    if r["n_vms"] < 1:
        raise ConfigError("[run] n_vms must be >= 1")
    if r["jitter"] < 0 or r["interval_s"] < 0:
        raise ConfigError("[run] jitter and interval_s must be >= 0")
    if c["mac_pool_size"] < 1:
        raise ConfigError("mac_pool must not be empty ([cluster] mac_pool_size)")
    if c["nodes"] < 0:
        raise ConfigError("[cluster] nodes must be >= 0")

    nodes = [
        NodeSpec(
            id=f"{c['node_prefix']}{i + 1}",
            disk_capacity=round(c["disk_capacity_gb"] * GB),
            nic_bandwidth=c["nic_mibps"] * MiB,
            max_concurrent_receives=c["max_concurrent_receives"],
            local_disk_rate=c["local_disk_mibps"] * MiB,
            nfs_client_rate=c["nfs_client_mibps"] * MiB,
            ram=round(c["ram_gib"] * GiB),
        )
        for i in range(c["nodes"])
    ]
    storage = None
    if s["enabled"]:
        storage = SharedStorageSpec(
            disk_rate=s["disk_mibps"] * MiB,
            nic_bandwidth=s["nic_mibps"] * MiB,
            colocated_with_frontend=arch is ArchitectureKind.ARCH2,
            disk_capacity=round(s["capacity_gb"] * GB),
        )
    cluster = ClusterSpec(
        nodes=nodes,
        storage=storage,
        mac_pool=MacPool.generate(c["mac_pool_size"], c["hostname_prefix"]),
        templates=[ImageTemplate(tid, round(size * MiB), os_family, version)
                   for tid, (size, os_family, version) in templates.items()],
    )
    try:
        validate_cluster(cluster)
        calib = Calibration(
            ssh_stream_rate=k["ssh_stream_mibps"] * MiB,
            colocation_factor=k["colocation_factor"],
            register_s=k["register_s"],
            local_register_s=k["local_register_s"],
            boot_io_bytes=k["boot_io_mib"] * MiB,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if r["template"] and r["template"] not in templates:
        raise ConfigError(f"[run] template {r['template']!r} is not declared in [templates]")
    if arch.central and storage is None:
        raise ConfigError(f"{arch.value} requires [storage] enabled = true")
    return RunConfig(
        cluster=cluster, arch=arch, scenario=scenario, stages=stages, calib=calib,
        seed=r["seed"], runs=r["runs"], jitter=r["jitter"], warmup=r["warmup"],
        n_vms=r["n_vms"], interval=r["interval_s"], template=r["template"],
        node_prefix=c["node_prefix"], hostname_prefix=c["hostname_prefix"],
    )


def default_config() -> RunConfig:
    return parse_config("")


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return default_config()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    """Render ``cfg`` so that parse_config(dump_config(cfg)) == cfg."""
    cl = cfg.cluster
    node = cl.nodes[0] if cl.nodes else NodeSpec("x")
    sections = {
        "cluster": {
            "nodes": len(cl.nodes),
            "node_prefix": cfg.node_prefix,
            "disk_capacity_gb": node.disk_capacity / GB,
            "ram_gib": node.ram / GiB,
            "nic_mibps": node.nic_bandwidth / MiB,
            "local_disk_mibps": node.local_disk_rate / MiB,
            "nfs_client_mibps": node.nfs_client_rate / MiB,
            "max_concurrent_receives": node.max_concurrent_receives,
            "mac_pool_size": len(cl.mac_pool),
            "hostname_prefix": cfg.hostname_prefix,
        },
        "storage": {"enabled": cl.storage is not None},
        "templates": {t.id: f"{t.size / MiB!r}, {t.os_family.value}, {t.version}"
                      for t in cl.templates},
        "stages": {},
        "calibration": {
            "ssh_stream_mibps": cfg.calib.ssh_stream_rate / MiB,
            "colocation_factor": cfg.calib.colocation_factor,
            "register_s": cfg.calib.register_s,
            "local_register_s": cfg.calib.local_register_s,
            "boot_io_mib": cfg.calib.boot_io_bytes / MiB,
        },
        "run": {
            "arch": cfg.arch.value,
            "scenario": cfg.scenario.value,
            "template": cfg.template,
            "n_vms": cfg.n_vms,
            "interval_s": float(cfg.interval),
            "seed": cfg.seed,
            "runs": cfg.runs,
            "jitter": float(cfg.jitter),
            "warmup": cfg.warmup,
        },
    }
    if cl.storage is not None:
        sections["storage"].update({
            "disk_mibps": cl.storage.disk_rate / MiB,
            "nic_mibps": cl.storage.nic_bandwidth / MiB,
            "capacity_gb": cl.storage.disk_capacity / GB,
        })
    for stage, seconds in cfg.stages.base.items():
        sections["stages"][stage.value.lower()] = float(seconds)
    for (stage, os_family), seconds in sorted(cfg.stages.per_os.items(),
                                              key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        sections["stages"][f"{stage.value.lower()}.{os_family.value.lower()}"] = float(seconds)

    buf = io.StringIO()
    for name, items in sections.items():
        buf.write(f"[{name}]\n")
        for key, value in items.items():
            buf.write(f"{key} = {_fmt(value)}\n")
        buf.write("\n")
    return buf.getvalue()

