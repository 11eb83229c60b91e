"""Glance-like image manager that keeps a template copy on every node.

Each (node, template) pair has one cache entry moving Absent -> Syncing ->
Cached.  Sync transfers are ordinary fair-share jobs on the node's receive
link, so they compete with any foreground traffic there.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .architectures import ClusterState, node_nic_link
from .engine import Engine, EventKind, TransferJob
from .model import ImageTemplate, PlacementError

log = logging.getLogger(__name__)


class CacheStatus(str, enum.Enum):
    ABSENT = "Absent"
    SYNCING = "Syncing"
    CACHED = "Cached"


class VersionRegression(ValueError):
    pass


@dataclass
class CacheEntry:
    node: str
    template: str
    version: int = 0
    status: CacheStatus = CacheStatus.ABSENT
    job: Optional[TransferJob] = None
    waiters: list = field(default_factory=list)

    @property
    def progress(self) -> float:
        return self.job.transferred_bytes if self.job is not None else 0.0


class ImageManager:
    def __init__(self, engine: Engine, state: ClusterState):
        self.engine = engine
        self.state = state
        self.templates: dict[str, ImageTemplate] = {}
        self.nodes: dict[str, list[str]] = {}
        self.entries: dict[tuple, CacheEntry] = {}
        self.warnings: list[str] = []
        self.syncs_started = 0
        state.images = self

    def entry(self, node: str, template_id: str) -> CacheEntry:
        key = (node, template_id)
        if key not in self.entries:
            self.entries[key] = CacheEntry(node, template_id)
        return self.entries[key]

    def is_cached(self, node: str, template_id: str) -> bool:
        e = self.entries.get((node, template_id))
        return e is not None and e.status is CacheStatus.CACHED

    def holds_bytes(self, node: str, template_id: str) -> bool:
        e = self.entries.get((node, template_id))
        return e is not None and e.status is not CacheStatus.ABSENT

    def in_flight(self) -> list[tuple]:
        return [k for k, e in self.entries.items() if e.status is CacheStatus.SYNCING]

    def _owner(self, node, template_id):
        return ("cache", node, template_id)

    def _start_sync(self, entry: CacheEntry) -> Optional[TransferJob]:
        template = self.templates[entry.template]
        try:
            self.state.reserve(self._owner(entry.node, entry.template), entry.node, template.size)
        except PlacementError as exc:
            msg = f"sync of {entry.template} to {entry.node} skipped: {exc}"
            self.warnings.append(msg)
            self.engine.record("Warning", node=entry.node, detail=msg)
            log.warning(msg)
            return None
        version = template.version
        self.syncs_started += 1
        job = TransferJob(
            id=f"sync:{entry.template}:v{version}:{entry.node}",
            total_bytes=float(template.size),
            kind=EventKind.SYNC_COMPLETE,
            node=entry.node,
            on_complete=lambda job, e=entry, v=version: self._sync_done(e, v),
        )
        entry.status = CacheStatus.SYNCING
        entry.job = job
        self.engine.start_transfer(node_nic_link(entry.node), job)
        return job

    def _sync_done(self, entry: CacheEntry, version: int) -> None:
        entry.status = CacheStatus.CACHED
        entry.version = version
        entry.job = None
        waiters, entry.waiters = entry.waiters, []
        for callback in waiters:
            callback()

    def register_template(self, template: ImageTemplate, nodes) -> list[TransferJob]:
        """Push ``template`` to every node in the background."""
        nodes = list(nodes)
        self.templates[template.id] = ImageTemplate(
            template.id, template.size, template.os_family, template.version)
        self.nodes[template.id] = nodes
        jobs = []
        for node in nodes:
            entry = self.entry(node, template.id)
            if entry.status is CacheStatus.ABSENT:
                job = self._start_sync(entry)
                if job is not None:
                    jobs.append(job)
        return jobs

    def warm(self, template: ImageTemplate, nodes) -> None:
        """Mark ``template`` cached on ``nodes`` as if synced before t=0."""
        nodes = list(nodes)
        self.templates[template.id] = ImageTemplate(
            template.id, template.size, template.os_family, template.version)
        self.nodes[template.id] = nodes
        for node in nodes:
            entry = self.entry(node, template.id)
            try:
                self.state.reserve(self._owner(node, template.id), node, template.size)
            except PlacementError as exc:
                self.warnings.append(f"warmup of {template.id} on {node} skipped: {exc}")
                continue
            entry.status = CacheStatus.CACHED
            entry.version = template.version

    def handle_template_update(self, template_id: str, new_version: int) -> list[TransferJob]:
        if template_id not in self.templates:
            raise KeyError(f"unknown template {template_id!r}")
        template = self.templates[template_id]
        if new_version != template.version + 1:
            raise VersionRegression(
                f"template {template_id}: update to v{new_version} from v{template.version}")
        template.version = new_version
        jobs = []
        for node in self.nodes[template_id]:
            entry = self.entry(node, template_id)
            if entry.status is CacheStatus.SYNCING and entry.job is not None:
                self.engine.cancel_transfer(entry.job)
            entry.job = None
            self.state.release(self._owner(node, template_id))
            entry.status = CacheStatus.ABSENT
            job = self._start_sync(entry)
            if job is not None:
                jobs.append(job)
        return jobs

    def acquire_image(self, node: str, template_id: str,
                      on_ready: Optional[Callable[[], None]] = None) -> float:
        """Block the caller until the template is cached on ``node``.

        Returns the readiness instant assuming current link rates hold.
        ``on_ready`` runs immediately for a warm cache.
        """
        if template_id not in self.templates:
            raise KeyError(f"unknown template {template_id!r}")
        entry = self.entry(node, template_id)
        now = self.engine.now
        if entry.status is CacheStatus.CACHED:
            if on_ready is not None:
                on_ready()
            return now
        if entry.status is CacheStatus.ABSENT:
            if self._start_sync(entry) is None:
                raise PlacementError(f"node {node} has no room for template {template_id}")
        if on_ready is not None:
            entry.waiters.append(on_ready)
        return self.ready_time(node, template_id)

    def ready_time(self, node: str, template_id: str) -> float:
        entry = self.entry(node, template_id)
        now = self.engine.now
        if entry.status is CacheStatus.CACHED:
            return now
        if entry.job is None:
            return float("inf")
        job = entry.job
        if job.rate <= 0:
            return float("inf")
        return now + self.engine.remaining(job) / job.rate

