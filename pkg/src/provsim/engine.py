"""Deterministic discrete-event engine with fair-share transfer links.

Rates on a link change only at event boundaries, so every completion time is
computed in closed form from the piecewise-constant rates; nothing is
time-stepped.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

INF = math.inf
DEFAULT_WATCHDOG = 10**7


class SimulationError(RuntimeError):
    """Internal logic error; indicates a simulator bug, not bad input."""


class SimulationDivergence(SimulationError):
    pass


class EventKind(str, enum.Enum):
    REQUEST_ARRIVAL = "RequestArrival"
    TRANSFER_COMPLETE = "TransferComplete"
    STAGE_COMPLETE = "StageComplete"
    SYNC_COMPLETE = "SyncComplete"


@dataclass
class LifecycleEvent:
    time: float
    sequence: int
    kind: EventKind
    payload: dict = field(default_factory=dict)
    action: Optional[Callable[["LifecycleEvent"], None]] = None


class EventQueue:
    """Priority queue ordered by (time, sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0.0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: EventKind, payload=None, action=None) -> LifecycleEvent:
        if not time >= self.now:
            raise SimulationError(f"event at t={time} scheduled in the past (clock {self.now})")
        event = LifecycleEvent(time, next(self._seq), kind, payload or {}, action)
        heapq.heappush(self._heap, (event.time, event.sequence, event))
        return event

    def pop(self) -> LifecycleEvent:
        _, _, event = heapq.heappop(self._heap)
        self.now = event.time
        return event


def schedule(queue: EventQueue, event: LifecycleEvent) -> None:
    """Enqueue a pre-built event, keeping its kind/payload/action."""
    queue.schedule(event.time, event.kind, event.payload, event.action)


def fair_share(capacity: float, caps: list[float]) -> list[float]:
    """Equal split of ``capacity`` with per-job caps; residual goes to the rest.

    Water-filling: jobs whose cap is below the current equal share are pinned
    at their cap and the leftover is re-split among the others.
    """
    n = len(caps)
    rates = [0.0] * n
    order = sorted(range(n), key=lambda i: caps[i])
    left = capacity
    for pos, i in enumerate(order):
        share = left / (n - pos)
        if caps[i] <= share:
            rates[i] = caps[i]
            left -= caps[i]
        else:
            for j in order[pos:]:
                rates[j] = share
            break
    return rates


@dataclass(eq=False)
class TransferJob:
    id: str
    total_bytes: float
    per_job_cap: float = INF
    link: Optional[str] = None
    links: tuple = ()
    transferred_bytes: float = 0.0
    started_at: Optional[float] = None
    rate: float = 0.0
    kind: EventKind = EventKind.TRANSFER_COMPLETE
    vm: str = ""
    node: str = ""
    on_complete: Optional[Callable[["TransferJob"], None]] = None
    finished_at: Optional[float] = None

    @property
    def remaining(self) -> float:
        return max(self.total_bytes - self.transferred_bytes, 0.0)


class SharedLink:
    def __init__(self, id: str, capacity: float):
        if not capacity > 0:
            raise ValueError(f"link {id}: capacity must be positive")
        self.id = id
        self.capacity = capacity
        self.active_jobs: dict[str, TransferJob] = {}
        self.last_update = 0.0
        self.epoch = 0

    def advance(self, now: float) -> None:
        dt = now - self.last_update
        if dt > 0:
            for job in self.active_jobs.values():
                job.transferred_bytes = min(job.total_bytes, job.transferred_bytes + job.rate * dt)
        self.last_update = now

    def recompute(self) -> None:
        jobs = list(self.active_jobs.values())
        for job, rate in zip(jobs, fair_share(self.capacity, [j.per_job_cap for j in jobs])):
            job.rate = rate

    @property
    def utilization(self) -> float:
        return sum(j.rate for j in self.active_jobs.values())


def add_transfer(link: SharedLink, job: TransferJob, now: float = 0.0) -> None:
    """Join ``job`` to ``link`` at ``now`` and re-split the bandwidth."""
    if job.id in link.active_jobs:
        raise SimulationError(f"job {job.id} already active on {link.id}")
    link.advance(now)
    job.link = link.id
    job.links = (link.id,)
    if job.started_at is None:
        job.started_at = now
    link.active_jobs[job.id] = job
    link.recompute()
    link.epoch += 1


def next_completion(link: SharedLink, now: Optional[float] = None):
    """(job, absolute finish time) of the earliest finisher, or None."""
    if not link.active_jobs:
        return None
    now = link.last_update if now is None else now
    best, best_t = None, INF
    for job in link.active_jobs.values():
        if job.remaining <= 0:
            t = now
        elif job.rate > 0:
            t = now + job.remaining / job.rate
        else:
            continue
        if t < best_t:
            best, best_t = job, t
    if best is None:
        return None
    return best, best_t


class TraceRecord(NamedTuple):
    time: float
    kind: str
    vm: str
    node: str
    detail: str


def max_min_rates(jobs, capacities: dict) -> dict:
    """Progressive-filling max-min fair rates for jobs that may cross several links.

    All unfrozen jobs grow at the same pace until a link saturates or a job
    reaches its cap; saturated links freeze every job crossing them.  With
    single-link jobs this is exactly :func:`fair_share` per link.
    """
    rates = {j.id: 0.0 for j in jobs}
    left = dict(capacities)
    active = {j.id: j for j in jobs}
    while active:
        users: dict = {}
        for j in active.values():
            for link in j.links:
                users[link] = users.get(link, 0) + 1
        delta = min(left[link] / n for link, n in users.items())
        for j in active.values():
            delta = min(delta, j.per_job_cap - rates[j.id])
        delta = max(delta, 0.0)
        for j in active.values():
            rates[j.id] += delta
        for link, n in users.items():
            left[link] -= n * delta
        saturated = {link for link, n in users.items()
                     if left[link] <= 1e-12 * capacities[link]}
        for jid in [jid for jid, j in active.items()
                    if rates[jid] >= j.per_job_cap or saturated.intersection(j.links)]:
            del active[jid]
    return rates


class Engine:
    """Single-threaded event loop owning the clock, the links and the trace.

    Transfers may cross more than one link; rates are re-derived for all
    active jobs at every change, so one pending completion event suffices.
    """

    def __init__(self, seed: int = 0, watchdog: int = DEFAULT_WATCHDOG):
        self.queue = EventQueue()
        self.links: dict[str, SharedLink] = {}
        self.jobs: dict[str, TransferJob] = {}
        self.trace: list[TraceRecord] = []
        self.rng = random.Random(seed)
        self.watchdog = watchdog
        self.observers: list[Callable[["Engine"], None]] = []
        self.processed = 0
        self._epoch = 0
        self._last_update = 0.0

    @property
    def now(self) -> float:
        return self.queue.now

    def schedule_at(self, time, kind, action=None, **payload) -> LifecycleEvent:
        return self.queue.schedule(time, kind, payload, action)

    def schedule_in(self, delay, kind, action=None, **payload) -> LifecycleEvent:
        return self.queue.schedule(self.now + delay, kind, payload, action)

    def record(self, kind, vm="", node="", detail="") -> None:
        kind = kind.value if isinstance(kind, EventKind) else kind
        self.trace.append(TraceRecord(self.now, kind, vm, node, detail))

    def add_link(self, link_id: str, capacity: float) -> SharedLink:
        if link_id in self.links:
            raise SimulationError(f"duplicate link {link_id}")
        link = SharedLink(link_id, capacity)
        link.last_update = self.now
        self.links[link_id] = link
        return link

    def _advance(self) -> None:
        now = self.now
        dt = now - self._last_update
        if dt > 0:
            for job in self.jobs.values():
                job.transferred_bytes = min(job.total_bytes, job.transferred_bytes + job.rate * dt)
        self._last_update = now
        for link in self.links.values():
            link.last_update = now

    def remaining(self, job: TransferJob) -> float:
        """Bytes left on ``job`` at the current clock, without mutating state."""
        dt = self.now - self._last_update
        return max(job.remaining - job.rate * dt, 0.0)

    def _recompute(self) -> None:
        rates = max_min_rates(list(self.jobs.values()),
                              {lid: l.capacity for lid, l in self.links.items()})
        for job in self.jobs.values():
            job.rate = rates[job.id]
        self._epoch += 1
        for link in self.links.values():
            link.epoch = self._epoch
        best, best_t = None, INF
        for job in self.jobs.values():
            if job.remaining <= 0:
                t = self.now
            elif job.rate > 0:
                t = self.now + job.remaining / job.rate
            else:
                continue
            if t < best_t:
                best, best_t = job, t
        if best is not None:
            self.schedule_at(max(best_t, self.now), EventKind.TRANSFER_COMPLETE,
                             self._on_transfer_event, epoch=self._epoch, job=best.id)

    def start_transfer(self, links, job: TransferJob) -> TransferJob:
        """Start ``job`` across one link id or a sequence of link ids."""
        links = (links,) if isinstance(links, str) else tuple(links)
        if job.id in self.jobs:
            raise SimulationError(f"job {job.id} already active")
        for lid in links:
            if lid not in self.links:
                raise SimulationError(f"unknown link {lid}")
        self._advance()
        job.links = links
        job.link = links[0]
        job.started_at = self.now
        self.jobs[job.id] = job
        for lid in links:
            self.links[lid].active_jobs[job.id] = job
        self._recompute()
        return job

    def _detach(self, job: TransferJob) -> None:
        del self.jobs[job.id]
        for lid in job.links:
            del self.links[lid].active_jobs[job.id]

    def cancel_transfer(self, job: TransferJob) -> None:
        self._advance()
        self._detach(job)
        job.rate = 0.0
        self._recompute()

    def _on_transfer_event(self, event: LifecycleEvent) -> None:
        if event.payload["epoch"] != self._epoch:
            return
        self._advance()
        now = self.now
        tol = 1e-12 * max(1.0, now)
        done = [job for job in self.jobs.values()
                if job.id == event.payload["job"] or job.remaining <= 0
                or (job.rate > 0 and job.remaining / job.rate <= tol)]
        for job in done:
            job.transferred_bytes = job.total_bytes
            job.finished_at = now
            job.rate = 0.0
            self._detach(job)
        self._recompute()
        for job in done:
            self.record(job.kind, job.vm, job.node, f"{job.id} on {'+'.join(job.links)}")
            if job.on_complete is not None:
                job.on_complete(job)

    def run_until_idle(self):
        """Drain the queue. Returns (final clock, trace)."""
        while self.queue:
            event = self.queue.pop()
            self.processed += 1
            if self.processed > self.watchdog:
                raise SimulationDivergence(
                    f"simulation divergence: more than {self.watchdog} events processed")
            if event.action is not None:
                event.action(event)
            for observer in self.observers:
                observer(self)
        return self.now, self.trace


def run_until_idle(engine: Engine):
    return engine.run_until_idle()
