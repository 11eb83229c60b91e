"""Boot-time contextualization lifecycle of a freshly cloned VM.

Queued -> Provisioning -> Booting -> MacLookup -> Renaming -> [SidReset]
-> Rebooting -> Running -> ShutDown.  SidReset (SysPrep) runs for Windows
guests only.  A failed hostname lookup ends the path in Failed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from .model import OsFamily, VmInstance


class LifecycleState(str, enum.Enum):
    QUEUED = "Queued"
    PROVISIONING = "Provisioning"
    BOOTING = "Booting"
    MAC_LOOKUP = "MacLookup"
    RENAMING = "Renaming"
    SID_RESET = "SidReset"
    REBOOTING = "Rebooting"
    RUNNING = "Running"
    SHUT_DOWN = "ShutDown"
    FAILED = "Failed"

    @classmethod
    def parse(cls, text: str) -> "LifecycleState":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise KeyError(text)


TIMED_STAGES = (
    LifecycleState.BOOTING,
    LifecycleState.MAC_LOOKUP,
    LifecycleState.RENAMING,
    LifecycleState.SID_RESET,
    LifecycleState.REBOOTING,
)


class LifecycleError(RuntimeError):
    """Illegal transition requested."""


def next_state(completed: LifecycleState, os: OsFamily) -> LifecycleState:
    S = LifecycleState
    if completed is S.RENAMING:
        return S.SID_RESET if os is OsFamily.WINDOWS_XP else S.REBOOTING
    table = {
        S.QUEUED: S.PROVISIONING,
        S.PROVISIONING: S.BOOTING,
        S.BOOTING: S.MAC_LOOKUP,
        S.MAC_LOOKUP: S.RENAMING,
        S.SID_RESET: S.REBOOTING,
        S.REBOOTING: S.RUNNING,
    }
    if completed is S.SID_RESET and os is not OsFamily.WINDOWS_XP:
        raise LifecycleError(f"SidReset is not on the {os.value} path")
    try:
        return table[completed]
    except KeyError:
        raise LifecycleError(f"no boot-path transition out of {completed.value}") from None


def legal_path(os: OsFamily) -> list[LifecycleState]:
    path = [LifecycleState.QUEUED]
    while path[-1] is not LifecycleState.RUNNING:
        path.append(next_state(path[-1], os))
    return path


@dataclass
class StageDurations:
    """Base seconds per timed stage, with optional per-OS overrides."""

    base: dict = field(default_factory=lambda: {
        LifecycleState.BOOTING: 90.0,
        LifecycleState.MAC_LOOKUP: 30.0,
        LifecycleState.RENAMING: 30.0,
        LifecycleState.SID_RESET: 120.0,
        LifecycleState.REBOOTING: 60.0,
    })
    per_os: dict = field(default_factory=dict)  # (stage, OsFamily) -> seconds

    def get(self, stage: LifecycleState, os: OsFamily) -> float:
        if (stage, os) in self.per_os:
            return self.per_os[(stage, os)]
        return self.base[stage]

    def path_total(self, os: OsFamily) -> float:
        return sum(self.get(s, os) for s in legal_path(os) if s in TIMED_STAGES)


def jitter(rng, sigma: float) -> float:
    """Lognormal multiplier with median 1; exactly 1.0 when sigma is 0."""
    if sigma <= 0 or rng is None:
        return 1.0
    return math.exp(rng.gauss(0.0, sigma))


def stage_duration(stage: LifecycleState, os: OsFamily, params: StageDurations,
                   rng=None, sigma: float = 0.0) -> float:
    if stage not in TIMED_STAGES:
        raise LifecycleError(f"{stage.value} is not a timed stage")
    if stage is LifecycleState.SID_RESET and os is not OsFamily.WINDOWS_XP:
        raise LifecycleError("SidReset is skipped for Linux guests")
    return params.get(stage, os) * jitter(rng, sigma)


def enter(vm: VmInstance, state: LifecycleState, now: float) -> None:
    vm.state = state
    vm.path.append(state)
    vm.stage_timestamps[state] = now


def advance_lifecycle(vm: VmInstance, completed: LifecycleState, os: OsFamily, now: float,
                      params: Optional[StageDurations] = None, rng=None,
                      sigma: float = 0.0):
    """Move ``vm`` past ``completed``; returns (next state, duration or None).

    The duration is only defined for timed stages; Provisioning is driven by
    the architecture plan and Running has no scheduled end.
    """
    if vm.state is not completed:
        raise LifecycleError(
            f"vm {vm.id}: completed {completed.value} but current state is "
            f"{getattr(vm.state, 'value', vm.state)}")
    nxt = next_state(completed, os)
    enter(vm, nxt, now)
    duration = None
    if nxt in TIMED_STAGES:
        duration = stage_duration(nxt, os, params or StageDurations(), rng, sigma)
    return nxt, duration


def fail(vm: VmInstance, now: float, reason: str) -> None:
    vm.failure = reason
    enter(vm, LifecycleState.FAILED, now)


def shut_down(vm: VmInstance, now: float) -> None:
    if vm.state is not LifecycleState.RUNNING:
        raise LifecycleError(
            f"vm {vm.id}: cannot shut down from {getattr(vm.state, 'value', vm.state)}")
    enter(vm, LifecycleState.SHUT_DOWN, now)
