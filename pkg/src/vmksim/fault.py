"""Fault injection and phased recovery.

Recovery is a sequence of cycle-costed phases run as ordinary compute on
the recovering sandbox's recovery thread, so it stays inside that thread's
VCPU budget and can be preempted at budget boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict
from typing import Optional

from .sandbox import Compute, TrapCause, WaitInbox, monitor_trap
from .simcore import SimError


class UnknownTarget(SimError):
    pass


class NoActiveFault(SimError):
    pass


class NoStandby(SimError):
    pass


# cycles per recovery phase, measured on a 2.133 GHz Core i3
PHASE_CYCLES = {
    "vm_exit": 885,
    "driver_replacement": 10503,
    "ipi_round_trip": 4542,
    "vm_enter": 663,
    "driver_reinit": 14_500_000,
    "netif_restart": 78351,
}

LOCAL_PHASES = ("vm_exit", "driver_replacement", "vm_enter", "driver_reinit", "netif_restart")
REMOTE_PHASES = ("vm_exit", "ipi_round_trip", "vm_enter", "driver_reinit", "netif_restart")


class FaultKind(enum.Enum):
    DRIVER = "driver"
    CHANNEL_CORRUPT = "channel_corrupt"
    CROSS_WRITE = "cross_write"


@dataclass(frozen=True)
class FaultSpec:
    at: int
    target: str
    kind: FaultKind
    device: Optional[str] = None
    channel: Optional[str] = None
    victim: Optional[str] = None

    @classmethod
    def driver(cls, at: int, target: str, device: str) -> "FaultSpec":
        return cls(at, target, FaultKind.DRIVER, device=device)

    @classmethod
    def channel_corrupt(cls, at: int, target: str, channel: str) -> "FaultSpec":
        return cls(at, target, FaultKind.CHANNEL_CORRUPT, channel=channel)

    @classmethod
    def cross_write(cls, at: int, target: str, victim: str) -> "FaultSpec":
        return cls(at, target, FaultKind.CROSS_WRITE, victim=victim)

    def describe(self) -> str:
        what = self.device or self.channel or self.victim or ""
        return f"{self.kind.value}:{what}"


@dataclass
class RecoveryPlan:
    mode: str = "local"
    standby: Optional[str] = None
    phase_costs: dict = field(default_factory=lambda: dict(PHASE_CYCLES))
    filter_standby: bool = True

    def __post_init__(self):
        if self.mode not in ("local", "remote"):
            raise ValueError(f"recovery mode must be local or remote, not {self.mode!r}")
        if self.mode == "remote" and not self.standby:
            raise NoStandby("remote recovery needs a standby sandbox")

    def phases(self) -> list[tuple[str, int]]:
        names = LOCAL_PHASES if self.mode == "local" else REMOTE_PHASES
        return [(n, self.phase_costs[n]) for n in names]

    def total_cycles(self) -> int:
        return sum(c for _, c in self.phases())


@dataclass
class RecoveryReport:
    sandbox: str
    mode: str
    total_cycles: int
    per_phase: dict
    started_at: int
    completed_at: Optional[int] = None
    downtime_ticks: Optional[int] = None
    executor: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Job:
    sandbox: str
    plan: RecoveryPlan
    report: RecoveryReport


class FaultManager:
    def __init__(self, sim):
        self.sim = sim
        self.active: dict[str, list[FaultSpec]] = {}
        self.history: list[FaultSpec] = []
        self.reports: list[RecoveryReport] = []
        self.violations: list = []

    def _sandbox(self, name: str):
        try:
            return self.sim.host.sandboxes[name]
        except KeyError:
            raise UnknownTarget(f"no sandbox {name!r}") from None

    def inject(self, fault: FaultSpec) -> None:
        sim = self.sim
        sb = self._sandbox(fault.target)
        if fault.kind is FaultKind.DRIVER:
            dev = sim.devices.get(fault.device)
            acc = dev.access_for(sb.name) if dev is not None else None
            if acc is None:
                raise UnknownTarget(f"{sb.name} has no device {fault.device!r}")
            acc.broken = True
        elif fault.kind is FaultKind.CHANNEL_CORRUPT:
            ch = sim.channels.get(fault.channel)
            if ch is None or sb.name not in (ch.endpoint_a, ch.endpoint_b):
                raise UnknownTarget(f"{sb.name} has no channel {fault.channel!r}")
            ch.corrupt()
            sim.channel_changed(ch)
        elif fault.kind is FaultKind.CROSS_WRITE:
            victim = self._sandbox(fault.victim)
            page = victim.private.start
            before = sim.host.memory.contents.get(page)
            result = sb.write(page, b"\xde\xad\xbe\xef")
            if result:
                raise SimError(f"{sb.name} could write into {victim.name}")
            assert sim.host.memory.contents.get(page) == before
            self.violations.append(result)
            sim.record(sb, "EPT_VIOLATION", victim.name, page=page, mode="W",
                       action=result.action.kind.value)
        else:
            raise UnknownTarget(f"unknown fault kind {fault.kind!r}")
        self.active.setdefault(sb.name, []).append(fault)
        self.history.append(fault)
        sim.record(sb, "FAULT", fault.describe())

    # -- recovery ---------------------------------------------------------

    def recover(self, sandbox: str, plan: RecoveryPlan) -> RecoveryReport:
        """Start recovery of ``sandbox``; the returned report fills in once
        the last phase has run."""
        sim = self.sim
        sb = self._sandbox(sandbox)
        if not self.active.get(sb.name):
            raise NoActiveFault(f"no active fault in {sb.name}")
        executor = sb if plan.mode == "local" else self._sandbox(plan.standby)
        worker = sim.worker_for(executor, "recovery")
        if worker is None:
            raise UnknownTarget(f"{executor.name} has no recovery thread")
        phases = plan.phases()
        report = RecoveryReport(sb.name, plan.mode, plan.total_cycles(), dict(phases),
                                sim.engine.now, executor=executor.name)
        self.reports.append(report)
        monitor_trap(sb, TrapCause.RECOVERY)
        sim.record(sb, "RECOVER_START", plan.mode, executor=executor.name)
        sim.post(worker, _Job(sb.name, plan, report))
        sim.kick(executor.pcpu)
        return report

    def worker_program(self, th, ctx):
        sim = self.sim
        while True:
            job = yield WaitInbox()
            for name, cycles in job.plan.phases():
                ticks = th.charge_cycles(cycles)
                if ticks:
                    yield Compute(ticks)
                sim.record(th.sandbox, "RECOVER_PHASE", name, cycles=cycles, target=job.sandbox)
            self._complete(job)

    def _complete(self, job: _Job) -> None:
        sim = self.sim
        sb = sim.host.sandboxes[job.sandbox]
        for fault in self.active.pop(sb.name, []):
            if fault.kind is FaultKind.DRIVER:
                dev = sim.devices[fault.device]
                if job.plan.mode == "local":
                    dev.access_for(sb.name).broken = False
                else:
                    self.activate_standby(dev.name, job.plan.standby)
            elif fault.kind is FaultKind.CHANNEL_CORRUPT:
                ch = sim.channels[fault.channel]
                ch.reset()
                sim.channel_changed(ch)
        rep = job.report
        rep.completed_at = sim.engine.now
        rep.downtime_ticks = rep.completed_at - rep.started_at
        sim.record(sb, "RECOVER_DONE", job.plan.mode, downtime=rep.downtime_ticks)

    def activate_standby(self, device: str, standby: str) -> None:
        """Stop filtering the standby's output for ``device``."""
        sim = self.sim
        dev = sim.devices.get(device)
        if dev is None:
            raise UnknownTarget(f"no device {device!r}")
        acc = dev.access_for(standby)
        if acc is None or not acc.filtered:
            raise NoStandby(f"{standby} is not a filtered standby for {device}")
        if not any(f.kind is FaultKind.DRIVER and f.device == device and f.target != standby
                   for f in self.history):
            raise NoStandby(f"no fault on {device} to fail over from")
        acc.filtered = False
        sim.record(sim.host.sandboxes[standby], "STANDBY_ACTIVE", device)


def recovery_totals(plan: RecoveryPlan) -> tuple[dict, int]:
    phases = dict(plan.phases())
    return phases, sum(phases.values())


