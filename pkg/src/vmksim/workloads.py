"""Thread programs.

A workload is a small dataclass whose ``program(thread, ctx)`` method is a
generator yielding the requests defined in :mod:`vmksim.sandbox`.  ``ctx``
is the running :class:`~vmksim.simulation.Simulation`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

from .sandbox import Compute, NextRelease, Sleep, Spin, WaitInbox, WaitIO


@dataclass
class Idle:
    kind = "idle"

    def program(self, th, ctx):
        return
        yield


@dataclass
class CpuLoop:
    """Always has work."""
    kind = "cpu"

    def program(self, th, ctx):
        yield Compute(None)


@dataclass
class Hog(CpuLoop):
    kind = "hog"


@dataclass
class CannyLoop:
    """Edge detection on a stream of frames, one frame per ``work_per_frame``."""
    kind = "canny"
    work_per_frame: int = 10_000

    def program(self, th, ctx):
        while True:
            yield Compute(self.work_per_frame)
            th.bump("frames")


@dataclass
class Periodic:
    kind = "periodic"
    work: int = 1_000
    interval: int = 100_000

    def program(self, th, ctx):
        while True:
            if self.work:
                yield Compute(self.work)
            th.bump("jobs")
            yield NextRelease(self.interval)


@dataclass
class Sender:
    """Sends ``size``-byte messages on each channel every ``interval`` ticks.

    A Busy mailbox means the same message is retried at the next release.
    ``interval == 0`` spins on the mailbox status instead of sleeping.
    """
    kind = "sender"
    channels: list = field(default_factory=list)
    interval: int = 100_000
    size: int = 64
    count: Optional[int] = None
    notify: bool = False

    def program(self, th, ctx):
        me = th.sandbox.name
        chans = [ctx.channel(n) for n in self.channels]
        delivered = {c.name: 0 for c in chans}
        owed = {c.name: False for c in chans}

        def done():
            return self.count is not None and all(v >= self.count for v in delivered.values())

        while not done():
            for c in chans:
                if self.count is not None and delivered[c.name] >= self.count:
                    continue
                if not owed[c.name]:
                    owed[c.name] = True
                    th.bump("generated")
                if self.interval == 0:
                    yield Spin(lambda c=c: c.can_send(me), c.name)
                if not c.can_send(me):
                    th.bump("busy")
                    ctx.record(th.sandbox, "MSG_BUSY", c.name, by=th.name)
                    continue
                yield Compute(th.charge_cycles(c.copy_cycles(self.size)))
                if ctx.send_message(th, c, bytes(self.size)):
                    owed[c.name] = False
                    delivered[c.name] += 1
                    if self.notify:
                        ctx.notify_peer(th, c)
                else:
                    th.bump("busy")
            if self.interval:
                yield NextRelease(self.interval)


@dataclass
class Receiver:
    """Polls one channel every ``interval`` ticks.

    ``interval == 0`` spins on the mailbox; ``mode = "ipi"`` sleeps until
    the sender's notification IPI arrives.
    """
    kind = "receiver"
    channel: str = ""
    interval: int = 100_000
    count: Optional[int] = None
    mode: str = "poll"

    def program(self, th, ctx):
        me = th.sandbox.name
        c = ctx.channel(self.channel)
        got = 0
        if self.mode == "poll" and self.interval:
            yield NextRelease(self.interval)
        while self.count is None or got < self.count:
            if self.mode == "ipi":
                yield WaitInbox()
            elif self.interval == 0:
                yield Spin(lambda: c.has_message(me), c.name)
            yield Compute(th.charge_cycles(c.poll_cycles))
            box = c.own_mailbox(me)
            if box.full and box.corrupt:
                th.bump("corrupt")
            elif box.full:
                yield Compute(th.charge_cycles(c.copy_cycles(len(box.message.payload))))
                if ctx.receive_message(th, c) is not None:
                    got += 1
            if self.mode == "poll" and self.interval:
                yield NextRelease(self.interval)


@dataclass
class Reader:
    """Computes, then blocks until ``device`` delivers data."""
    kind = "reader"
    device: str = ""
    work: int = 1_000

    def program(self, th, ctx):
        while True:
            if self.work:
                yield Compute(self.work)
            yield WaitIO(self.device)
            th.bump("reads")


@dataclass
class SleepThenCompute:
    """Sleeps until local time ``at`` and then computes ``work`` ticks each
    ``interval``; used to probe wakeup times across migrations."""
    kind = "sleeper"
    at: int = 0
    work: int = 1_000
    interval: int = 100_000

    def program(self, th, ctx):
        # set before sleeping so a migration shifts it along with the wakeup
        th.release = self.at
        yield Sleep(self.at)
        while True:
            th.bump("wakeups")
            ctx.record(th.sandbox, "WAKE", th.name)
            if self.work:
                yield Compute(self.work)
            yield NextRelease(self.interval)


@dataclass
class MigrationWorker:
    kind = "migration"

    def program(self, th, ctx):
        return ctx.migration.worker_program(th, ctx)


@dataclass
class RecoveryWorker:
    kind = "recovery"

    def program(self, th, ctx):
        return ctx.faults.worker_program(th, ctx)


WORKLOADS = {w.kind: w for w in (Idle, CpuLoop, Hog, CannyLoop, Periodic, Sender, Receiver,
                                 Reader, SleepThenCompute, MigrationWorker, RecoveryWorker)}


def make_workload(desc: dict):
    """Build a workload from ``{"type": name, **params}``."""
    desc = dict(desc)
    kind = desc.pop("type", None)
    if kind not in WORKLOADS:
        raise ValueError(f"unknown workload type {kind!r}")
    cls = WORKLOADS[kind]
    known = {f.name for f in fields(cls)}
    extra = set(desc) - known
    if extra:
        raise ValueError(f"workload {kind!r} does not take {sorted(extra)}")
    return cls(**desc)


def role(workload) -> str:
    return getattr(workload, "kind", "")

