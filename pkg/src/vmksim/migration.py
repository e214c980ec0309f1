"""Predictable migration of a thread and its VCPU between sandboxes.

Only threads whose VCPU has run out of budget, or that are asleep on a
timed event, may move.  The copy is charged to the source sandbox's
migration thread, and every future replenishment and wakeup of the
moved VCPU is shifted into the destination's clock frame.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict
from typing import Optional

from .sandbox import ThreadState, TrapCause, WaitInbox, Compute, monitor_trap
from .simcore import DEFAULT_CYCLES_PER_TICK, SimError, cycles_to_ticks

# Calibrated so that a 1024-page (4 MB) address space costs 5.4 ms
# worst case at 2133 cycles per tick.
DEFAULT_PER_PAGE_COPY_CYCLES = 11248
DEFAULT_TSS_COPY_CYCLES = 248


class DestinationOverUtilized(SimError):
    pass


class NotEligibleError(SimError):
    pass


class Reason(enum.Enum):
    RUNNABLE_WITH_BUDGET = "RunnableWithBudget"
    WAITING_ON_IO = "WaitingOnIO"
    DESTINATION_BUSY = "DestinationBusy"
    NO_TIMED_EVENT = "NoTimedEvent"
    ALREADY_MIGRATING = "AlreadyMigrating"
    SHARED_VCPU = "SharedVcpu"
    FINISHED = "Finished"


@dataclass(frozen=True)
class Eligibility:
    ok: bool
    reason: Optional[Reason] = None

    def __bool__(self) -> bool:
        return self.ok


ELIGIBLE = Eligibility(True)


def eligible(thread, now: int = 0, busy_destinations=(), dst: Optional[str] = None) -> Eligibility:
    """Whether ``thread`` may be migrated right now.

    ``busy_destinations`` holds sandboxes that already have a migration in
    flight towards them.
    """
    st = thread.state
    if st is ThreadState.MIGRATING:
        return Eligibility(False, Reason.ALREADY_MIGRATING)
    if st is ThreadState.DONE:
        return Eligibility(False, Reason.FINISHED)
    if st is ThreadState.BLOCKED_IO:
        return Eligibility(False, Reason.WAITING_ON_IO)
    vcpu = thread.vcpu
    if vcpu is not None and len(vcpu.bound_threads) > 1:
        return Eligibility(False, Reason.SHARED_VCPU)
    if st is ThreadState.SLEEPING and thread.wake_at is not None:
        pass
    elif st is ThreadState.RUNNABLE:
        if vcpu is None or vcpu.remaining > 0:
            return Eligibility(False, Reason.RUNNABLE_WITH_BUDGET)
    else:
        return Eligibility(False, Reason.NO_TIMED_EVENT)
    if dst is not None and dst in busy_destinations:
        return Eligibility(False, Reason.DESTINATION_BUSY)
    return ELIGIBLE


def next_event_distance(thread, now: int) -> Optional[int]:
    """Relative time to the migrating VCPU's next replenishment or wakeup."""
    candidates = []
    if thread.state is ThreadState.SLEEPING and thread.wake_at is not None:
        candidates.append(thread.wake_at - now)
    vcpu = thread.vcpu
    if vcpu is not None and vcpu.remaining == 0:
        nxt = vcpu.next_replenishment()
        if nxt is not None:
            candidates.append(nxt - now)
    return max(0, min(candidates)) if candidates else None


def estimate_delta(address_space_pages: int,
                   per_page_copy_cost=DEFAULT_PER_PAGE_COPY_CYCLES,
                   tss_copy_cost=DEFAULT_TSS_COPY_CYCLES,
                   cycles_per_tick: int = DEFAULT_CYCLES_PER_TICK) -> int:
    """Worst-case copy time in ticks: pages times the uncached per-page
    cost, plus the thread control block."""
    if address_space_pages < 0:
        raise ValueError("negative page count")
    return cycles_to_ticks(address_space_pages * per_page_copy_cost + tss_copy_cost,
                           cycles_per_tick)


def check_condition(e_s: int, delta_s: int, c_m: int, t_m: int) -> bool:
    """True if a copy of ``delta_s`` ticks on a (c_m, t_m) server finishes
    before the migrating VCPU's next event ``e_s`` ticks away."""
    if c_m <= 0 or t_m <= 0:
        raise ValueError("C_m and T_m must be positive")
    return e_s >= (delta_s // c_m) * t_m + delta_s % c_m


def clock_adjust(tsc_d: int, tsc_s: int, rdtsc_cost: int, ipi_cost: int) -> int:
    return tsc_d - tsc_s - 2 * rdtsc_cost - ipi_cost


@dataclass
class ClockAdjustment:
    delta_adj: int
    tsc_d: int


@dataclass
class MigrationRequest:
    thread: str
    src: str
    dst: str
    delta_s: int = 0
    e_s: int = 0
    c_m: int = 0
    t_m: int = 0
    tsc_s: Optional[int] = None
    best_effort: bool = False
    delta_actual: Optional[int] = None
    requested_at: int = 0


@dataclass
class MigrationReport:
    thread: str
    src: str
    dst: str
    outcome: str = "pending"
    requested_at: int = 0
    issued_at: Optional[int] = None
    completed_at: Optional[int] = None
    e_s: Optional[int] = None
    delta_s_worst: Optional[int] = None
    delta_s_actual: Optional[int] = None
    c_m: Optional[int] = None
    t_m: Optional[int] = None
    safe: Optional[bool] = None
    delta_adj: Optional[int] = None
    tsc_s: Optional[int] = None
    tsc_d: Optional[int] = None
    reason: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Job:
    request: MigrationRequest
    report: MigrationReport
    thread: object
    worker: object
    prev_state: ThreadState = ThreadState.RUNNABLE
    deferred_wake: bool = False
    adjustment: Optional[ClockAdjustment] = None
    pending: bool = True


class MigrationManager:
    """Runs the migration handshake on top of a :class:`Simulation`.

    Source and destination only talk through IPIs and the shared TSC
    slot; nothing here reaches across sandboxes outside those events.
    """

    def __init__(self, sim):
        self.sim = sim
        self.pending: list[_Job] = []
        self.in_flight: dict[str, _Job] = {}
        self.reports: list[MigrationReport] = []
        self._by_thread: dict[int, _Job] = {}

    # -- directives -------------------------------------------------------

    def submit(self, thread_name: str, dst: str, best_effort: bool = False,
               delta_actual: Optional[int] = None) -> MigrationReport:
        sim = self.sim
        th = sim.threads[thread_name]
        req = MigrationRequest(thread_name, th.sandbox.name, dst, best_effort=best_effort,
                               delta_actual=delta_actual, requested_at=sim.engine.now)
        rep = MigrationReport(thread_name, th.sandbox.name, dst, requested_at=sim.engine.now)
        self.reports.append(rep)
        job = _Job(req, rep, th, None)
        self.pending.append(job)
        sim.record(th.sandbox, "MIGRATE_REQ", thread_name, dst=dst, best_effort=int(best_effort))
        # tried from the source core's reschedule, once its running slice is accounted
        sim.kick(th.sandbox.pcpu)
        return rep

    def poll(self, core: int) -> None:
        """Retry pending requests whose thread lives on ``core``."""
        for job in list(self.pending):
            if job.thread.sandbox is not None and job.thread.sandbox.pcpu == core:
                self._try(job)

    def _try(self, job: _Job) -> None:
        sim = self.sim
        th, req, rep = job.thread, job.request, job.report
        src = th.sandbox
        if req.dst == src.name or req.dst not in sim.host.sandboxes:
            self._drop(job, "BadDestination")
            return
        now = sim.local_now(src.pcpu)
        ok = eligible(th, now, self.in_flight, req.dst)
        if not ok:
            if rep.reason != ok.reason.value:
                rep.reason = ok.reason.value
                sim.record(src, "MIGRATE_WAIT", th.name, reason=ok.reason.value)
            return
        worker = sim.worker_for(src, "migration")
        if worker is None:
            self._drop(job, "NoMigrationThread")
            return
        e_s = next_event_distance(th, now)
        h = sim.scenario.host
        delta = estimate_delta(th.address_space_pages, h.per_page_copy_cycles,
                               h.tss_copy_cycles, h.cycles_per_tick)
        c_m, t_m = worker.vcpu.spec.budget, worker.vcpu.spec.period
        safe = check_condition(e_s if e_s is not None else 0, delta, c_m, t_m)
        req.e_s, req.delta_s, req.c_m, req.t_m = e_s, delta, c_m, t_m
        rep.e_s, rep.delta_s_worst, rep.c_m, rep.t_m, rep.safe = e_s, delta, c_m, t_m, safe
        self.pending.remove(job)
        if not safe and not req.best_effort:
            rep.outcome = "unsafe"
            sim.record(src, "MIGRATE_UNSAFE", th.name, e_s=e_s, delta_s=delta, c_m=c_m, t_m=t_m)
            return
        job.worker = worker
        job.prev_state = th.state
        job.pending = False
        th.state = ThreadState.MIGRATING
        self.in_flight[req.dst] = job
        self._by_thread[th.id] = job
        rep.issued_at = sim.engine.now
        rep.reason = ""
        sim.record(src, "MIGRATE_START", th.name, dst=req.dst, e_s=e_s, delta_s=delta,
                   safe=int(safe))
        sim.post(worker, ("start", job))
        sim.kick(src.pcpu)

    def _drop(self, job: _Job, reason: str) -> None:
        self.pending.remove(job)
        job.report.outcome = "failed"
        job.report.reason = reason
        self.sim.record(job.thread.sandbox, "MIGRATE_FAIL", job.thread.name, reason=reason)

    # -- wakeups while in transit -----------------------------------------

    def defer_wakeup(self, thread) -> bool:
        job = self._by_thread.get(thread.id)
        if job is None:
            return False
        job.deferred_wake = True
        return True

    # -- the source-side migration thread ----------------------------------

    def worker_program(self, th, ctx):
        sim = self.sim
        while True:
            kind, job = yield WaitInbox()
            req = job.request
            src = sim.host.sandboxes[req.src]
            dst = sim.host.sandboxes[req.dst]
            if kind == "start":
                req.tsc_s = sim.clock.read_tsc(src.pcpu)
                job.report.tsc_s = req.tsc_s
                rd = sim.clock.cores[src.pcpu].rdtsc_cost
                if rd:
                    yield Compute(rd)
                # TSC goes to shared memory right before the request IPI
                sim.send_ipi(src.pcpu, dst.pcpu, ("migrate_req", job))
            elif kind == "accept":
                monitor_trap(src, TrapCause.MIGRATION)
                actual = req.delta_actual if req.delta_actual is not None else req.delta_s
                job.report.delta_s_actual = actual
                sim.record(src, "MIGRATE_COPY", job.thread.name, ticks=actual)
                if actual:
                    yield Compute(actual)
                self._detach(job)
                sim.send_ipi(src.pcpu, dst.pcpu, ("migrate_done", job))
            elif kind == "reject":
                self._restore(job)

    # -- IPI handlers -----------------------------------------------------

    def on_ipi(self, dst_core: int, payload) -> None:
        kind, job = payload
        if kind == "migrate_req":
            self._on_request(job)
        elif kind in ("migrate_accept", "migrate_reject"):
            self.sim.post(job.worker, (kind.split("_")[1], job))
            self.sim.kick(job.worker.sandbox.pcpu)
        elif kind == "migrate_done":
            self._install(job)

    def _on_request(self, job: _Job) -> None:
        sim = self.sim
        req = job.request
        src = sim.host.sandboxes[req.src]
        dst = sim.host.sandboxes[req.dst]
        tsc_d = sim.clock.read_tsc(dst.pcpu)
        verdict = dst.scheduler.admit(job.thread.vcpu.spec)
        if not verdict:
            job.report.reason = (f"lhs={float(verdict.lhs):.6f} bound={verdict.bound:.6f}")
            sim.record(dst, "MIGRATE_REJECT", job.thread.name,
                       lhs=f"{float(verdict.lhs):.6f}", bound=f"{verdict.bound:.6f}")
            sim.send_ipi(dst.pcpu, src.pcpu, ("migrate_reject", job))
            return
        dst.scheduler.reserved.append(job.thread.vcpu.spec)
        c = sim.clock.cores[dst.pcpu]
        delta = clock_adjust(tsc_d, req.tsc_s, c.rdtsc_cost, c.ipi_cost)
        job.adjustment = ClockAdjustment(delta, tsc_d)
        job.report.delta_adj = delta
        job.report.tsc_d = tsc_d
        sim.record(dst, "MIGRATE_ACCEPT", job.thread.name, delta_adj=delta)
        sim.send_ipi(dst.pcpu, src.pcpu, ("migrate_accept", job))

    def _restore(self, job: _Job) -> None:
        sim = self.sim
        th = job.thread
        del self.in_flight[job.request.dst]
        del self._by_thread[th.id]
        th.state = job.prev_state
        if th.state is ThreadState.SLEEPING and job.deferred_wake:
            th.resume_with(None)
        job.report.outcome = "rejected"
        sim.record(th.sandbox, "MIGRATE_REJECTED", th.name, dst=job.request.dst)
        sim.kick(th.sandbox.pcpu)

    def _detach(self, job: _Job) -> None:
        sim = self.sim
        th, vcpu = job.thread, job.thread.vcpu
        src = th.sandbox
        src.scheduler.remove(vcpu)
        src.threads.remove(th)
        th.sandbox = None

    def _install(self, job: _Job) -> None:
        sim = self.sim
        th, vcpu = job.thread, job.thread.vcpu
        dst = sim.host.sandboxes[job.request.dst]
        delta = job.adjustment.delta_adj
        dst.scheduler.reserved.remove(vcpu.spec)
        vcpu.shift_times(delta)
        dst.scheduler.vcpus.append(vcpu)
        vcpu.pcpu = dst.pcpu
        dst.threads.append(th)
        th.sandbox = dst
        if th.wake_at is not None:
            th.wake_at += delta
        if th.release is not None:
            th.release += delta
        del self.in_flight[job.request.dst]
        del self._by_thread[th.id]
        th.state = job.prev_state
        job.report.outcome = "completed"
        job.report.completed_at = sim.engine.now
        sim.record(dst, "MIGRATE_DONE", th.name, src=job.request.src, delta_adj=delta)
        sim.adopt(th, vcpu)
