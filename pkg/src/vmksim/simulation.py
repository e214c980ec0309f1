"""Runs a :class:`~vmksim.scenario.Scenario` on the event engine.

Every event that can change what a core should be running ends in
``_reschedule(core)``, which charges the slice that just ended, credits
due replenishments and dispatches the next VCPU.  The dispatched slice is
bounded by a one-shot timer at the earlier of step completion and budget
exhaustion.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .comm import Channel, Message, create_channel
from .fault import FaultManager, FaultSpec, RecoveryPlan
from .migration import MigrationManager
from .sandbox import (ActionKind, Compute, Device, DeviceAccess, Host, NextRelease, SimThread,
                      Sleep, Spin, ThreadState, WaitInbox, run_workload_slice)
from .sched import Band, NoAssociatedThread, PcpuScheduler, Vcpu
from .scenario import Scenario
from .simcore import (ChannelPoll, ClockModel, DeviceInterrupt, Directive, Engine, FaultInject,
                      Ipi, Replenishment, SimError, TimerFire, TraceSample, Wakeup)
from .trace import TraceLog, format_detail

# a zero-time program loop longer than this is a workload bug
_MAX_ZERO_TIME_STEPS = 100_000


class InvariantViolation(SimError):
    pass


@dataclass
class Dispatch:
    vcpu: Vcpu
    thread: SimThread
    band: Band
    start: int
    start_local: int


@dataclass
class Activation:
    device: str
    requester: Optional[SimThread]
    at: int


class CoreState:
    def __init__(self, index: int):
        self.index = index
        self.sandbox = None
        self.running: Optional[Dispatch] = None
        # (key, start, vcpu, thread, band) of the run being coalesced
        self.open_run: Optional[tuple] = None


@dataclass
class _Handler:
    """Interrupt bottom half for one device in one sandbox."""
    device: Device
    access: DeviceAccess
    kind = "irq"

    def program(self, th, ctx):
        while True:
            act = yield WaitInbox()
            yield Compute(self.device.handler_cost)
            ctx.io_complete(th, self.device, self.access, act)


class Simulation:
    def __init__(self, scenario: Scenario, keep_trace: bool = True,
                 check_invariants: bool = True, strict: Optional[bool] = None):
        self.scenario = sc = scenario
        h = sc.host
        self.check_invariants = check_invariants
        self.strict = sc.strict if strict is None else strict
        self.engine = Engine()
        self.clock = ClockModel(self.engine, h.cores, h.skews, h.rdtsc_cost, h.ipi_cost)
        self.host = Host(h.cores, h.memory_pages)
        self.trace = TraceLog(keep_trace)
        self.migration = MigrationManager(self)
        self.faults = FaultManager(self)
        self.cores = [CoreState(i) for i in range(h.cores)]
        self.vcpus: dict[str, Vcpu] = {}
        self.vcpu_sandbox: dict[str, str] = {}
        self.threads: dict[str, SimThread] = {}
        self._threads_by_id: list[SimThread] = []
        self.channels: dict[str, Channel] = {}
        self.devices: dict[str, Device] = {}
        self._rng: dict[str, random.Random] = {}
        self.spinners: dict[str, list[SimThread]] = {}
        self.receptions: dict[str, list[tuple[int, str, int]]] = {}
        self.irq_counts: Counter = Counter()
        self._io_claims: set[int] = set()
        self._interval_counts: dict[str, Counter] = {}
        self.samples: list[dict] = []
        self.violations: list[str] = []
        self.events_processed = 0
        self.end_time = 0
        self._finished = False
        self._build()

    # -- construction -----------------------------------------------------

    def _build(self) -> None:
        sc = self.scenario
        cpt = sc.host.cycles_per_tick
        for s in sc.sandboxes:
            sb = self.host.create_sandbox(s.pcpu, s.pages, s.name, s.policy)
            sb.scheduler = PcpuScheduler(s.pcpu)
            self.cores[s.pcpu].sandbox = sb
            self.receptions[sb.name] = []
            self._interval_counts[sb.name] = Counter()
        for i, vc in enumerate(sc.vcpus):
            sb = self.host.sandboxes[vc.sandbox]
            v = Vcpu(i, vc.spec, vc.name, sb.pcpu)
            sb.scheduler.add(v, check=False)
            self.vcpus[v.name] = v
        for i, cc in enumerate(sc.channels):
            a, b = self.host.sandboxes[cc.a], self.host.sandboxes[cc.b]
            ch = create_channel(a, b, cc.pages, self.host.memory, cc.name,
                                per_byte_cycles=sc.host.per_byte_copy_cycles,
                                poll_cycles=sc.host.poll_cycles, cid=i)
            self.channels[ch.name] = ch
        for tc in sc.threads:
            v = self.vcpus[tc.vcpu]
            self._new_thread(tc.name, tc.workload, tc.pages, v, cpt)
        for dc in sc.devices:
            dev = Device(dc.name, dc.kind, dc.start, dc.interval, dc.count, dc.jitter,
                         dc.handler_cost, dc.reply)
            for ac in dc.access:
                acc = DeviceAccess(ac.sandbox, ac.io_vcpu, ac.default_vcpu, ac.filtered)
                acc.handler = self._new_thread(f"{dc.name}.irq@{ac.sandbox}", _Handler(dev, acc),
                                               1, self.vcpus[ac.io_vcpu], cpt)
                dev.access.append(acc)
                self.host.sandboxes[ac.sandbox].devices.add(dc.name)
            self.devices[dev.name] = dev
            self._rng[dev.name] = random.Random(f"{sc.seed}:{dev.name}")

        starts = {tc.name: tc.start for tc in sc.threads}
        for th in self._threads_by_id:
            th.start(self)
            start = starts.get(th.name, 0)
            if start > 0:
                th.state = ThreadState.SLEEPING
                th.wake_at = start
                self._schedule_wakeup(th)
        for dev in self.devices.values():
            self._schedule_interrupt(dev, 0)
        for f in sc.faults:
            self.engine.schedule_event(f.at, FaultInject(f))
        for r in sc.recoveries:
            self.engine.schedule_event(r.at, Directive(("recover", r)))
        for m in sc.migrations:
            self.engine.schedule_event(m.at, Directive(("migrate", m)))
        if sc.sample_interval <= sc.duration:
            self.engine.schedule_event(sc.sample_interval, TraceSample(1))
        for cs in self.cores:
            if cs.sandbox is not None:
                self.kick(cs.index)

    def _new_thread(self, name: str, workload, pages: int, vcpu: Vcpu, cpt: int) -> SimThread:
        th = SimThread(len(self._threads_by_id), name, workload, pages, cpt)
        sb = self.host.on_core(vcpu.pcpu)
        th.sandbox = sb
        th.vcpu = vcpu
        vcpu.bound_threads.append(th)
        sb.threads.append(th)
        th.clock = lambda th=th: self.clock.local(th.sandbox.pcpu)
        th.observer = self._observe
        self.threads[name] = th
        self._threads_by_id.append(th)
        return th

    # -- helpers used by workloads and managers ---------------------------

    def record(self, sandbox, kind: str, subject: str, **detail) -> None:
        pcpu = sandbox.pcpu if sandbox is not None else -1
        name = sandbox.name if sandbox is not None else "-"
        self.trace.add(self.engine.now, pcpu, name, kind, str(subject), format_detail(detail))

    def local_now(self, core: int) -> int:
        return self.clock.local(core)

    def channel(self, name: str) -> Channel:
        return self.channels[name]

    def kick(self, core: int) -> None:
        self.engine.schedule_event(self.engine.now, ChannelPoll(core))

    def post(self, thread: SimThread, item) -> None:
        # kick even if it was not waiting: it may not have reached its first wait yet
        thread.post(item)
        if thread.sandbox is not None:
            self.kick(thread.sandbox.pcpu)

    def send_ipi(self, src: int, dst: int, payload) -> None:
        cost = self.clock.cores[src].ipi_cost
        self.engine.schedule_event(self.engine.now + cost, Ipi(src, dst, payload))

    def worker_for(self, sandbox, kind: str) -> Optional[SimThread]:
        for th in sandbox.threads:
            if getattr(th.workload, "kind", "") == kind:
                return th
        return None

    def _observe(self, th: SimThread, key: str, n: int) -> None:
        if th.sandbox is not None:
            self._interval_counts[th.sandbox.name][key] += n

    def send_message(self, th: SimThread, ch: Channel, payload: bytes) -> bool:
        res = ch.send(th.sandbox.name, payload)
        if not res.sent:
            return False
        th.bump("sent")
        self.record(th.sandbox, "MSG_SEND", ch.name, seq=ch._seq - 1, bytes=len(payload),
                    to=ch.peer(th.sandbox.name))
        self.channel_changed(ch)
        return True

    def receive_message(self, th: SimThread, ch: Channel) -> Optional[Message]:
        msg = ch.poll(th.sandbox.name)
        if not isinstance(msg, Message):
            return None
        th.bump("recv")
        self.receptions[th.sandbox.name].append((self.engine.now, ch.name, msg.seq))
        self.record(th.sandbox, "MSG_RECV", ch.name, seq=msg.seq, bytes=len(msg.payload))
        self.channel_changed(ch)
        return msg

    def notify_peer(self, th: SimThread, ch: Channel) -> None:
        peer = self.host.sandboxes[ch.peer(th.sandbox.name)]
        self.send_ipi(th.sandbox.pcpu, peer.pcpu, ("notify", ch.name, peer.name))

    def channel_changed(self, ch: Channel) -> None:
        """Interrupt any thread currently spinning on ``ch`` so it rechecks."""
        for th in self.spinners.get(ch.name, ()):
            if th.spin is None or th.sandbox is None:
                continue
            cs = self.cores[th.sandbox.pcpu]
            if cs.running is not None and cs.running.thread is th:
                self.kick(cs.index)

    def adopt(self, th: SimThread, vcpu: Vcpu) -> None:
        """Re-arm a migrated VCPU's replenishments and wakeup on its new core."""
        core = vcpu.pcpu
        for item in vcpu.replenishments:
            g = max(self.clock.to_global(core, item.due_at), self.engine.now)
            self.engine.schedule_event(g, Replenishment(core, vcpu.id))
        if th.state is ThreadState.SLEEPING and th.wake_at is not None:
            self._schedule_wakeup(th)
        self.kick(core)

    # -- devices ----------------------------------------------------------

    def _schedule_interrupt(self, dev: Device, k: int) -> None:
        if dev.count is not None and k >= dev.count:
            return
        t = dev.start + k * dev.interval
        if dev.jitter:
            t += self._rng[dev.name].randint(0, dev.jitter)
        t = max(t, self.engine.now)
        if t <= self.scenario.duration:
            self.engine.schedule_event(t, DeviceInterrupt(dev.name, (k,)))

    def deliver_interrupt(self, dev: Device) -> list[Activation]:
        """Count the interrupt in every sandbox that has the device and wake
        each one's handler on its I/O VCPU."""
        dev.fired += 1
        acts = []
        for acc in dev.access:
            sb = self.host.sandboxes[acc.sandbox]
            self.irq_counts[sb.name] += 1
            self._interval_counts[sb.name]["irq"] += 1
            if acc.broken:
                self.record(sb, "IRQ", dev.name, n=dev.fired, serviced=0)
                continue
            requester = None
            for th in sb.threads:
                if (th.state is ThreadState.BLOCKED_IO and th.io_device == dev.name
                        and th.id not in self._io_claims):
                    requester = th
                    break
            main = requester.vcpu if requester is not None else (
                self.vcpus[acc.default_vcpu] if acc.default_vcpu else None)
            io_v = self.vcpus[acc.io_vcpu]
            try:
                io_v.io_service_request(main)
            except NoAssociatedThread:
                self.record(sb, "IRQ", dev.name, n=dev.fired, serviced=0, reason="no_thread")
                continue
            if requester is not None:
                self._io_claims.add(requester.id)
            self.record(sb, "IRQ", dev.name, n=dev.fired, serviced=1,
                        vcpu=io_v.name, budget=io_v.current_C_io, period=io_v.current_T_io)
            act = Activation(dev.name, requester, self.engine.now)
            self.post(acc.handler, act)
            acts.append(act)
        return acts

    def io_complete(self, th: SimThread, dev: Device, acc: DeviceAccess, act: Activation) -> None:
        req = act.requester
        if req is not None:
            self._io_claims.discard(req.id)
            if req.state is ThreadState.BLOCKED_IO:
                req.io_device = None
                req.resume_with(dev.name)
                self.kick(req.sandbox.pcpu)
        if acc.broken:
            return
        th.bump("serviced")
        if dev.reply:
            if acc.filtered:
                th.bump("filtered")
                self.record(th.sandbox, "IO_DONE", dev.name, output="filtered")
            else:
                th.bump("replies")
                self.record(th.sandbox, "IO_DONE", dev.name, output="reply")

    # -- scheduling -------------------------------------------------------

    def _has_work(self, v: Vcpu) -> bool:
        return any(t.state is ThreadState.RUNNABLE for t in v.bound_threads)

    def _schedule_wakeup(self, th: SimThread) -> None:
        th.wake_token += 1
        core = th.sandbox.pcpu
        g = max(self.clock.to_global(core, th.wake_at), self.engine.now)
        self.engine.schedule_event(g, Wakeup(th.id, th.wake_token))

    def _on_request(self, th: SimThread, req) -> None:
        if isinstance(req, (Sleep, NextRelease)):
            self._schedule_wakeup(th)
        elif isinstance(req, Spin):
            lst = self.spinners.setdefault(req.channel, [])
            if th not in lst:
                lst.append(th)
        elif req is None:
            self.record(th.sandbox, "DONE", th.name)

    def _account(self, cs: CoreState) -> None:
        d = cs.running
        if d is None:
            return
        now = self.engine.now
        elapsed = now - d.start
        if elapsed <= 0:
            return
        v, th = d.vcpu, d.thread
        if d.band is Band.FOREGROUND:
            item = v.charge_and_post(d.start_local, elapsed)
            if item.amount == elapsed:
                g = self.clock.to_global(cs.index, item.due_at)
                self.engine.schedule_event(max(g, now), Replenishment(cs.index, v.id))
            v.stats.fg_runtime += elapsed
            v.stats.add_interval(v.stats.fg_intervals, d.start, now)
        else:
            v.background_run(elapsed)
            v.stats.add_interval(v.stats.bg_intervals, d.start, now)
        used = run_workload_slice(th, elapsed, self._on_request)
        if used != elapsed:
            raise InvariantViolation(f"{th.name} used {used} of a {elapsed}-tick slice")
        d.start = now
        d.start_local = self.clock.local(cs.index)

    def _pick(self, sb, local: int):
        for _ in range(_MAX_ZERO_TIME_STEPS):
            res = sb.scheduler.pick_next(local, self._has_work)
            if res is None:
                return None
            v, band = res
            th = next(t for t in v.bound_threads if t.state is ThreadState.RUNNABLE)
            if th.needs_resume:
                self._on_request(th, th.advance())
                continue
            return v, th, band
        raise SimError(f"{sb.name}: program made no progress")

    def _close_run(self, cs: CoreState) -> None:
        if cs.open_run is None:
            return
        _, start, v, th, band = cs.open_run
        cs.open_run = None
        now = self.engine.now
        if now > start:
            self.trace.add(now, cs.index, cs.sandbox.name, "RUN", th.name,
                           format_detail({"vcpu": v.name, "band": band.value,
                                          "start": start, "dur": now - start}))

    def _dispatch(self, cs: CoreState, choice) -> None:
        now = self.engine.now
        if choice is None:
            if cs.open_run is not None:
                self._close_run(cs)
                self.trace.add(now, cs.index, cs.sandbox.name, "SCHED", "idle", "")
            cs.running = None
            self.clock.cancel_timer(cs.index)
            return
        v, th, band = choice
        if band is Band.BACKGROUND and self.check_invariants:
            for o in cs.sandbox.scheduler.vcpus:
                if o.remaining > 0 and o.period is not None and self._has_work(o):
                    self._violation(f"priority: {v.name} in background while {o.name} waits")
        step = th.step_remaining
        slice_ = step
        if band is Band.FOREGROUND:
            slice_ = v.remaining if step is None else min(step, v.remaining)
        cs.running = Dispatch(v, th, band, now, self.clock.local(cs.index))
        key = (v.id, th.id, band)
        if cs.open_run is None or cs.open_run[0] != key:
            self._close_run(cs)
            cs.open_run = (key, now, v, th, band)
            self.trace.add(now, cs.index, cs.sandbox.name, "SCHED", th.name,
                           format_detail({"vcpu": v.name, "band": band.value}))
        if slice_ is None:
            self.clock.cancel_timer(cs.index)
        else:
            self.clock.program_oneshot_timer(cs.index, now + slice_)

    def _reschedule(self, core: int) -> None:
        cs = self.cores[core]
        sb = cs.sandbox
        if sb is None:
            return
        self._account(cs)
        local = self.clock.local(core)
        for v in sb.scheduler.vcpus:
            added = v.apply_replenishments(local)
            if added:
                self.record(sb, "REPL", v.name, amount=added, remaining=v.remaining)
        self.migration.poll(core)
        self._dispatch(cs, self._pick(sb, local))

    # -- event loop -------------------------------------------------------

    def _handle(self, ev) -> None:
        k = ev.kind
        if isinstance(k, TimerFire):
            if self.clock.timer_fired(k.core, ev.seq):
                self._reschedule(k.core)
        elif isinstance(k, (Replenishment, ChannelPoll)):
            self._reschedule(k.core)
        elif isinstance(k, Wakeup):
            th = self._threads_by_id[k.thread]
            if k.token != th.wake_token:
                return
            if th.state is ThreadState.MIGRATING:
                self.migration.defer_wakeup(th)
                return
            if th.state is ThreadState.SLEEPING:
                th.wake_at = None
                th.resume_with(None)
                self._reschedule(th.sandbox.pcpu)
        elif isinstance(k, Ipi):
            self._on_ipi(k)
        elif isinstance(k, DeviceInterrupt):
            dev = self.devices[k.device]
            self.deliver_interrupt(dev)
            self._schedule_interrupt(dev, k.dst_cores[0] + 1)
        elif isinstance(k, FaultInject):
            self._inject(k.fault)
        elif isinstance(k, Directive):
            self._directive(*k.action)
        elif isinstance(k, TraceSample):
            self._sample(k.index)
        else:
            raise SimError(f"unknown event {k!r}")

    def _on_ipi(self, k: Ipi) -> None:
        kind = k.payload[0]
        if kind == "notify":
            _, chname, peer = k.payload
            sb = self.host.sandboxes[peer]
            woken = 0
            for th in list(sb.threads):
                w = th.workload
                if getattr(w, "kind", "") == "receiver" and w.channel == chname and w.mode == "ipi":
                    woken += th.state is ThreadState.WAITING
                    self.post(th, "notify")
            self.record(sb, "IPI_NOTIFY", chname, woken=woken)
        else:
            self.migration.on_ipi(k.dst, k.payload)

    def _inject(self, fault: FaultSpec) -> None:
        self.faults.inject(fault)
        sb = self.host.sandboxes[fault.target]
        last = self.faults.violations[-1] if fault.victim else None
        if last is not None and last.action.kind is ActionKind.START_RECOVERY \
                and last.action.mode == "local":
            self.faults.recover(sb.name, RecoveryPlan("local"))

    def _directive(self, what: str, cfg) -> None:
        if what == "migrate":
            self.migration.submit(cfg.thread, cfg.dst, cfg.best_effort, cfg.delta_actual)
        elif what == "recover":
            sb = self.host.sandboxes[cfg.sandbox]
            if not self.faults.active.get(sb.name):
                self.record(sb, "RECOVER_SKIP", cfg.plan.mode, reason="NoActiveFault")
                return
            self.faults.recover(cfg.sandbox, cfg.plan)

    def _sample(self, index: int) -> None:
        row = {"index": index, "time": self.engine.now, "sandboxes": {}}
        if not self.host.sandboxes:
            self.trace.add(self.engine.now, -1, "-", "SAMPLE", str(index), "")
        for name, counts in self._interval_counts.items():
            sb = self.host.sandboxes[name]
            row["sandboxes"][name] = dict(sorted(counts.items()))
            self.record(sb, "SAMPLE", index, **dict(sorted(counts.items())))
            counts.clear()
        self.samples.append(row)
        nxt = (index + 1) * self.scenario.sample_interval
        if nxt <= self.scenario.duration:
            self.engine.schedule_event(nxt, TraceSample(index + 1))

    def _check(self) -> None:
        for v in self.vcpus.values():
            if not v.capacity_ok():
                self._violation(f"capacity: {v.name} remaining={v.remaining} "
                                f"pending={v.pending_amount()} capacity={v.capacity}")
            if v.stats.distance_violations:
                self._violation(f"distance: {v.name}")
                v.stats.distance_violations = 0

    def _violation(self, msg: str) -> None:
        msg = f"t={self.engine.now}: {msg}"
        self.violations.append(msg)
        if self.strict:
            raise InvariantViolation(msg)

    def run(self, until: Optional[int] = None) -> "Simulation":
        end = self.scenario.duration if until is None else until
        eng = self.engine
        while True:
            t = eng.peek_time()
            if t is None or t > end:
                break
            _, ev = eng.advance()
            self._handle(ev)
            self.events_processed += 1
            if self.check_invariants:
                self._check()
        if eng.peek_time() is not None or eng.now < end:
            eng.now = max(eng.now, end)
        self._finish()
        return self

    def _finish(self) -> None:
        for cs in self.cores:
            if cs.sandbox is None:
                continue
            self._account(cs)
            self._close_run(cs)
            cs.running = None
        self.end_time = self.engine.now
        self._finished = True
        if self.check_invariants:
            self._check()

    # -- results ----------------------------------------------------------

    def sample_series(self, sandbox: str, key: str) -> list[int]:
        return [row["sandboxes"].get(sandbox, {}).get(key, 0) for row in self.samples]

    def vcpu_windows(self, name: str, window: Optional[int] = None) -> np.ndarray:
        """Foreground runtime of ``name`` in consecutive aligned windows."""
        v = self.vcpus[name]
        w = window or v.spec.period
        n = self.end_time // w
        edges = np.arange(n + 1, dtype=np.int64) * w
        before = runtime_before(v.stats.fg_intervals, edges)
        return np.diff(before)

    def vcpu_max_window(self, name: str, window: Optional[int] = None) -> int:
        """Largest foreground runtime in any window of length ``window``."""
        v = self.vcpus[name]
        w = window or v.spec.period
        iv = v.stats.fg_intervals
        if not iv:
            return 0
        starts = np.array([s for s, _ in iv], dtype=np.int64)
        got = runtime_before(iv, starts + w) - runtime_before(iv, starts)
        return int(got.max())

    def summary(self) -> dict:
        sc = self.scenario
        out = {
            "scenario": sc.name,
            "duration": sc.duration,
            "end": self.end_time,
            "events": self.events_processed,
            "sample_interval": sc.sample_interval,
            "samples": {name: {} for name in self.host.sandboxes},
            "vcpus": {},
            "threads": {},
            "interrupts": dict(sorted(self.irq_counts.items())),
            "interrupts_total": sum(self.irq_counts.values()),
            "channels": {},
            "monitor": {},
            "migrations": [r.as_dict() for r in self.migration.reports],
            "recoveries": [r.as_dict() for r in self.faults.reports],
            "violations": list(self.violations),
        }
        keys = sorted({k for row in self.samples for d in row["sandboxes"].values() for k in d})
        for name in self.host.sandboxes:
            out["samples"][name] = {k: self.sample_series(name, k) for k in keys}
        for name, v in self.vcpus.items():
            entry = {
                "sandbox": self.host.on_core(v.pcpu).name,
                "class": v.spec.cls.value,
                "fg_runtime": v.stats.fg_runtime,
                "bg_runtime": v.stats.bg_runtime,
                "sample_runtime": self._sample_runtime(v),
            }
            if v.is_main:
                entry.update(budget=v.spec.budget, period=v.spec.period,
                             max_window=self.vcpu_max_window(name),
                             windows=self.vcpu_windows(name).tolist())
            else:
                entry.update(util=str(v.spec.util))
            out["vcpus"][name] = entry
        for name, th in self.threads.items():
            out["threads"][name] = {"sandbox": th.sandbox.name if th.sandbox else None,
                                    "state": th.state.value, **dict(sorted(th.stats.items()))}
        for name, ch in self.channels.items():
            out["channels"][name] = {"sent": ch.sent, "received": ch.received}
        for name, sb in self.host.sandboxes.items():
            out["monitor"][name] = {c.value: n for c, n in sorted(sb.monitor.traps.items(),
                                                                   key=lambda x: x[0].value)}
        return out

    def _sample_runtime(self, v: Vcpu) -> list[int]:
        iv = v.stats.fg_intervals + v.stats.bg_intervals
        n = self.end_time // self.scenario.sample_interval
        if n == 0:
            return []
        iv = sorted(iv)
        edges = np.arange(n + 1, dtype=np.int64) * self.scenario.sample_interval
        return np.diff(runtime_before(iv, edges)).tolist()


def runtime_before(intervals, times) -> np.ndarray:
    """Total length of sorted, disjoint ``[start, end)`` intervals before each time."""
    times = np.asarray(times, dtype=np.int64)
    if not len(intervals):
        return np.zeros(len(times), dtype=np.int64)
    arr = np.asarray(intervals, dtype=np.int64)
    starts, ends = arr[:, 0], arr[:, 1]
    durs = ends - starts
    cum = np.concatenate(([0], np.cumsum(durs)))
    idx = np.searchsorted(starts, times, side="right") - 1
    safe = np.clip(idx, 0, None)
    partial = np.clip(times - starts[safe], 0, durs[safe])
    res = cum[safe] + partial
    return np.where(idx < 0, 0, res)


def run_scenario(scenario: Scenario, until: Optional[int] = None, **kw) -> Simulation:
    return Simulation(scenario, **kw).run(until)
