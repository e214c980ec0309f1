import pytest

from builders import io, main, sandbox, scenario, thread
from vmksim import Simulation
from vmksim.sandbox import (OK, RW, ActionKind, CoreTaken, EptViolation, Host, OutOfHostPages,
                            SimThread, ThreadState, TrapCause, monitor_trap, run_workload_slice)
from vmksim.workloads import CannyLoop, Hog, make_workload


def _host(n=4, pages=1024):
    h = Host(n, n * pages + 64)
    return h, [h.create_sandbox(i, pages) for i in range(n)]


def test_private_ranges_are_disjoint():
    _, sbs = _host()
    seen = set()
    for sb in sbs:
        assert seen.isdisjoint(sb.private)
        seen.update(sb.private)


def test_one_sandbox_per_core():
    h, _ = _host(2)
    with pytest.raises(CoreTaken):
        h.create_sandbox(0, 1)


def test_host_memory_is_finite():
    h = Host(2, 100)
    h.create_sandbox(0, 60)
    with pytest.raises(OutOfHostPages):
        h.create_sandbox(1, 60)


def test_write_to_own_page():
    _, (a, *_) = _host()
    assert a.write(a.private.start, b"x") is OK
    assert a.monitor.handled_violations == 0


def test_cross_sandbox_write_traps_and_is_suppressed():
    h, (a, b, c, d) = _host()
    h.memory.contents[c.private.start] = b"victim"
    got = a.write(c.private.start, b"evil")
    assert isinstance(got, EptViolation) and not got
    assert a.monitor.handled_violations == 1
    assert a.monitor.traps[TrapCause.EPT_VIOLATION] == 1
    assert h.memory.contents[c.private.start] == b"victim"


def test_shared_pages_are_writable_by_both_endpoints():
    h, (a, b, *_) = _host()
    shared = h.memory.allocate(1)
    for sb in (a, b):
        sb.map_pages(shared.start, 1, RW)
    assert a.write(shared.start, b"1") and b.write(shared.start, b"2")


def test_ept_trap_costs_exit_plus_enter():
    _, (a, *_) = _host(1)
    a.monitor.policy = "recover-local"
    act = monitor_trap(a, TrapCause.EPT_VIOLATION)
    assert act.kind is ActionKind.START_RECOVERY and act.mode == "local"
    assert act.cycles == 885 + 663


def test_explicit_exit_takes_the_same_path():
    _, (a, *_) = _host(1)
    a.monitor.policy = "recover-remote"
    act = monitor_trap(a, TrapCause.EXPLICIT_EXIT)
    assert (act.kind, act.cycles, act.mode) == (ActionKind.START_RECOVERY, 1548, "remote")


def test_log_policy_resumes():
    _, (a, *_) = _host(1)
    assert monitor_trap(a, TrapCause.EPT_VIOLATION).kind is ActionKind.LOG_AND_RESUME


def test_canny_frames_follow_work():
    th = SimThread(0, "canny", CannyLoop(work_per_frame=10_000))
    assert run_workload_slice(th, 20_000) == 20_000
    assert th.stats["frames"] == 2


def test_hog_stays_runnable():
    th = SimThread(0, "hog", Hog())
    assert run_workload_slice(th, 2_000) == 2_000
    assert th.state is ThreadState.RUNNABLE


def test_unknown_workload():
    with pytest.raises(ValueError):
        make_workload({"type": "nope"})
    with pytest.raises(ValueError):
        make_workload({"type": "hog", "speed": 3})


def _pair(interval):
    return scenario(
        duration="300ms", cores=2,
        sandbox=[sandbox("s", 0), sandbox("r", 1)],
        vcpu=[main("sv", "s", "20ms", "100ms"), main("rv", "r", "20ms", "100ms")],
        thread=[thread("tx", "sv", {"type": "sender", "channels": ["c"], "interval": interval}),
                thread("rx", "rv", {"type": "receiver", "channel": "c", "interval": "10ms"})],
        channel=[{"name": "c", "a": "s", "b": "r"}])


def test_sender_blocks_until_next_interval():
    sim = Simulation(_pair("50ms")).run()
    sends = [r.time_tick for r in sim.trace.of_kind("MSG_SEND")]
    assert len(sends) == 7  # releases at 0, 50, ..., 300 ms inclusive
    assert all(50_000 * k <= t < 50_000 * k + 1000 for k, t in enumerate(sends))


def _irq_scenario(access):
    return scenario(
        duration="30ms", cores=2,
        sandbox=[sandbox("a", 0), sandbox("b", 1)],
        vcpu=[main("a.m", "a", "10ms", "50ms"), io("a.io", "a", "0.04"),
              main("b.m", "b", "10ms", "50ms"), io("b.io", "b", "0.04")],
        device=[{"name": "nic", "start": "1ms", "interval": "10ms", "handler_cost": 10,
                 "access": access}])


def test_interrupt_reaches_every_sandbox_with_access():
    acc = [{"sandbox": s, "io_vcpu": f"{s}.io", "default_vcpu": f"{s}.m"} for s in "ab"]
    sim = Simulation(_irq_scenario(acc)).run()
    irqs = sim.trace.of_kind("IRQ")
    assert [(r.time_tick, r.sandbox) for r in irqs[:2]] == [(1000, "a"), (1000, "b")]
    assert dict(sim.irq_counts) == {"a": 3, "b": 3}
    assert sum(sim.irq_counts.values()) == sum(d.fired * len(d.access) for d in sim.devices.values())


def test_interrupt_without_access_activates_nothing():
    sim = Simulation(_irq_scenario([])).run()
    assert sim.devices["nic"].fired == 3
    assert not sim.trace.of_kind("IRQ") and sum(sim.irq_counts.values()) == 0


def test_no_monitor_traps_after_boot_without_faults(run_bundled):
    sim = run_bundled("fig4_schedule")
    assert all(sum(sb.monitor.traps.values()) == 0 for sb in sim.host.sandboxes.values())
