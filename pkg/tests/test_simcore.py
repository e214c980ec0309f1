from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from vmksim.simcore import (ClockModel, CycleAccumulator, EmptyQueue, Engine, PastTime,
                            TimerFire, UnknownCore, cycles_to_ticks)


def test_first_insertion_gets_id_zero():
    eng = Engine()
    assert eng.schedule_event(50, TimerFire(0)) == 0
    assert len(eng) == 1


def test_equal_times_dequeue_in_insertion_order():
    eng = Engine()
    eng.schedule_event(100, "A")
    eng.schedule_event(100, "B")
    assert [eng.advance()[1].kind for _ in range(2)] == ["A", "B"]


def test_scheduling_in_the_past_fails():
    eng = Engine(start=10)
    with pytest.raises(PastTime):
        eng.schedule_event(5, "x")


def test_advance_returns_earliest():
    eng = Engine()
    eng.schedule_event(5, "A")
    eng.schedule_event(3, "B")
    t, ev = eng.advance()
    assert (t, ev.kind) == (3, "B")


def test_advance_drains_and_sets_now():
    eng = Engine()
    eng.schedule_event(7, "A")
    eng.advance()
    assert len(eng) == 0 and eng.now == 7


def test_advance_on_empty_queue():
    with pytest.raises(EmptyQueue):
        Engine().advance()


def test_cancelled_events_are_skipped():
    eng = Engine()
    a = eng.schedule_event(1, "A")
    eng.schedule_event(2, "B")
    eng.cancel(a)
    assert len(eng) == 1
    assert eng.advance()[1].kind == "B"


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=60))
def test_advance_is_monotone_and_fifo_on_ties(times):
    eng = Engine()
    for i, t in enumerate(times):
        eng.schedule_event(t, i)
    out = [eng.advance() for _ in times]
    assert [t for t, _ in out] == sorted(times)
    # stable sort of insertion indices by time is the expected order
    assert [ev.kind for _, ev in out] == sorted(range(len(times)), key=lambda i: times[i])


def _clock(skews, **kw):
    eng = Engine()
    return eng, ClockModel(eng, len(skews), skews, **kw)


def test_read_tsc_zero_skew():
    eng, clk = _clock([0, 250, 0, 0])
    eng.now = 1000
    assert clk.read_tsc(0) == 1000


def test_read_tsc_positive_skew():
    eng, clk = _clock([0, 250, 0, 0])
    eng.now = 1000
    assert clk.read_tsc(1) == 1250


def test_read_tsc_unknown_core():
    _, clk = _clock([0, 0, 0, 0])
    with pytest.raises(UnknownCore):
        clk.read_tsc(9)


def test_read_tsc_charges_cost():
    _, clk = _clock([0, 0], rdtsc_cost=3)
    clk.read_tsc(1)
    clk.read_tsc(1)
    assert clk.rdtsc_charged == [0, 6]


@given(st.lists(st.integers(-10**6, 10**6), min_size=2, max_size=6),
       st.integers(0, 10**9), st.data())
def test_tsc_differences_equal_skew_differences(skews, now, data):
    eng, clk = _clock(skews)
    eng.now = now
    a = data.draw(st.integers(0, len(skews) - 1))
    b = data.draw(st.integers(0, len(skews) - 1))
    assert clk.read_tsc(a) - clk.read_tsc(b) == skews[a] - skews[b]
    assert clk.to_global(a, clk.local(a)) == now


def test_reprogramming_supersedes_the_pending_timer():
    eng, clk = _clock([0])
    clk.program_oneshot_timer(0, 50)
    latest = clk.program_oneshot_timer(0, 30)
    fired = []
    while eng.peek_time() is not None:
        _, ev = eng.advance()
        if clk.timer_fired(ev.kind.core, ev.seq):
            fired.append(eng.now)
    assert fired == [30]
    assert latest is not None


def test_timers_on_different_cores_are_independent():
    eng, clk = _clock([0, 0])
    clk.program_oneshot_timer(0, 50)
    clk.program_oneshot_timer(1, 50)
    seen = []
    while eng.peek_time() is not None:
        _, ev = eng.advance()
        if clk.timer_fired(ev.kind.core, ev.seq):
            seen.append(ev.kind.core)
    assert seen == [0, 1]


def test_timer_in_the_past():
    eng, clk = _clock([0])
    eng.now = 10
    with pytest.raises(PastTime):
        clk.program_oneshot_timer(0, 9)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 500)), max_size=30))
def test_at_most_one_pending_timer_per_core(programs):
    eng, clk = _clock([0, 0])
    for core, at in programs:
        clk.program_oneshot_timer(core, at)
        pending = [ev for ev in eng._heap if ev.seq not in eng._cancelled
                   and isinstance(ev.kind, TimerFire)]
        for c in (0, 1):
            assert sum(1 for ev in pending if ev.kind.core == c) <= 1


def test_accumulator_carries_fractions():
    acc = CycleAccumulator(2133)
    assert acc.charge(2000) == 0
    assert acc.charge(2000) == 1
    assert acc.residue == 4000 - 2133


@given(st.lists(st.integers(0, 10**7), max_size=40))
def test_accumulator_never_loses_cycles(charges):
    acc = CycleAccumulator(2133)
    ticks = sum(acc.charge(c) for c in charges)
    assert ticks * 2133 + acc.residue == sum(charges)
    assert 0 <= acc.residue < 2133


def test_cycles_to_ticks_rounds_up():
    assert cycles_to_ticks(2133) == 1
    assert cycles_to_ticks(2134) == 2
    assert cycles_to_ticks(Fraction(0)) == 0
