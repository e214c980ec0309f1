import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from oracles import admission_oracle, sporadic_server
from vmksim.sched import (Band, MalformedSpec, NoAssociatedThread, Overrun, PcpuScheduler,
                          Vcpu, VcpuSpec, admit, eq1_lhs, io_vcpu_params, rm_bound)

MS = 1000


def test_two_mains_and_an_io_vcpu_are_admitted():
    got = admit([VcpuSpec.main(20, 100), VcpuSpec.main(20, 100)], VcpuSpec.io("0.04"))
    assert got.accepted
    assert got.lhs == Fraction(4784, 10000)
    assert got.bound == pytest.approx(2 * (math.sqrt(2) - 1))


def test_three_forty_percent_mains_are_rejected():
    got = admit([VcpuSpec.main(40, 100)] * 2, VcpuSpec.main(40, 100))
    assert not got.accepted
    assert got.lhs == Fraction(12, 10)
    assert got.bound == pytest.approx(0.7798, abs=1e-4)


def test_single_main_bound_is_exactly_one():
    got = admit([], VcpuSpec.main(1, 1000))
    assert got.accepted and got.bound == 1.0
    assert admit([], VcpuSpec.main(1000, 1000)).accepted


def test_bound_errs_on_the_reject_side():
    for n in range(2, 12):
        assert rm_bound(n) < n * (2 ** (1 / n) - 1)
    assert rm_bound(0) == 0.0


def test_io_only_set_is_rejected():
    assert not admit([], VcpuSpec.io("0.01"))


def test_table_one_source_set_exceeds_the_bound():
    # shell, migration, Canny, logger, comms at their listed parameters
    listed = [VcpuSpec.main(20, 100), VcpuSpec.main(10, 50), VcpuSpec.main(20, 100),
              VcpuSpec.main(20, 100)]
    got = admit(listed, VcpuSpec.main(10, 100))
    assert got.lhs == Fraction(9, 10)
    assert not got.accepted


def test_pcpu_scheduler_counts_reservations():
    s = PcpuScheduler(0)
    s.add(Vcpu(0, VcpuSpec.main(40, 100)))
    s.reserved.append(VcpuSpec.main(40, 100))
    assert not s.admit(VcpuSpec.main(40, 100))
    s.reserved.clear()
    assert s.admit(VcpuSpec.main(30, 100))


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(1, 100), st.integers(1, 100)), max_size=5),
       st.lists(st.integers(1, 99), max_size=3))
def test_admission_matches_exact_oracle(pairs, io_pcts):
    mains = [(min(c, t), t) for c, t in pairs]
    ios = [Fraction(p, 100) for p in io_pcts]
    specs = [VcpuSpec.main(c, t) for c, t in mains] + [VcpuSpec.io(u) for u in ios]
    if not specs:
        return
    *current, cand = specs
    want, lhs = admission_oracle(mains, ios)
    got = admit(current, cand)
    assert got.lhs == lhs
    assert got.accepted == want


def test_malformed_specs():
    with pytest.raises(MalformedSpec):
        VcpuSpec.main(0, 10)
    with pytest.raises(MalformedSpec):
        VcpuSpec.main(11, 10)
    with pytest.raises(MalformedSpec):
        VcpuSpec.io(1)


def test_io_params_inherit_the_main_period():
    assert io_vcpu_params(50 * MS, 0.04) == (2 * MS, 50 * MS)
    assert io_vcpu_params(10 * MS, "0.10") == (1 * MS, 10 * MS)


def test_io_params_round_half_up():
    assert io_vcpu_params(25, Fraction(1, 10)) == (3, 25)
    assert io_vcpu_params(24, Fraction(1, 10)) == (2, 24)


def test_io_params_need_positive_util():
    with pytest.raises(MalformedSpec):
        io_vcpu_params(50 * MS, 0)


def _sched(*specs):
    s = PcpuScheduler(0)
    vs = [Vcpu(i, sp) for i, sp in enumerate(specs)]
    for v in vs:
        s.add(v, check=False)
    return s, vs


def test_pick_prefers_shorter_period():
    s, (a, b) = _sched(VcpuSpec.main(10, 50), VcpuSpec.main(10, 100))
    assert s.pick_next(0, lambda v: True) == (a, Band.FOREGROUND)


def test_budgetless_vcpu_drops_to_background():
    s, (a, b) = _sched(VcpuSpec.main(10, 50), VcpuSpec.main(10, 100))
    a.charge_and_post(0, 10)
    assert s.pick_next(10, lambda v: True) == (b, Band.FOREGROUND)
    b.charge_and_post(10, 10)
    assert s.pick_next(20, lambda v: True) == (a, Band.BACKGROUND)


def test_nothing_runnable_is_idle():
    s, _ = _sched(VcpuSpec.main(10, 50))
    assert s.pick_next(0, lambda v: False) is None


def test_equal_periods_break_by_id():
    s, (a, b) = _sched(VcpuSpec.main(10, 50), VcpuSpec.main(10, 50))
    assert s.pick_next(0, lambda v: True)[0] is a


def test_idle_io_vcpu_is_never_picked():
    s, (io,) = _sched(VcpuSpec.io("0.1"))
    assert s.pick_next(0, lambda v: True) is None


def test_full_budget_run_posts_one_credit():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    v.charge_and_post(0, 20)
    assert v.remaining == 0
    assert [(r.amount, r.due_at) for r in v.replenishments] == [(20, 50)]


def test_disjoint_busy_intervals_post_separate_credits():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    v.charge_and_post(0, 5)
    v.charge_and_post(10, 5)
    assert [(r.amount, r.due_at) for r in v.replenishments] == [(5, 50), (5, 60)]


def test_zero_run_changes_nothing():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    v.charge_and_post(0, 0)
    assert v.remaining == 20 and not v.replenishments


def test_overrun_is_an_engine_bug():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    with pytest.raises(Overrun):
        v.charge_and_post(0, 21)


def test_due_credit_is_applied():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    v.charge_and_post(0, 20)
    assert v.apply_replenishments(50) == 20
    assert v.remaining == 20 and not v.replenishments


def test_future_credit_waits():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    v.charge_and_post(0, 5)
    v.charge_and_post(10, 5)
    v.apply_replenishments(50)
    assert [(r.amount, r.due_at) for r in v.replenishments] == [(5, 60)]
    assert v.apply_replenishments(50) == 0


def test_background_run_is_free():
    v = Vcpu(0, VcpuSpec.main(20, 50))
    v.charge_and_post(0, 20)
    v.background_run(10)
    assert v.remaining == 0 and len(v.replenishments) == 1
    assert v.stats.bg_runtime == 10
    v.background_run(0)
    assert v.stats.bg_runtime == 10


def test_background_run_needs_background_band():
    with pytest.raises(ValueError):
        Vcpu(0, VcpuSpec.main(20, 50)).background_run(1)


def test_io_service_request_inherits_requester_period():
    io = Vcpu(1, VcpuSpec.io(0.04))
    assert io.io_service_request(Vcpu(0, VcpuSpec.main(20, 50))) == (2, 50)
    assert (io.current_T_io, io.current_C_io, io.capacity) == (50, 2, 2)
    io10 = Vcpu(2, VcpuSpec.io("0.10"))
    assert io10.io_service_request(Vcpu(0, VcpuSpec.main(20, 100))) == (10, 100)


def test_io_service_request_without_requester():
    with pytest.raises(NoAssociatedThread):
        Vcpu(1, VcpuSpec.io(0.04)).io_service_request(None)


def test_io_capacity_shrink_keeps_invariant():
    io = Vcpu(1, VcpuSpec.io("0.1"))
    io.io_service_request(Vcpu(0, VcpuSpec.main(10, 100)))
    io.charge_and_post(0, 8)
    io.io_service_request(Vcpu(0, VcpuSpec.main(10, 50)))
    assert io.capacity_ok() and io.capacity == 5


segments = st.lists(st.tuples(st.integers(0, 40), st.integers(1, 30)), min_size=1, max_size=40)


def _drive(v, plan):
    """Run ``plan`` of (gap, want) steps; returns foreground segments."""
    now, segs = 0, []
    for gap, want in plan:
        now += gap
        v.apply_replenishments(now)
        while want and v.remaining:
            take = min(want, v.remaining)
            v.charge_and_post(now, take)
            segs.append((now, take))
            now += take
            want -= take
            assert v.capacity_ok()
            v.apply_replenishments(now)
        if want:
            v.background_run(want)
            now += want
        assert v.capacity_ok()
    return segs


@given(st.integers(1, 30), st.integers(0, 60), segments)
def test_capacity_invariant_and_distance_hold(budget, extra, plan):
    period = budget + extra
    v = Vcpu(0, VcpuSpec.main(budget, period))
    _drive(v, plan)
    assert v.stats.distance_violations == 0


@given(st.integers(1, 20), st.integers(0, 40), segments)
def test_foreground_runtime_per_window_never_exceeds_budget(budget, extra, plan):
    period = budget + extra
    v = Vcpu(0, VcpuSpec.main(budget, period))
    segs = _drive(v, plan)
    ran = set()
    for s, n in segs:
        ran.update(range(s, s + n))
    for start in {s for s, _ in segs}:
        assert sum(1 for t in ran if start <= t < start + period) <= budget


@given(st.lists(st.tuples(st.integers(0, 20), st.integers(1, 10)), min_size=1, max_size=25))
def test_credits_match_hand_simulated_server(plan):
    budget = period = 1000
    v = Vcpu(0, VcpuSpec.main(budget, period))
    now, segs = 0, []
    for gap, n in plan:
        now += gap
        v.charge_and_post(now, n)
        segs.append((now, n))
        now += n
    got = sorted((r.amount, r.due_at) for r in v.replenishments)
    assert got == sorted(sporadic_server(budget, period, segs))


def test_replenishment_list_is_capped():
    v = Vcpu(0, VcpuSpec.main(1000, 100000))
    for i in range(50):
        v.charge_and_post(i * 10, 1)
    assert len(v.replenishments) == 32
    assert v.capacity_ok()
    assert v.replenishments[-1].due_at == 490 + 100000


def test_eq1_lhs_io_term():
    assert eq1_lhs([VcpuSpec.io("0.5")]) == Fraction(3, 4)
