"""Invariant suite run by ``vmksim verify``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .fault import FaultKind
from .sandbox import TrapCause
from .scenario import Scenario
from .simulation import Simulation


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class VerifyReport:
    scenario: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def get(self, name: str) -> Optional[Check]:
        for c in self.checks:
            if c.name == name:
                return c
        return None

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]


def _run(sc: Scenario) -> Simulation:
    return Simulation(sc, strict=False).run()


def _prefixed(sim: Simulation, prefix: str) -> list[str]:
    return [v for v in sim.violations if v.split(": ", 1)[-1].startswith(prefix)]


def check_capacity(sim: Simulation) -> Check:
    bad = _prefixed(sim, "capacity")
    return Check("capacity", not bad, f"{len(bad)} violations" + (f", first {bad[0]}" if bad else ""))


def check_distance(sim: Simulation) -> Check:
    bad = _prefixed(sim, "distance")
    return Check("replenishment_distance", not bad, f"{len(bad)} violations")


def check_priority(sim: Simulation) -> Check:
    bad = _prefixed(sim, "priority")
    return Check("background_below_foreground", not bad, f"{len(bad)} violations")


def check_utilization(sim: Simulation) -> Check:
    worst = []
    for name, v in sim.vcpus.items():
        if not v.is_main:
            continue
        got = sim.vcpu_max_window(name)
        if got > v.spec.budget:
            worst.append(f"{name} {got}>{v.spec.budget}")
    return Check("utilization_ceiling", not worst,
                 "every period-length window within budget" if not worst else ", ".join(worst))


def check_monitor(sim: Simulation) -> Check:
    allowed = set(TrapCause)
    problems = []
    cross = {}
    for f in sim.faults.history:
        if f.kind is FaultKind.CROSS_WRITE:
            cross[f.target] = cross.get(f.target, 0) + 1
    chans = {}
    for ch in sim.channels.values():
        for end in (ch.endpoint_a, ch.endpoint_b):
            chans[end] = chans.get(end, 0) + 1
    for name, sb in sim.host.sandboxes.items():
        traps = sb.monitor.traps
        if set(traps) - allowed:
            problems.append(f"{name}: unexpected causes")
        if traps.get(TrapCause.EPT_VIOLATION, 0) != cross.get(name, 0):
            problems.append(f"{name}: EPT traps {traps.get(TrapCause.EPT_VIOLATION, 0)}")
        if traps.get(TrapCause.CHANNEL_MAP, 0) != chans.get(name, 0):
            problems.append(f"{name}: channel-map traps")
        if sb.monitor.code_size_pages != 1:
            problems.append(f"{name}: monitor larger than one page")
    total = sum(sum(sb.monitor.traps.values()) for sb in sim.host.sandboxes.values())
    return Check("monitor_minimality", not problems,
                 f"{total} traps, all expected" if not problems else "; ".join(problems))


def check_interrupts(sim: Simulation) -> Check:
    problems = []
    irq_records = sim.trace.counts.get("IRQ", 0)
    expected = sum(d.fired * len(d.access) for d in sim.devices.values())
    for sb in sim.host.sandboxes:
        want = sum(d.fired for d in sim.devices.values() if d.access_for(sb) is not None)
        if sim.irq_counts[sb] != want:
            problems.append(f"{sb} counted {sim.irq_counts[sb]} of {want}")
    if irq_records != expected or sum(sim.irq_counts.values()) != expected:
        problems.append(f"{irq_records} IRQ records, {expected} deliveries")
    return Check("interrupt_accounting", not problems,
                 f"{expected} deliveries" if not problems else "; ".join(problems))


def check_messages(sim: Simulation) -> Check:
    problems = []
    for name, ch in sim.channels.items():
        in_flight = sum(1 for b in (ch.mailbox_a, ch.mailbox_b)
                        if b.full and not b.corrupt and b.message is not None)
        if ch.sent != ch.received + in_flight + ch.lost:
            problems.append(f"{name}: sent {ch.sent} received {ch.received} "
                            f"in flight {in_flight} lost {ch.lost}")
    for sb, recs in sim.receptions.items():
        seen = set()
        for _, ch, seq in recs:
            if (ch, seq) in seen:
                problems.append(f"{sb}: duplicate {ch}#{seq}")
            seen.add((ch, seq))
    return Check("message_conservation", not problems,
                 "every sent message received once or still queued" if not problems
                 else "; ".join(problems[:3]))


def affected_sandboxes(sc: Scenario) -> set[str]:
    """Fault targets plus the peers on channels they corrupt."""
    hit = set()
    chans = {c.name: c for c in sc.channels}
    for f in sc.faults:
        hit.add(f.target)
        if f.kind is FaultKind.CHANNEL_CORRUPT:
            c = chans[f.channel]
            hit.update((c.a, c.b))
    for r in sc.recoveries:
        hit.add(r.sandbox)
        if r.plan.standby:
            hit.add(r.plan.standby)
    return hit


def check_containment(sim: Simulation, control: Simulation) -> Check:
    hit = affected_sandboxes(sim.scenario)
    diffs = []
    for name in sim.host.sandboxes:
        if name in hit:
            continue
        if sim.receptions[name] != control.receptions[name]:
            diffs.append(name)
        for key in ("irq", "replies", "frames"):
            if sim.sample_series(name, key) != control.sample_series(name, key):
                diffs.append(f"{name}.{key}")
    untouched = sorted(set(sim.host.sandboxes) - hit)
    return Check("containment", not diffs,
                 f"identical to control outside {sorted(hit)}: {untouched}" if not diffs
                 else f"deviations in {diffs}")


def migration_vcpus(sim: Simulation) -> set[str]:
    out = set()
    for sb in sim.host.sandboxes.values():
        w = sim.worker_for(sb, "migration")
        if w is not None:
            out.add(w.vcpu.name)
    return out


def check_migration(sim: Simulation, control: Simulation) -> Check:
    skip = migration_vcpus(sim)
    diffs = []
    for name, v in sim.vcpus.items():
        if not v.is_main or name in skip:
            continue
        if sim.vcpu_windows(name).tolist() != control.vcpu_windows(name).tolist():
            diffs.append(name)
    done = [r for r in sim.migration.reports if r.outcome == "completed"]
    return Check("migration_utilization", not diffs,
                 f"{len(done)} migrations, per-period windows unchanged" if not diffs
                 else f"windows differ for {diffs}")


def check_determinism(sim: Simulation) -> Check:
    again = _run(sim.scenario)
    same = again.trace.to_csv() == sim.trace.to_csv()
    return Check("determinism", same, f"{len(sim.trace)} records" + ("" if same else " differ"))


def verify(sc: Scenario) -> VerifyReport:
    sim = _run(sc)
    rep = VerifyReport(sc.name)
    rep.checks += [check_capacity(sim), check_distance(sim), check_priority(sim),
                   check_utilization(sim), check_monitor(sim), check_interrupts(sim),
                   check_messages(sim)]
    if sc.faults:
        rep.checks.append(check_containment(sim, _run(sc.control())))
    if sc.migrations:
        rep.checks.append(check_migration(sim, _run(sc.without_migrations())))
    rep.checks.append(check_determinism(sim))
    return rep
