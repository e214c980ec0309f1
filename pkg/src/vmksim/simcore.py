"""Deterministic discrete-event engine with per-core skewed TSCs.

Time is kept in integer ticks (1 tick = 1 microsecond of simulated time).
Costs that are naturally expressed in CPU cycles are converted through
``cycles_per_tick``; sub-tick remainders are carried in a
:class:`CycleAccumulator` so that nothing is lost to rounding.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

DEFAULT_CYCLES_PER_TICK = 2133


class SimError(Exception):
    """Base class for simulator errors."""


class PastTime(SimError):
    pass


class EmptyQueue(SimError):
    pass


class UnknownCore(SimError):
    pass


# ---------------------------------------------------------------------------
# event kinds

@dataclass(frozen=True)
class TimerFire:
    core: int


@dataclass(frozen=True)
class Ipi:
    src: int
    dst: int
    payload: Any = None


@dataclass(frozen=True)
class DeviceInterrupt:
    device: str
    dst_cores: tuple = ()


@dataclass(frozen=True)
class Replenishment:
    core: int
    vcpu: int


@dataclass(frozen=True)
class Wakeup:
    thread: int
    token: int = 0


@dataclass(frozen=True)
class FaultInject:
    fault: Any


@dataclass(frozen=True)
class ChannelPoll:
    core: int
    channel: str = ""


@dataclass(frozen=True)
class TraceSample:
    index: int = 0


@dataclass(frozen=True)
class Directive:
    """Scenario-level action (migration or recovery request)."""
    action: Any


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int
    kind: Any = field(compare=False)

    @property
    def id(self) -> int:
        return self.seq


# ---------------------------------------------------------------------------

class Engine:
    """Priority queue of timestamped events.

    Ties on ``fire_at`` are broken by insertion order, so a run is fully
    determined by the order in which events are scheduled.
    """

    def __init__(self, start: int = 0):
        self.now = start
        self._heap: list[Event] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self._live = 0

    def __len__(self) -> int:
        return self._live

    def schedule_event(self, fire_at: int, kind: Any) -> int:
        if fire_at < self.now:
            raise PastTime(f"cannot schedule at {fire_at}, now is {self.now}")
        ev = Event(int(fire_at), self._seq, kind)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        self._live += 1
        return ev.seq

    def cancel(self, event_id: int) -> None:
        if event_id not in self._cancelled:
            self._cancelled.add(event_id)
            self._live -= 1

    def _drop_cancelled(self) -> None:
        while self._heap and self._heap[0].seq in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._heap).seq)

    def peek_time(self) -> Optional[int]:
        self._drop_cancelled()
        return self._heap[0].fire_at if self._heap else None

    def advance(self) -> tuple[int, Event]:
        self._drop_cancelled()
        if not self._heap:
            raise EmptyQueue("no pending events")
        ev = heapq.heappop(self._heap)
        self._live -= 1
        self.now = ev.fire_at
        return ev.fire_at, ev


@dataclass
class CoreClock:
    core_id: int
    skew: int = 0
    rdtsc_cost: int = 0
    ipi_cost: int = 1


class ClockModel:
    """Per-core timestamp counters that differ from global time by a
    constant offset, plus one pending one-shot timer per core."""

    def __init__(self, engine: Engine, cores: int, skews=None,
                 rdtsc_cost: int = 0, ipi_cost: int = 1):
        skews = list(skews or [0] * cores)
        if len(skews) != cores:
            raise ValueError("need one skew per core")
        self.engine = engine
        self.cores = [CoreClock(i, int(s), rdtsc_cost, ipi_cost)
                      for i, s in enumerate(skews)]
        self._timers: dict[int, int] = {}
        self.rdtsc_charged = [0] * cores

    def _core(self, core: int) -> CoreClock:
        if not 0 <= core < len(self.cores):
            raise UnknownCore(f"core {core} (have {len(self.cores)})")
        return self.cores[core]

    def skew(self, core: int) -> int:
        return self._core(core).skew

    def read_tsc(self, core: int) -> int:
        c = self._core(core)
        self.rdtsc_charged[core] += c.rdtsc_cost
        return self.engine.now + c.skew

    def local(self, core: int, global_time: Optional[int] = None) -> int:
        t = self.engine.now if global_time is None else global_time
        return t + self._core(core).skew

    def to_global(self, core: int, local_time: int) -> int:
        return local_time - self._core(core).skew

    def program_oneshot_timer(self, core: int, fire_at: int) -> int:
        self._core(core)
        if fire_at < self.engine.now:
            raise PastTime(f"timer at {fire_at} < now {self.engine.now}")
        self.cancel_timer(core)
        eid = self.engine.schedule_event(fire_at, TimerFire(core))
        self._timers[core] = eid
        return eid

    def cancel_timer(self, core: int) -> None:
        eid = self._timers.pop(core, None)
        if eid is not None:
            self.engine.cancel(eid)

    def timer_fired(self, core: int, event_id: int) -> bool:
        """Consume a TimerFire; False means it was superseded."""
        if self._timers.get(core) != event_id:
            return False
        del self._timers[core]
        return True

    def pending_timer(self, core: int) -> Optional[int]:
        return self._timers.get(core)


class CycleAccumulator:
    """Converts cycle costs to whole ticks, carrying the fractional part."""

    def __init__(self, cycles_per_tick: int = DEFAULT_CYCLES_PER_TICK):
        self.cycles_per_tick = cycles_per_tick
        self.residue = Fraction(0)
        self.total_cycles = Fraction(0)

    def charge(self, cycles) -> int:
        cycles = Fraction(cycles)
        self.total_cycles += cycles
        self.residue += cycles
        ticks = int(self.residue // self.cycles_per_tick)
        self.residue -= ticks * self.cycles_per_tick
        return ticks


def cycles_to_ticks(cycles, cycles_per_tick: int = DEFAULT_CYCLES_PER_TICK) -> int:
    """Ceiling conversion for one-off costs that must not be under-charged."""
    c = Fraction(cycles)
    q = c / cycles_per_tick
    return int(-(-q.numerator // q.denominator))
