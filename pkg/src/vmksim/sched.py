"""Per-PCPU hierarchical VCPU scheduling.

Main VCPUs behave as sporadic servers; I/O VCPUs are bandwidth-preserving
servers whose period and budget are inherited from the Main VCPU of the
thread that issued the I/O request.  VCPUs are ranked rate-monotonically,
and a VCPU that has used up its budget drops into a background band that
sits below every foreground priority.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, Union

from .simcore import SimError

MAX_REPLENISHMENTS = 32


class MalformedSpec(SimError, ValueError):
    pass


class Overrun(SimError):
    """A VCPU was charged more than its remaining budget (engine bug)."""


class NoAssociatedThread(SimError):
    pass


class VcpuClass(enum.Enum):
    MAIN = "main"
    IO = "io"


class Band(enum.Enum):
    FOREGROUND = "fg"
    BACKGROUND = "bg"


def _as_fraction(x) -> Fraction:
    if isinstance(x, float):
        # go through repr so 0.04 means 4/100, not the nearest binary float
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class VcpuSpec:
    cls: VcpuClass
    budget: int = 0
    period: int = 0
    util: Fraction = Fraction(0)
    allow_background: bool = True

    @classmethod
    def main(cls, budget: int, period: int, allow_background: bool = True) -> "VcpuSpec":
        spec = cls(VcpuClass.MAIN, int(budget), int(period),
                   Fraction(int(budget), int(period)) if period > 0 else Fraction(0),
                   allow_background)
        spec.validate()
        return spec

    @classmethod
    def io(cls, util, allow_background: bool = True) -> "VcpuSpec":
        spec = cls(VcpuClass.IO, 0, 0, _as_fraction(util), allow_background)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.cls is VcpuClass.MAIN:
            if not (0 < self.budget <= self.period):
                raise MalformedSpec(f"Main VCPU needs 0 < C <= T, got {self.budget}/{self.period}")
            if self.util != Fraction(self.budget, self.period):
                raise MalformedSpec("Main VCPU utilization must equal C/T")
        else:
            if not (0 < self.util < 1):
                raise MalformedSpec(f"I/O VCPU needs 0 < U < 1, got {self.util}")

    @property
    def is_main(self) -> bool:
        return self.cls is VcpuClass.MAIN


@dataclass
class ReplenishmentItem:
    amount: int
    due_at: int


@dataclass
class VcpuStats:
    fg_runtime: int = 0
    bg_runtime: int = 0
    # contiguous foreground execution, global ticks, [start, end)
    fg_intervals: list = field(default_factory=list)
    bg_intervals: list = field(default_factory=list)
    distance_violations: int = 0

    def add_interval(self, which: list, start: int, end: int) -> None:
        if which and which[-1][1] == start:
            which[-1][1] = end
        else:
            which.append([start, end])


# ---------------------------------------------------------------------------
# arithmetic

def io_vcpu_params(main_period: int, util) -> tuple[int, int]:
    """Budget and period an I/O VCPU inherits from a Main VCPU.

    The budget is ``T_V * U_IO`` rounded half-up to whole ticks; the
    period is ``T_V``.
    """
    util = _as_fraction(util)
    if main_period <= 0 or not (0 < util < 1):
        raise MalformedSpec(f"bad I/O VCPU inputs: T={main_period}, U={util}")
    exact = main_period * util
    budget = math.floor(exact + Fraction(1, 2))
    return budget, int(main_period)


def eq1_lhs(specs: Iterable[VcpuSpec]) -> Fraction:
    """Utilization demand: sum of C/T over Main VCPUs plus (2-U)U over I/O VCPUs."""
    total = Fraction(0)
    for s in specs:
        if s.is_main:
            total += Fraction(s.budget, s.period)
        else:
            total += (2 - s.util) * s.util
    return total


def rm_bound(n: int) -> float:
    """Liu-Layland bound ``n(2^(1/n) - 1)``, rounded toward zero.

    For n >= 2 the bound is irrational, so the float is stepped down one
    ulp to keep the comparison on the reject side.  n == 1 gives exactly 1.
    With no Main VCPUs the bound is taken as 0.
    """
    if n <= 0:
        return 0.0
    if n == 1:
        return 1.0
    b = n * (2.0 ** (1.0 / n) - 1.0)
    return math.nextafter(b, 0.0)


@dataclass(frozen=True)
class Admission:
    accepted: bool
    lhs: Fraction
    bound: float

    def __bool__(self) -> bool:
        return self.accepted


def admit(current: Union["PcpuScheduler", Iterable[VcpuSpec]], candidate: VcpuSpec) -> Admission:
    candidate.validate()
    if isinstance(current, PcpuScheduler):
        specs = [v.spec for v in current.vcpus] + list(current.reserved)
    else:
        specs = list(current)
    specs.append(candidate)
    lhs = eq1_lhs(specs)
    n = sum(1 for s in specs if s.is_main)
    bound = rm_bound(n)
    return Admission(lhs <= Fraction(bound), lhs, bound)


# ---------------------------------------------------------------------------

class Vcpu:
    """Scheduling state of one VCPU.

    All times held here (replenishment due times, busy-interval start) are
    in the local TSC frame of the core currently hosting the VCPU.
    """

    def __init__(self, vid: int, spec: VcpuSpec, name: str = "", pcpu: int = 0):
        spec.validate()
        self.id = vid
        self.name = name or f"vcpu{vid}"
        self.spec = spec
        self.pcpu = pcpu
        self.replenishments: list[ReplenishmentItem] = []
        self.bound_threads: list = []
        self.current_T_io: Optional[int] = None
        self.current_C_io: int = 0
        self.remaining = spec.budget if spec.is_main else 0
        self.busy_start: Optional[int] = None
        self.busy_end: Optional[int] = None
        self._open: Optional[ReplenishmentItem] = None
        self.stats = VcpuStats()

    def __repr__(self) -> str:
        return f"<Vcpu {self.name} id={self.id} rem={self.remaining} repl={len(self.replenishments)}>"

    @property
    def is_main(self) -> bool:
        return self.spec.is_main

    @property
    def capacity(self) -> int:
        return self.spec.budget if self.is_main else self.current_C_io

    @property
    def period(self) -> Optional[int]:
        return self.spec.period if self.is_main else self.current_T_io

    @property
    def band(self) -> Band:
        return Band.FOREGROUND if self.remaining > 0 else Band.BACKGROUND

    def pending_amount(self) -> int:
        return sum(r.amount for r in self.replenishments)

    def capacity_ok(self) -> bool:
        if self.remaining < 0 or any(r.amount <= 0 for r in self.replenishments):
            return False
        return self.remaining + self.pending_amount() == self.capacity

    def next_replenishment(self) -> Optional[int]:
        return self.replenishments[0].due_at if self.replenishments else None

    # -- budget accounting ------------------------------------------------

    def charge_and_post(self, ran_from: int, ran_for: int) -> Optional[ReplenishmentItem]:
        """Charge foreground execution over ``[ran_from, ran_from+ran_for)``.

        One replenishment is kept per contiguous busy interval; it comes
        due one period after the interval started.  Returns the item that
        was created or extended.
        """
        if ran_for == 0:
            return None
        if ran_for > self.remaining:
            raise Overrun(f"{self.name}: ran {ran_for} with {self.remaining} left")
        period = self.period
        if period is None:
            raise Overrun(f"{self.name}: charged while unrankable")
        self.remaining -= ran_for
        if self._open is not None and self.busy_end == ran_from and self._open in self.replenishments:
            self._open.amount += ran_for
            item = self._open
        else:
            self.busy_start = ran_from
            item = ReplenishmentItem(ran_for, ran_from + period)
            keys = [r.due_at for r in self.replenishments]
            self.replenishments.insert(bisect.bisect_right(keys, item.due_at), item)
            self._open = item
            if len(self.replenishments) > MAX_REPLENISHMENTS:
                self._merge_latest()
                item = self._open
        if item.due_at - self.busy_start < period:
            self.stats.distance_violations += 1
        self.busy_end = ran_from + ran_for
        return item

    def _merge_latest(self) -> None:
        b = self.replenishments.pop()
        a = self.replenishments.pop()
        merged = ReplenishmentItem(a.amount + b.amount, max(a.due_at, b.due_at))
        self.replenishments.append(merged)
        if self._open is a or self._open is b:
            self._open = merged

    def apply_replenishments(self, now: int) -> int:
        """Credit every item due at or before ``now``; returns the amount added."""
        added = 0
        while self.replenishments and self.replenishments[0].due_at <= now:
            item = self.replenishments.pop(0)
            added += item.amount
            if item is self._open:
                self._open = None
        if added:
            self.remaining += added
            # budget arriving mid-interval starts a fresh busy interval
            self.busy_start = None
            self.busy_end = None
            self._open = None
        return added

    def background_run(self, ran_for: int) -> None:
        if self.band is not Band.BACKGROUND:
            raise ValueError(f"{self.name} is not in the background band")
        if ran_for < 0:
            raise ValueError("negative runtime")
        self.stats.bg_runtime += ran_for

    def close_busy_interval(self) -> None:
        self.busy_start = None
        self.busy_end = None
        self._open = None

    def shift_times(self, delta: int) -> None:
        """Move every pending time by ``delta`` (clock-skew compensation)."""
        for r in self.replenishments:
            r.due_at += delta
        self.close_busy_interval()

    # -- I/O VCPUs --------------------------------------------------------

    def io_service_request(self, requester: Optional["Vcpu"]) -> tuple[int, int]:
        """Re-derive this I/O VCPU's budget and period from ``requester``,
        the Main VCPU of the thread on whose behalf I/O is serviced."""
        if self.is_main:
            raise ValueError("io_service_request on a Main VCPU")
        if requester is None:
            raise NoAssociatedThread(f"{self.name}: no thread associated with the request")
        budget, period = io_vcpu_params(requester.spec.period, self.spec.util)
        self.current_T_io = period
        if budget != self.current_C_io:
            self._resize(budget)
        return budget, period

    def _resize(self, new_cap: int) -> None:
        pending = self.pending_amount()
        # shrinking capacity trims the latest credits first
        while pending > new_cap and self.replenishments:
            last = self.replenishments[-1]
            cut = min(last.amount, pending - new_cap)
            last.amount -= cut
            pending -= cut
            if last.amount == 0:
                self.replenishments.pop()
                if last is self._open:
                    self._open = None
        self.current_C_io = new_cap
        self.remaining = new_cap - pending


# ---------------------------------------------------------------------------

IDLE = None


class PcpuScheduler:
    """Scheduling queue for one physical CPU."""

    def __init__(self, pcpu_id: int):
        self.pcpu_id = pcpu_id
        self.vcpus: list[Vcpu] = []
        # specs admitted for an in-flight migration, not yet installed
        self.reserved: list[VcpuSpec] = []

    @property
    def main_vcpus(self) -> list[Vcpu]:
        return [v for v in self.vcpus if v.is_main]

    @property
    def io_vcpus(self) -> list[Vcpu]:
        return [v for v in self.vcpus if not v.is_main]

    def admit(self, candidate: VcpuSpec) -> Admission:
        return admit(self, candidate)

    def add(self, vcpu: Vcpu, check: bool = True) -> Admission:
        result = self.admit(vcpu.spec)
        if check and not result:
            return result
        vcpu.pcpu = self.pcpu_id
        self.vcpus.append(vcpu)
        return result

    def remove(self, vcpu: Vcpu) -> None:
        self.vcpus.remove(vcpu)

    def apply_replenishments(self, now: int) -> list[Vcpu]:
        return [v for v in self.vcpus if v.apply_replenishments(now)]

    def pick_next(self, now: int, runnable: Callable[[Vcpu], bool]) -> Optional[tuple[Vcpu, Band]]:
        """Highest-priority foreground VCPU with budget and work, else the
        highest-priority background VCPU with work, else ``IDLE``.

        ``now`` is accepted for interface symmetry; replenishments due by
        ``now`` must already have been applied.
        """
        best_fg = best_bg = None
        for v in self.vcpus:
            period = v.period
            if period is None or not runnable(v):
                continue
            key = (period, v.id)
            if v.remaining > 0:
                if best_fg is None or key < best_fg[0]:
                    best_fg = (key, v)
            elif v.spec.allow_background:
                if best_bg is None or key < best_bg[0]:
                    best_bg = (key, v)
        if best_fg is not None:
            return best_fg[1], Band.FOREGROUND
        if best_bg is not None:
            return best_bg[1], Band.BACKGROUND
        return IDLE

    def utilization(self) -> Fraction:
        return eq1_lhs(v.spec for v in self.vcpus)

    def rank(self, vcpu: Vcpu) -> tuple:
        return (vcpu.period, vcpu.id)
