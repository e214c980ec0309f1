"""Sandbox kernels, their EPT-style page permissions and monitors, and the
threads and devices that live inside them."""

from __future__ import annotations

import bisect
import enum
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .simcore import SimError, CycleAccumulator, DEFAULT_CYCLES_PER_TICK

PAGE_SIZE = 4096

# monitor entry/exit costs in cycles
VM_EXIT_CYCLES = 885
VM_ENTER_CYCLES = 663


class CoreTaken(SimError):
    pass


class OutOfHostPages(SimError):
    pass


@dataclass(frozen=True)
class PagePerm:
    read: bool = False
    write: bool = False
    execute: bool = False

    def allows(self, mode: str) -> bool:
        return {"R": self.read, "W": self.write, "X": self.execute}[mode]


NO_ACCESS = PagePerm()
RW = PagePerm(True, True, False)
RWX = PagePerm(True, True, True)


class HostMemory:
    """Host physical pages handed out as contiguous ranges."""

    def __init__(self, total_pages: int):
        self.total_pages = total_pages
        self.next_free = 0
        # sparse page contents, only for pages something actually wrote
        self.contents: dict[int, bytes] = {}

    def allocate(self, count: int) -> range:
        if count < 0 or self.next_free + count > self.total_pages:
            raise OutOfHostPages(f"need {count} pages, {self.total_pages - self.next_free} free")
        r = range(self.next_free, self.next_free + count)
        self.next_free += count
        return r


class TrapCause(enum.Enum):
    EPT_VIOLATION = "ept_violation"
    EXPLICIT_EXIT = "explicit_exit"
    CHANNEL_MAP = "channel_map"
    MIGRATION = "migration"
    RECOVERY = "recovery"


class ActionKind(enum.Enum):
    RESUME = "resume"
    LOG_AND_RESUME = "log_and_resume"
    START_RECOVERY = "start_recovery"


@dataclass(frozen=True)
class MonitorAction:
    kind: ActionKind
    cycles: int
    mode: str = ""


@dataclass
class Monitor:
    policy: str = "log"          # "log", "recover-local" or "recover-remote"
    vm_exit_cycles: int = VM_EXIT_CYCLES
    vm_enter_cycles: int = VM_ENTER_CYCLES
    handled_violations: int = 0
    code_size_pages: int = 1
    traps: Counter = field(default_factory=Counter)
    charged_cycles: int = 0


def monitor_trap(sandbox: "Sandbox", cause: TrapCause) -> MonitorAction:
    """Enter the sandbox's monitor and decide what happens next."""
    mon = sandbox.monitor
    cycles = mon.vm_exit_cycles + mon.vm_enter_cycles
    mon.traps[cause] += 1
    mon.charged_cycles += cycles
    if cause not in (TrapCause.EPT_VIOLATION, TrapCause.EXPLICIT_EXIT):
        return MonitorAction(ActionKind.RESUME, cycles)
    mon.handled_violations += 1
    if mon.policy.startswith("recover"):
        mode = "remote" if mon.policy.endswith("remote") else "local"
        return MonitorAction(ActionKind.START_RECOVERY, cycles, mode)
    return MonitorAction(ActionKind.LOG_AND_RESUME, cycles)


@dataclass(frozen=True)
class EptViolation:
    sandbox: str
    page: int
    mode: str
    action: MonitorAction

    def __bool__(self) -> bool:
        return False


class _Ok:
    def __bool__(self) -> bool:
        return True

    def __repr__(self) -> str:
        return "Ok"


OK = _Ok()


class Sandbox:
    """A kernel instance bound to one PCPU with a private slice of host memory."""

    def __init__(self, sid: int, name: str, pcpu: int, private: range,
                 memory: HostMemory, policy: str = "log"):
        self.id = sid
        self.name = name
        self.pcpu = pcpu
        self.private = private
        self.memory = memory
        self.monitor = Monitor(policy=policy)
        self.threads: list = []
        self.devices: set[str] = set()
        # EPT as sorted, non-overlapping [start, end) regions
        self._starts: list[int] = []
        self._regions: list[tuple[int, int, PagePerm]] = []
        self.scheduler = None
        if len(private):
            self.map_pages(private.start, len(private), RWX)

    def __repr__(self) -> str:
        return f"<Sandbox {self.name} pcpu={self.pcpu}>"

    def map_pages(self, start: int, count: int, perm: PagePerm) -> None:
        i = bisect.bisect_right(self._starts, start)
        if i and self._regions[i - 1][1] > start:
            raise ValueError("overlapping EPT mapping")
        if i < len(self._regions) and self._regions[i][0] < start + count:
            raise ValueError("overlapping EPT mapping")
        self._starts.insert(i, start)
        self._regions.insert(i, (start, start + count, perm))

    def unmap_pages(self, start: int) -> None:
        i = self._starts.index(start)
        del self._starts[i]
        del self._regions[i]

    def perm_of(self, page: int) -> PagePerm:
        i = bisect.bisect_right(self._starts, page) - 1
        if i >= 0:
            s, e, perm = self._regions[i]
            if s <= page < e:
                return perm
        return NO_ACCESS

    def mapped_ranges(self) -> list[tuple[int, int, PagePerm]]:
        return list(self._regions)

    def access(self, page: int, mode: str = "R"):
        if self.perm_of(page).allows(mode):
            return OK
        action = monitor_trap(self, TrapCause.EPT_VIOLATION)
        return EptViolation(self.name, page, mode, action)

    def write(self, page: int, data: bytes):
        """Store ``data`` in ``page`` if the EPT allows it; a denied write
        is suppressed and the trap result returned."""
        result = self.access(page, "W")
        if result:
            self.memory.contents[page] = bytes(data)
        return result


class Host:
    """Cores and memory shared out among sandboxes, one sandbox per core."""

    def __init__(self, cores: int, memory_pages: int):
        self.cores = cores
        self.memory = HostMemory(memory_pages)
        self.sandboxes: dict[str, Sandbox] = {}
        self._by_core: dict[int, Sandbox] = {}

    def create_sandbox(self, pcpu: int, private_pages: int, name: str = "",
                       policy: str = "log") -> Sandbox:
        if not 0 <= pcpu < self.cores:
            raise CoreTaken(f"no core {pcpu}")
        if pcpu in self._by_core:
            raise CoreTaken(f"core {pcpu} already hosts {self._by_core[pcpu].name}")
        name = name or f"sb{pcpu}"
        if name in self.sandboxes:
            raise ValueError(f"duplicate sandbox name {name}")
        pages = self.memory.allocate(private_pages)
        sb = Sandbox(len(self.sandboxes), name, pcpu, pages, self.memory, policy)
        self.sandboxes[name] = sb
        self._by_core[pcpu] = sb
        return sb

    def on_core(self, pcpu: int) -> Optional[Sandbox]:
        return self._by_core.get(pcpu)


def create_sandbox(host: Host, pcpu: int, private_pages: int, **kw) -> Sandbox:
    return host.create_sandbox(pcpu, private_pages, **kw)


def access(sandbox: Sandbox, page: int, mode: str = "R"):
    return sandbox.access(page, mode)


# ---------------------------------------------------------------------------
# threads

class ThreadState(enum.Enum):
    RUNNABLE = "runnable"
    SLEEPING = "sleeping"
    BLOCKED_IO = "blocked_io"
    WAITING = "waiting"
    MIGRATING = "migrating"
    DONE = "done"


@dataclass(frozen=True)
class Compute:
    """Consume CPU time; ``None`` means forever."""
    ticks: Optional[int]


@dataclass(frozen=True)
class Sleep:
    until: int          # local TSC time


@dataclass(frozen=True)
class NextRelease:
    """Sleep until the next multiple of ``interval`` after the last release."""
    interval: int


@dataclass(frozen=True)
class WaitIO:
    device: str


@dataclass(frozen=True)
class WaitInbox:
    pass


@dataclass(frozen=True)
class Spin:
    """Busy-wait, burning CPU, until ``until()`` holds."""
    until: Callable[[], bool]
    channel: str = ""


class SimThread:
    def __init__(self, tid: int, name: str, workload, pages: int = 1,
                 cycles_per_tick: int = DEFAULT_CYCLES_PER_TICK):
        self.id = tid
        self.name = name
        self.workload = workload
        self.address_space_pages = pages
        self.sandbox: Optional[Sandbox] = None
        self.vcpu = None
        self.state = ThreadState.RUNNABLE
        self.step_remaining: Optional[int] = 0
        self.spin: Optional[Spin] = None
        self.wake_at: Optional[int] = None
        self.wake_token = 0
        self.release: Optional[int] = None
        self.io_device: Optional[str] = None
        self.inbox: deque = deque()
        self.stats: Counter = Counter()
        self.acc = CycleAccumulator(cycles_per_tick)
        self.clock: Callable[[], int] = lambda: 0
        self.observer: Optional[Callable[["SimThread", str, int], None]] = None
        self._resume: Any = None
        self._gen = None
        self._ctx = None

    def __repr__(self) -> str:
        return f"<SimThread {self.name} {self.state.value}>"

    def start(self, ctx=None) -> None:
        self._ctx = ctx
        self._gen = self.workload.program(self, ctx)
        self.state = ThreadState.RUNNABLE
        self.step_remaining = 0

    @property
    def runnable(self) -> bool:
        return self.state is ThreadState.RUNNABLE

    @property
    def needs_resume(self) -> bool:
        """Runnable but waiting to execute the next bit of its program."""
        if self.state is not ThreadState.RUNNABLE:
            return False
        if self.spin is not None:
            return self.spin.until()
        return self.step_remaining == 0

    def bump(self, key: str, n: int = 1) -> None:
        self.stats[key] += n
        if self.observer is not None:
            self.observer(self, key, n)

    def charge_cycles(self, cycles) -> int:
        return self.acc.charge(cycles)

    def resume_with(self, value: Any) -> None:
        self._resume = value
        self.state = ThreadState.RUNNABLE
        self.step_remaining = 0
        self.spin = None

    def post(self, item: Any) -> bool:
        """Queue ``item``; returns True if that made a waiting thread runnable."""
        if self.state is ThreadState.WAITING:
            self.resume_with(item)
            return True
        self.inbox.append(item)
        return False

    def advance(self):
        """Run the program until it asks for CPU time or blocks.

        Returns the request that stopped it, or None once the program ends.
        """
        value, self._resume = self._resume, None
        self.spin = None
        while True:
            try:
                req = self._gen.send(value)
            except StopIteration:
                self.state = ThreadState.DONE
                self.step_remaining = 0
                return None
            value = None
            if isinstance(req, Compute):
                if req.ticks == 0:
                    continue
                self.state = ThreadState.RUNNABLE
                self.step_remaining = req.ticks
                return req
            if isinstance(req, WaitInbox):
                if self.inbox:
                    value = self.inbox.popleft()
                    continue
                self.state = ThreadState.WAITING
                return req
            if isinstance(req, Spin):
                if req.until():
                    continue
                self.state = ThreadState.RUNNABLE
                self.step_remaining = None
                self.spin = req
                return req
            if isinstance(req, Sleep):
                self.state = ThreadState.SLEEPING
                self.wake_at = req.until
                return req
            if isinstance(req, NextRelease):
                now = self.clock()
                base = now if self.release is None else self.release
                target = base + req.interval
                while target <= now:
                    target += req.interval
                self.release = target
                self.state = ThreadState.SLEEPING
                self.wake_at = target
                return req
            if isinstance(req, WaitIO):
                self.state = ThreadState.BLOCKED_IO
                self.io_device = req.device
                return req
            raise TypeError(f"unknown request {req!r}")


def run_workload_slice(thread: SimThread, budget_slice: Optional[int],
                       on_request: Optional[Callable[[SimThread, Any], None]] = None) -> int:
    """Give ``thread`` up to ``budget_slice`` ticks of CPU; returns ticks used.

    Whenever a compute step finishes the program is resumed in place, so a
    slice spanning several steps executes all of them.  ``budget_slice``
    of None means unbounded, which only makes sense for finite programs.
    """
    if thread._gen is None:
        thread.start()
    used = 0
    if thread.spin is not None and thread.runnable:
        # the condition can only have turned true at the end of the slice
        if budget_slice is None:
            raise ValueError("unbounded slice for a spinning thread")
        used = budget_slice
    while thread.runnable:
        if thread.needs_resume:
            req = thread.advance()
            if on_request is not None:
                on_request(thread, req)
            continue
        left = None if budget_slice is None else budget_slice - used
        if left == 0:
            break
        need = thread.step_remaining
        if need is None:
            if left is None:
                raise ValueError("unbounded slice for a thread that never finishes")
            used += left
            break
        take = need if left is None else min(need, left)
        thread.step_remaining -= take
        used += take
    return used


# ---------------------------------------------------------------------------
# devices

@dataclass
class DeviceAccess:
    sandbox: str
    io_vcpu: str
    default_vcpu: Optional[str] = None
    filtered: bool = False
    broken: bool = False
    handler: Optional[SimThread] = None


@dataclass
class Device:
    name: str
    kind: str = "nic"
    start: int = 0
    interval: int = 0
    count: Optional[int] = None
    jitter: int = 0
    handler_cost: int = 10
    reply: bool = True
    access: list = field(default_factory=list)
    fired: int = 0

    def access_for(self, sandbox: str) -> Optional[DeviceAccess]:
        for a in self.access:
            if a.sandbox == sandbox:
                return a
        return None
