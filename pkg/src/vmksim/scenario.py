"""Scenario files: TOML tables describing a host, its sandboxes and the
work and events to simulate.

All times are integer ticks (microseconds) or strings with a unit suffix
(``"250us"``, ``"10ms"``, ``"2s"``).
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .comm import DEFAULT_PER_BYTE_CYCLES, DEFAULT_POLL_CYCLES
from .fault import FaultKind, FaultSpec, RecoveryPlan
from .migration import DEFAULT_PER_PAGE_COPY_CYCLES, DEFAULT_TSS_COPY_CYCLES
from .sched import MalformedSpec, VcpuSpec, admit, eq1_lhs
from .simcore import DEFAULT_CYCLES_PER_TICK, SimError
from .workloads import make_workload


class ParseError(SimError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnresolvedReference(SimError):
    pass


class AdmissionFailed(SimError):
    def __init__(self, sandbox: str, vcpu: str, lhs: Fraction, bound: float):
        super().__init__(f"{vcpu} on {sandbox}: demand {float(lhs):.6f} > bound {bound:.6f}")
        self.sandbox = sandbox
        self.vcpu = vcpu
        self.lhs = lhs
        self.bound = bound


_UNITS = {"us": 1, "ms": 1_000, "s": 1_000_000}
_TIME_RE = re.compile(r"^\s*([0-9][0-9_]*(?:\.[0-9]+)?)\s*(us|ms|s)?\s*$")
# workload parameters that hold times
_TIME_KEYS = {"interval", "work", "work_per_frame", "at"}


def parse_time(value: Union[int, str]) -> int:
    if isinstance(value, bool):
        raise ParseError(f"not a time: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        m = _TIME_RE.match(value)
        if m:
            ticks = Fraction(m.group(1).replace("_", "")) * _UNITS[m.group(2) or "us"]
            if ticks.denominator == 1:
                return int(ticks)
    raise ParseError(f"not a time: {value!r}")


@dataclass
class HostConfig:
    cores: int = 1
    memory_pages: int = 1 << 20
    cycles_per_tick: int = DEFAULT_CYCLES_PER_TICK
    skews: list = field(default_factory=list)
    rdtsc_cost: int = 0
    ipi_cost: int = 1
    per_page_copy_cycles: int = DEFAULT_PER_PAGE_COPY_CYCLES
    tss_copy_cycles: int = DEFAULT_TSS_COPY_CYCLES
    per_byte_copy_cycles: Fraction = DEFAULT_PER_BYTE_CYCLES
    poll_cycles: int = DEFAULT_POLL_CYCLES


@dataclass
class SandboxConfig:
    name: str
    pcpu: int
    pages: int = 1024
    policy: str = "log"


@dataclass
class VcpuConfig:
    name: str
    sandbox: str
    spec: VcpuSpec


@dataclass
class ThreadConfig:
    name: str
    vcpu: str
    workload: Any
    pages: int = 16
    start: int = 0


@dataclass
class ChannelConfig:
    name: str
    a: str
    b: str
    pages: int = 1


@dataclass
class AccessConfig:
    sandbox: str
    io_vcpu: str
    default_vcpu: Optional[str] = None
    filtered: bool = False


@dataclass
class DeviceConfig:
    name: str
    kind: str = "nic"
    start: int = 0
    interval: int = 1_000
    count: Optional[int] = None
    jitter: int = 0
    handler_cost: int = 10
    reply: bool = True
    access: list = field(default_factory=list)


@dataclass
class RecoveryConfig:
    at: int
    sandbox: str
    plan: RecoveryPlan


@dataclass
class MigrationConfig:
    at: int
    thread: str
    dst: str
    best_effort: bool = False
    delta_actual: Optional[int] = None


@dataclass
class Scenario:
    name: str = "scenario"
    duration: int = 1_000_000
    seed: int = 0
    sample_interval: int = 1_000_000
    host: HostConfig = field(default_factory=HostConfig)
    sandboxes: list = field(default_factory=list)
    vcpus: list = field(default_factory=list)
    threads: list = field(default_factory=list)
    channels: list = field(default_factory=list)
    devices: list = field(default_factory=list)
    faults: list = field(default_factory=list)
    recoveries: list = field(default_factory=list)
    migrations: list = field(default_factory=list)
    strict: bool = True

    def copy(self, **changes) -> "Scenario":
        return replace(copy.deepcopy(self), **changes)

    def control(self) -> "Scenario":
        """The same scenario with every fault and recovery removed."""
        return self.copy(faults=[], recoveries=[])

    def without_migrations(self) -> "Scenario":
        return self.copy(migrations=[])

    def validate(self) -> "Scenario":
        validate(self)
        return self


# ---------------------------------------------------------------------------
# dict -> Scenario

def _take(d: dict, key: str, where: str, default=KeyError):
    if key in d:
        return d.pop(key)
    if default is KeyError:
        raise ParseError(f"{where}: missing {key!r}")
    return default


def _no_extra(d: dict, where: str) -> None:
    if d:
        raise ParseError(f"{where}: unknown keys {sorted(d)}")


def _workload(desc: Any, where: str):
    if not isinstance(desc, dict):
        raise ParseError(f"{where}: workload must be a table")
    desc = dict(desc)
    for k in _TIME_KEYS & set(desc):
        desc[k] = parse_time(desc[k])
    try:
        return make_workload(desc)
    except (ValueError, TypeError) as e:
        raise ParseError(f"{where}: {e}") from None


def _vcpu_spec(d: dict, where: str) -> VcpuSpec:
    cls = _take(d, "class", where, "main")
    bg = bool(_take(d, "background", where, True))
    try:
        if cls == "main":
            return VcpuSpec.main(parse_time(_take(d, "budget", where)),
                                 parse_time(_take(d, "period", where)), bg)
        if cls == "io":
            util = _take(d, "util", where)
            return VcpuSpec.io(Fraction(util) if isinstance(util, str) else util, bg)
    except MalformedSpec as e:
        raise ParseError(f"{where}: {e}") from None
    raise ParseError(f"{where}: VCPU class must be main or io, not {cls!r}")


def from_dict(raw: dict, name: str = "scenario") -> Scenario:
    d = copy.deepcopy(raw)
    sc = Scenario(name=d.pop("name", name))
    sc.duration = parse_time(d.pop("duration", sc.duration))
    sc.seed = int(d.pop("seed", 0))
    sc.sample_interval = parse_time(d.pop("sample_interval", sc.sample_interval))
    sc.strict = bool(d.pop("strict", True))

    h = d.pop("host", {})
    host = HostConfig()
    for k in ("cores", "memory_pages", "cycles_per_tick", "per_page_copy_cycles",
              "tss_copy_cycles", "poll_cycles"):
        if k in h:
            setattr(host, k, int(h.pop(k)))
    for k in ("rdtsc_cost", "ipi_cost"):
        if k in h:
            setattr(host, k, parse_time(h.pop(k)))
    if "per_byte_copy_cycles" in h:
        host.per_byte_copy_cycles = Fraction(str(h.pop("per_byte_copy_cycles")))
    host.skews = [parse_time(s) if not isinstance(s, int) else s
                  for s in h.pop("skews", [])] or [0] * host.cores
    _no_extra(h, "host")
    sc.host = host

    for i, s in enumerate(d.pop("sandbox", [])):
        w = f"sandbox[{i}]"
        sc.sandboxes.append(SandboxConfig(_take(s, "name", w), int(_take(s, "pcpu", w)),
                                          int(_take(s, "pages", w, 1024)),
                                          _take(s, "policy", w, "log")))
        _no_extra(s, w)
    for i, v in enumerate(d.pop("vcpu", [])):
        w = f"vcpu[{i}]"
        nm, sb = _take(v, "name", w), _take(v, "sandbox", w)
        sc.vcpus.append(VcpuConfig(nm, sb, _vcpu_spec(v, w)))
        _no_extra(v, w)
    for i, t in enumerate(d.pop("thread", [])):
        w = f"thread[{i}]"
        sc.threads.append(ThreadConfig(_take(t, "name", w), _take(t, "vcpu", w),
                                       _workload(_take(t, "workload", w), w),
                                       int(_take(t, "pages", w, 16)),
                                       parse_time(_take(t, "start", w, 0))))
        _no_extra(t, w)
    for i, c in enumerate(d.pop("channel", [])):
        w = f"channel[{i}]"
        sc.channels.append(ChannelConfig(_take(c, "name", w), _take(c, "a", w),
                                         _take(c, "b", w), int(_take(c, "pages", w, 1))))
        _no_extra(c, w)
    for i, dv in enumerate(d.pop("device", [])):
        w = f"device[{i}]"
        count = _take(dv, "count", w, None)
        dev = DeviceConfig(_take(dv, "name", w), _take(dv, "kind", w, "nic"),
                           parse_time(_take(dv, "start", w, 0)),
                           parse_time(_take(dv, "interval", w)),
                           None if count is None else int(count),
                           parse_time(_take(dv, "jitter", w, 0)),
                           parse_time(_take(dv, "handler_cost", w, 10)),
                           bool(_take(dv, "reply", w, True)))
        for j, a in enumerate(_take(dv, "access", w, [])):
            wa = f"{w}.access[{j}]"
            dev.access.append(AccessConfig(_take(a, "sandbox", wa), _take(a, "io_vcpu", wa),
                                           _take(a, "default_vcpu", wa, None),
                                           bool(_take(a, "filtered", wa, False))))
            _no_extra(a, wa)
        _no_extra(dv, w)
        sc.devices.append(dev)
    for i, f in enumerate(d.pop("fault", [])):
        w = f"fault[{i}]"
        at, target = parse_time(_take(f, "at", w)), _take(f, "target", w)
        kind = _take(f, "kind", w)
        try:
            fk = FaultKind(kind)
        except ValueError:
            raise ParseError(f"{w}: unknown fault kind {kind!r}") from None
        arg = {FaultKind.DRIVER: "device", FaultKind.CHANNEL_CORRUPT: "channel",
               FaultKind.CROSS_WRITE: "victim"}[fk]
        sc.faults.append(FaultSpec(at, target, fk, **{arg: _take(f, arg, w)}))
        _no_extra(f, w)
    for i, r in enumerate(d.pop("recovery", [])):
        w = f"recovery[{i}]"
        at, sb = parse_time(_take(r, "at", w)), _take(r, "sandbox", w)
        try:
            plan = RecoveryPlan(_take(r, "mode", w, "local"), _take(r, "standby", w, None))
        except (ValueError, SimError) as e:
            raise ParseError(f"{w}: {e}") from None
        sc.recoveries.append(RecoveryConfig(at, sb, plan))
        _no_extra(r, w)
    for i, m in enumerate(d.pop("migration", [])):
        w = f"migration[{i}]"
        da = _take(m, "delta_actual", w, None)
        sc.migrations.append(MigrationConfig(parse_time(_take(m, "at", w)), _take(m, "thread", w),
                                             _take(m, "dst", w), bool(_take(m, "best_effort", w, False)),
                                             None if da is None else parse_time(da)))
        _no_extra(m, w)
    _no_extra(d, "scenario")
    return sc


# ---------------------------------------------------------------------------
# validation

def _check_unique(items, what: str) -> set:
    names = set()
    for it in items:
        if it.name in names:
            raise ParseError(f"duplicate {what} name {it.name!r}")
        names.add(it.name)
    return names


def validate(sc: Scenario) -> None:
    h = sc.host
    if h.cores <= 0:
        raise ParseError("host.cores must be positive")
    if len(h.skews) != h.cores:
        raise ParseError(f"host.skews needs {h.cores} entries, got {len(h.skews)}")
    if sc.duration < 0 or sc.sample_interval <= 0:
        raise ParseError("duration must be >= 0 and sample_interval > 0")
    sandboxes = _check_unique(sc.sandboxes, "sandbox")
    cores = set()
    for s in sc.sandboxes:
        if not 0 <= s.pcpu < h.cores:
            raise UnresolvedReference(f"sandbox {s.name}: no core {s.pcpu}")
        if s.pcpu in cores:
            raise ParseError(f"sandbox {s.name}: core {s.pcpu} already taken")
        cores.add(s.pcpu)
    vcpus = {}
    _check_unique(sc.vcpus, "vcpu")
    for v in sc.vcpus:
        if v.sandbox not in sandboxes:
            raise UnresolvedReference(f"vcpu {v.name}: no sandbox {v.sandbox!r}")
        vcpus[v.name] = v
    _check_unique(sc.threads, "thread")
    for t in sc.threads:
        if t.vcpu not in vcpus:
            raise UnresolvedReference(f"thread {t.name}: no vcpu {t.vcpu!r}")
        if not vcpus[t.vcpu].spec.is_main:
            raise ParseError(f"thread {t.name}: threads bind to Main VCPUs")
    _check_unique(sc.channels, "channel")
    for c in sc.channels:
        for end in (c.a, c.b):
            if end not in sandboxes:
                raise UnresolvedReference(f"channel {c.name}: no sandbox {end!r}")
        if c.a == c.b:
            raise ParseError(f"channel {c.name}: endpoints must differ")
    devices = _check_unique(sc.devices, "device")
    for dv in sc.devices:
        for a in dv.access:
            if a.sandbox not in sandboxes:
                raise UnresolvedReference(f"device {dv.name}: no sandbox {a.sandbox!r}")
            io = vcpus.get(a.io_vcpu)
            if io is None or io.spec.is_main or io.sandbox != a.sandbox:
                raise UnresolvedReference(f"device {dv.name}: no I/O VCPU {a.io_vcpu!r} in {a.sandbox}")
            if a.default_vcpu is not None:
                dm = vcpus.get(a.default_vcpu)
                if dm is None or not dm.spec.is_main or dm.sandbox != a.sandbox:
                    raise UnresolvedReference(f"device {dv.name}: no Main VCPU {a.default_vcpu!r}")
    channels = {c.name: c for c in sc.channels}
    for f in sc.faults:
        if f.target not in sandboxes:
            raise UnresolvedReference(f"fault: no sandbox {f.target!r}")
        if f.kind is FaultKind.DRIVER and f.device not in devices:
            raise UnresolvedReference(f"fault: no device {f.device!r}")
        if f.kind is FaultKind.CHANNEL_CORRUPT and f.channel not in channels:
            raise UnresolvedReference(f"fault: no channel {f.channel!r}")
        if f.kind is FaultKind.CROSS_WRITE and f.victim not in sandboxes:
            raise UnresolvedReference(f"fault: no sandbox {f.victim!r}")
    for r in sc.recoveries:
        if r.sandbox not in sandboxes or (r.plan.standby and r.plan.standby not in sandboxes):
            raise UnresolvedReference(f"recovery: unknown sandbox in {r}")
    threads = {t.name for t in sc.threads}
    for m in sc.migrations:
        if m.thread not in threads:
            raise UnresolvedReference(f"migration: no thread {m.thread!r}")
        if m.dst not in sandboxes:
            raise UnresolvedReference(f"migration: no sandbox {m.dst!r}")
    check_admission(sc)


def check_admission(sc: Scenario) -> dict:
    """Admit each sandbox's VCPUs, Mains first, in declaration order."""
    out = {}
    for s in sc.sandboxes:
        mine = [v for v in sc.vcpus if v.sandbox == s.name]
        ordered = [v for v in mine if v.spec.is_main] + [v for v in mine if not v.spec.is_main]
        specs = []
        for v in ordered:
            res = admit(specs, v.spec)
            if not res:
                raise AdmissionFailed(s.name, v.name, res.lhs, res.bound)
            specs.append(v.spec)
        out[s.name] = eq1_lhs(specs)
    return out


# ---------------------------------------------------------------------------
# files

def _line_of(err: Exception) -> Optional[int]:
    m = re.search(r"line (\d+)", str(err))
    return int(m.group(1)) if m else None


def loads(text: str, name: str = "scenario") -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(str(e), _line_of(e)) from None
    return from_dict(raw, name).validate()


def bundled_dir():
    return resources.files(__package__) / "scenarios"


def list_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in bundled_dir().iterdir() if p.name.endswith(".toml"))


def resolve(path_or_name: Union[str, Path]) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    bundled = bundled_dir() / f"{path_or_name}.toml"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no scenario file or bundled scenario {path_or_name!r}")


def load_scenario(path_or_name: Union[str, Path]) -> Scenario:
    p = resolve(path_or_name)
    return loads(p.read_text(), p.stem)
