"""Pairwise shared-memory mailbox channels between sandboxes."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

from .sandbox import PAGE_SIZE, RW, HostMemory, Sandbox, TrapCause, monitor_trap
from .simcore import Engine, Ipi, SimError

# ~1 ns per byte at 2.133 GHz, so a 4 KB copy costs about 4 us
DEFAULT_PER_BYTE_CYCLES = Fraction("2.133")
DEFAULT_POLL_CYCLES = 2133


class SameSandbox(SimError):
    pass


class NotEndpoint(SimError):
    pass


class TooLarge(SimError):
    pass


class Status(enum.Enum):
    EMPTY = 0
    FULL = 1


class SendStatus(enum.Enum):
    SENT = "sent"
    BUSY = "busy"


@dataclass(frozen=True)
class Message:
    seq: int
    src: str
    payload: bytes


class _Corrupt:
    """Poll result for a mailbox whose contents were overwritten."""

    def __repr__(self) -> str:
        return "CorruptMessage"

    def __bool__(self) -> bool:
        return False


CORRUPT = _Corrupt()


@dataclass(frozen=True)
class SendResult:
    status: SendStatus
    cycles: Fraction = Fraction(0)

    @property
    def sent(self) -> bool:
        return self.status is SendStatus.SENT


class Mailbox:
    def __init__(self, capacity: int):
        self.bytes_capacity = capacity
        self.status = Status.EMPTY
        self.message: Optional[Message] = None
        self.corrupt = False

    @property
    def full(self) -> bool:
        return self.status is Status.FULL


class Channel:
    def __init__(self, name: str, a: str, b: str, pages: range,
                 per_byte_cycles=DEFAULT_PER_BYTE_CYCLES,
                 poll_cycles=DEFAULT_POLL_CYCLES, cid: int = 0):
        self.id = cid
        self.name = name
        self.endpoint_a = a
        self.endpoint_b = b
        self.pages = pages
        cap = len(pages) * PAGE_SIZE // 2
        self.mailbox_a = Mailbox(cap)   # read by a
        self.mailbox_b = Mailbox(cap)   # read by b
        self.per_byte_cycles = Fraction(per_byte_cycles)
        self.poll_cycles = Fraction(poll_cycles)
        self._seq = 0
        self.sent = 0
        self.received = 0
        # messages destroyed by corruption before anyone read them
        self.lost = 0

    def __repr__(self) -> str:
        return f"<Channel {self.name} {self.endpoint_a}<->{self.endpoint_b}>"

    @property
    def capacity(self) -> int:
        return self.mailbox_a.bytes_capacity

    @property
    def corrupted(self) -> bool:
        return self.mailbox_a.corrupt or self.mailbox_b.corrupt

    def peer(self, who: str) -> str:
        if who == self.endpoint_a:
            return self.endpoint_b
        if who == self.endpoint_b:
            return self.endpoint_a
        raise NotEndpoint(f"{who} is not an endpoint of {self.name}")

    def own_mailbox(self, who: str) -> Mailbox:
        self.peer(who)
        return self.mailbox_a if who == self.endpoint_a else self.mailbox_b

    def peer_mailbox(self, who: str) -> Mailbox:
        return self.own_mailbox(self.peer(who))

    def copy_cycles(self, nbytes: int) -> Fraction:
        return nbytes * self.per_byte_cycles

    def can_send(self, who: str) -> bool:
        return not self.peer_mailbox(who).full

    def has_message(self, who: str) -> bool:
        return self.own_mailbox(who).full

    def send(self, who: str, payload: bytes) -> SendResult:
        box = self.peer_mailbox(who)
        if len(payload) > box.bytes_capacity:
            raise TooLarge(f"{len(payload)} bytes > {box.bytes_capacity}")
        if box.full:
            return SendResult(SendStatus.BUSY)
        box.message = Message(self._seq, who, bytes(payload))
        box.status = Status.FULL
        self._seq += 1
        self.sent += 1
        return SendResult(SendStatus.SENT, self.copy_cycles(len(payload)))

    def poll(self, who: str) -> Union[Message, None, _Corrupt]:
        box = self.own_mailbox(who)
        if not box.full:
            return None
        if box.corrupt:
            # garbage stays put until the channel is re-initialised
            return CORRUPT
        msg = box.message
        box.message = None
        box.status = Status.EMPTY
        self.received += 1
        return msg

    def corrupt(self) -> None:
        """Overwrite the shared pages: both status bits read as Full garbage."""
        for box in (self.mailbox_a, self.mailbox_b):
            if box.message is not None:
                self.lost += 1
            box.corrupt = True
            box.status = Status.FULL
            box.message = None

    def reset(self) -> None:
        for box in (self.mailbox_a, self.mailbox_b):
            box.corrupt = False
            box.status = Status.EMPTY
            box.message = None


def create_channel(sandbox_a: Sandbox, sandbox_b: Sandbox, pages: int,
                   memory: HostMemory, name: str = "", **costs) -> Channel:
    """Allocate shared pages and have both monitors map them read-write."""
    if sandbox_a is sandbox_b or sandbox_a.name == sandbox_b.name:
        raise SameSandbox(f"channel endpoints must differ ({sandbox_a.name})")
    shared = memory.allocate(pages)
    for sb in (sandbox_a, sandbox_b):
        monitor_trap(sb, TrapCause.CHANNEL_MAP)
        sb.map_pages(shared.start, len(shared), RW)
    name = name or f"{sandbox_a.name}-{sandbox_b.name}"
    return Channel(name, sandbox_a.name, sandbox_b.name, shared, **costs)


def send(channel: Channel, who: str, payload: bytes) -> SendResult:
    return channel.send(who, payload)


def poll(channel: Channel, who: str):
    return channel.poll(who)


def notify_ipi(channel: Channel, who: str, engine: Engine, src_core: int,
               dst_core: int, ipi_cost: int) -> int:
    """Schedule an IPI telling the peer that a message is waiting."""
    peer = channel.peer(who)
    return engine.schedule_event(engine.now + ipi_cost,
                                 Ipi(src_core, dst_core, ("notify", channel.name, peer)))
