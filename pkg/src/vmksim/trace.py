"""CSV trace records."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO

COLUMNS = ("time_tick", "pcpu", "sandbox", "kind", "subject", "detail")


@dataclass(frozen=True)
class TraceRecord:
    time_tick: int
    pcpu: int
    sandbox: str
    kind: str
    subject: str
    detail: str = ""

    def row(self) -> tuple:
        return (self.time_tick, self.pcpu, self.sandbox, self.kind, self.subject, self.detail)


def format_detail(fields: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in fields.items())


def parse_detail(detail: str) -> dict:
    if not detail:
        return {}
    return dict(part.split("=", 1) for part in detail.split(";"))


class TraceLog:
    def __init__(self, keep: bool = True):
        self.keep = keep
        self.records: list[TraceRecord] = []
        self.counts: dict[str, int] = {}
        self._last = 0

    def __len__(self) -> int:
        return len(self.records)

    def add(self, time_tick: int, pcpu: int, sandbox: str, kind: str, subject: str,
            detail: str = "") -> None:
        if time_tick < self._last:
            raise ValueError(f"trace time went backwards: {time_tick} < {self._last}")
        self._last = time_tick
        self.counts[kind] = self.counts.get(kind, 0) + 1
        if self.keep:
            self.records.append(TraceRecord(time_tick, pcpu, sandbox, kind, subject, detail))

    def of_kind(self, kind: str, sandbox: Optional[str] = None) -> list[TraceRecord]:
        return [r for r in self.records
                if r.kind == kind and (sandbox is None or r.sandbox == sandbox)]

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.records:
            w.writerow(r.row())

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def read_csv(fh: TextIO) -> list[TraceRecord]:
    rows = csv.reader(fh)
    header = next(rows)
    if tuple(header) != COLUMNS:
        raise ValueError(f"unexpected trace header {header}")
    return [TraceRecord(int(t), int(p), sb, k, s, d) for t, p, sb, k, s, d in rows]


def records_from(records: Iterable[TraceRecord], kind: str) -> list[TraceRecord]:
    return [r for r in records if r.kind == kind]
