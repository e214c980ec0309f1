"""Command-line entry point.

    vmksim run <scenario> [--trace out.csv] [--summary out.txt] [--until ticks]
    vmksim verify <scenario>
    vmksim list-scenarios

A scenario is a bundled name or a path to a TOML file.  Exit status is 0 on
success, 1 for usage and parse errors, 2 when admission fails and 3 when a
run breaks an invariant.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .scenario import (AdmissionFailed, ParseError, UnresolvedReference, list_scenarios,
                       load_scenario)
from .simulation import InvariantViolation, Simulation

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ADMISSION = 2
EXIT_INVARIANT = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which collides with admission failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vmksim", description="Partitioned multikernel simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and write its trace and summary")
    run.add_argument("scenario", help="bundled scenario name or TOML path")
    run.add_argument("--trace", metavar="CSV", help="write the trace here ('-' for stdout)")
    run.add_argument("--summary", metavar="FILE", help="write the JSON summary here ('-' for stdout)")
    run.add_argument("--until", type=int, metavar="TICKS", help="stop early at this tick")

    ver = sub.add_parser("verify", help="run the invariant suite on a scenario")
    ver.add_argument("scenario")

    sub.add_parser("list-scenarios", help="print the bundled scenario names")
    return p


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _load(name: str):
    try:
        return load_scenario(name), EXIT_OK
    except ParseError as e:
        where = f" (line {e.line})" if e.line else ""
        print(f"parse error{where}: {e}", file=sys.stderr)
    except UnresolvedReference as e:
        print(f"unresolved reference: {e}", file=sys.stderr)
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
    except AdmissionFailed as e:
        print(f"admission failed: {e}", file=sys.stderr)
        return None, EXIT_ADMISSION
    return None, EXIT_USAGE


def cmd_run(args) -> int:
    sc, status = _load(args.scenario)
    if sc is None:
        return status
    sim = Simulation(sc, strict=False)
    try:
        sim.run(args.until)
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    if args.trace:
        _write(args.trace, sim.trace.to_csv())
    if args.summary:
        _write(args.summary, json.dumps(sim.summary(), indent=2, sort_keys=True) + "\n")
    if sim.violations:
        for v in sim.violations[:10]:
            print(f"invariant violated: {v}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import verify

    sc, status = _load(args.scenario)
    if sc is None:
        return status
    report = verify(sc)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_INVARIANT


def cmd_list(args) -> int:
    for name in list_scenarios():
        print(name)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "list-scenarios": cmd_list}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
