"""Rewrite the golden traces after an intentional behaviour change.

    python3 demos/regenerate_golden.py [scenario ...]

Each bundled scenario's trace is stored gzip-compressed with a zero mtime
so the files themselves are reproducible byte for byte.
"""

import gzip
import sys
from pathlib import Path

from vmksim import list_scenarios, load_scenario, run_scenario

GOLDEN = Path(__file__).resolve().parents[1] / "src" / "vmksim" / "golden"


def write_golden(name: str) -> Path:
    csv = run_scenario(load_scenario(name)).trace.to_csv().encode()
    out = GOLDEN / f"{name}.csv.gz"
    with open(out, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw,
                                               mtime=0, compresslevel=9) as gz:
        gz.write(csv)
    return out


if __name__ == "__main__":
    for name in sys.argv[1:] or list_scenarios():
        path = write_golden(name)
        print(f"{name}: {path.stat().st_size} bytes")
