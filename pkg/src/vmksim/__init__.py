"""Deterministic discrete-event simulator of a partitioned multikernel.

Each core hosts one sandbox kernel that schedules budgeted VCPUs
rate-monotonically.  Sandboxes talk through shared-page mailboxes, are
walled off from each other by page permissions, can hand threads to each
other without disturbing anyone's utilization, and can recover from
injected driver and channel faults.
"""

from .scenario import (AdmissionFailed, ParseError, Scenario, UnresolvedReference,
                       list_scenarios, load_scenario)
from .simulation import InvariantViolation, Simulation, run_scenario

__all__ = [
    "AdmissionFailed", "InvariantViolation", "ParseError", "Scenario", "Simulation",
    "UnresolvedReference", "list_scenarios", "load_scenario", "run_scenario",
]
