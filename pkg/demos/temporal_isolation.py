"""
A 2/5 ms controller next to a CPU hog
=====================================

sb1's AI thread has a 2 ms budget every 5 ms and shares its core with a
hog.  When sb0's link fails at 3 s, remote recovery in sb1 un-filters
the hot standby, which keeps its exact share.
"""

import numpy as np

from vmksim import Simulation, load_scenario

sim = Simulation(load_scenario("torcs_isolation")).run()

w = sim.vcpu_windows("sb1.ai")
print(f"{len(w)} windows of 5 ms: min {w.min()} max {w.max()} ticks")
print("sliding 5 ms max:", sim.vcpu_max_window("sb1.ai"))
print("hog runtime fg/bg:", sim.vcpus["sb1.hog"].stats.fg_runtime,
      sim.vcpus["sb1.hog"].stats.bg_runtime)

print("sb0 replies/s", sim.sample_series("sb0", "replies"))
print("sb1 replies/s", sim.sample_series("sb1", "replies"))
rep = sim.faults.reports[0]
print(f"{rep.mode} recovery on {rep.executor}: {rep.downtime_ticks / 1000:.1f} ms")
