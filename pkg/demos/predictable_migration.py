"""
Moving an edge detector between sandboxes
=========================================

The Canny thread leaves sb1 for sb2 at 5 s, right after spending its
budget, so its next replenishment is 79.8 ms away.  The 4 MB copy is
charged to sb1's 10/50 ms migration VCPU.
"""

import numpy as np

from vmksim import Simulation, load_scenario
from vmksim.migration import check_condition, estimate_delta

sc = load_scenario("fig10_migration")
sim = Simulation(sc).run()
ctl = Simulation(sc.without_migrations()).run()

rep = sim.migration.reports[0]
print(f"E_s={rep.e_s}  worst copy={rep.delta_s_worst}  actual copy={rep.delta_s_actual}")
print("worst case for 1024 pages:", estimate_delta(1024), "ticks")
print("safe:", check_condition(rep.e_s, rep.delta_s_worst, rep.c_m, rep.t_m))

# frames per second, summed over both sandboxes since the thread moves
frames = np.add(sim.sample_series("sb1", "frames"), sim.sample_series("sb2", "frames"))
print("frames/s", frames.tolist())

# the migration thread's CPU use spikes only in the sample holding the copy
print("sb1.migration per sample", sim.summary()["vcpus"]["sb1.migration"]["sample_runtime"])

# every other VCPU sees the same per-period runtime as without migration
for name in sim.vcpus:
    if name.endswith("migration"):
        continue
    same = np.array_equal(sim.vcpu_windows(name), ctl.vcpu_windows(name))
    print(f"{name:14s} windows unchanged: {same}")
