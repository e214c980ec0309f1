"""
Message transfer cost versus size
=================================

Six sender/receiver pairs spin on mailbox status bits.  "hi" pairs run
on 50/100 ms VCPUs; "lo" pairs get 40/100 ms and share their cores with a
10/50 ms shell that runs first.
"""

import numpy as np

from vmksim import Simulation, load_scenario

sim = Simulation(load_scenario("appendixD_ipc")).run()
sizes = np.array([64, 1024, 4096])

for level in ("hi", "lo"):
    per_msg = []
    for size in sizes:
        recs = sim.receptions[f"{level}_{size}_rx"]
        per_msg.append(recs[-1][0] / len(recs))
    per_msg = np.array(per_msg)
    slope, offset = np.polyfit(sizes, per_msg, 1)
    print(f"{level}: {per_msg.round(3).tolist()} ticks/message, "
          f"{slope * 1000:.3f} ns/byte + {offset:.3f} ticks")
