"""
Forty slots of online admission
===============================

Slices arrive, stay for a random number of slots and leave. Protection
capacity is booked per admitting slot and returned once every slice of that
slot has gone. The table compares the two admission modes slot by slot.
"""

from robust_slicing.metrics import final_acceptance
from robust_slicing.orchestrator import run_simulation
from robust_slicing.robins import RobustConfig
from robust_slicing.topology import load_topology
from robust_slicing.workload import WorkloadParams, generate_schedule

topology = load_topology("abilene-half", seed=4)
schedule = generate_schedule(4, WorkloadParams(n_slots=40))
cfg = RobustConfig(gamma1=2, gamma2=2, delta1=0.1, delta2=0.1)

runs = {mode: run_simulation(topology, schedule, mode, cfg) for mode in ("exact", "heuristic")}

print("slot  arrived  exact(acc, W, servers)   heuristic(acc, W, servers)")
for e, h in zip(runs["exact"].records, runs["heuristic"].records):
    if e.slot % 5 == 0:
        print(f"{e.slot:4d}  {e.arrived:7d}  {e.accepted:3d} {e.total_power:8.1f} {e.active_servers:3d}"
              f"          {h.accepted:3d} {h.total_power:8.1f} {h.active_servers:3d}")

for mode, result in runs.items():
    times = [r.admit_wall_time for r in result.records]
    print(f"{mode}: acceptance {final_acceptance(result.records):.1f}%, "
          f"mean admit time {1000 * sum(times) / len(times):.2f} ms")
