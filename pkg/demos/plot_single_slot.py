"""
One admission slot, solved two ways
===================================

A batch of slice requests arrives on the six-node half of Abilene. The exact
model picks the assignment with the fewest rejections and, among those, the
lowest normalised power and load. The greedy heuristic decides in a single
pass. The exact objective is never worse.
"""

from robust_slicing.heuristic import nea_onsu_admit
from robust_slicing.orchestrator import SimState
from robust_slicing.robins import RobustConfig, build_model
from robust_slicing.solver import export_lp, solve_exact
from robust_slicing.topology import enumerate_paths, load_topology
from robust_slicing.workload import WorkloadParams, generate_schedule

topology = load_topology("abilene-half", seed=0)
paths = enumerate_paths(topology, 5)
cfg = RobustConfig(gamma1=1, gamma2=1, delta1=0.1, delta2=0.1)
state = SimState.initial(topology, cfg)

arrivals = generate_schedule(3, WorkloadParams(n_slots=1, arrival_rate=4.0)).arrivals(1)
print(f"{len(arrivals)} slices, {sum(len(r.vms) for r in arrivals)} VMs")

model = build_model(state, arrivals, topology, paths, cfg)
print(f"model: {model.n_vars} columns, {model.n_rows} rows, families {sorted(model.families())}")

exact = solve_exact(model)
greedy = nea_onsu_admit(state, arrivals, topology, paths, cfg)
print(f"exact     objective {exact.objective:.4f} ({exact.status}), nodes on {sorted(exact.assignment.activated_nodes)}")
print(f"heuristic objective {greedy.objective_value:.4f}, nodes on {sorted(greedy.activated_nodes)}")

# the model in LP format, for any external MILP solver
print(export_lp(model)[:400])
