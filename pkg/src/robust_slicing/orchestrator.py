"""Time-slotted admission loop with protection ledgers.

Each slot: release expired slices, admit the arrivals (exact model or greedy
heuristic), commit the accepted ones. Protection capacity withheld for
demand deviations is booked per admitting slot in ledgers ``O^t`` and handed
back when every slice of that slot has expired.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from .errors import InternalConsistencyError, ValidationError
from .heuristic import nea_onsu_admit
from .robins import (Assignment, RobustConfig, build_model, check_solution, top_gamma_sum)
from .solver import SolverConfig, solve_exact
from .topology import PathTable, ResourceVector, Topology, enumerate_paths
from .workload import ArrivalSchedule, SliceRequest

__all__ = [
    "ActiveSlice",
    "SimState",
    "release_expired",
    "admit",
    "commit",
    "audit_state",
    "run_simulation",
    "node_protection",
    "link_protection",
]

AUDIT_TOL = 1e-6


@dataclass
class ActiveSlice:
    request: SliceRequest
    phi: int | None  # remaining full slots; None for permanent slices
    admitted_slot: int


@dataclass
class SimState:
    """Mutable infrastructure state between slots."""

    topology: Topology
    cfg: RobustConfig
    available: dict = field(default_factory=dict)
    avail_bw: dict = field(default_factory=dict)
    used_nodes: set = field(default_factory=set)
    used_links: set = field(default_factory=set)
    placements: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    active: dict = field(default_factory=dict)
    node_reservations: dict = field(default_factory=dict)
    link_reservations: dict = field(default_factory=dict)
    power_used_nodes: float = 0.0
    power_used_switches: float = 0.0
    clock: int = 0

    @classmethod
    def initial(cls, topology: Topology, cfg: RobustConfig) -> "SimState":
        state = cls(topology, cfg)
        state.available = {n: spec.capacity for n, spec in topology.nodes.items()}
        state.avail_bw = {l: spec.bandwidth for l, spec in topology.links.items()}
        return state

    @property
    def capacity(self) -> dict:
        return {n: spec.capacity for n, spec in self.topology.nodes.items()}

    def hosted_vms(self) -> dict:
        """node -> VmSpecs of active slices placed there."""
        out = {n: [] for n in self.topology.nodes}
        for entry in self.active.values():
            req = entry.request
            for vm in req.vms:
                out[self.placements[(*req.key, vm.id)]].append(vm)
        return out

    def carried_vls(self) -> dict:
        """link -> VlSpecs of active slices routed over it."""
        out = {l: [] for l in self.topology.links}
        for entry in self.active.values():
            req = entry.request
            for vl in req.vls:
                for l in self.embeddings[(*req.key, vl.id)].links:
                    out[l].append(vl)
        return out

    def reserved_protection(self) -> tuple[ResourceVector, float]:
        """Total withheld protection over all ledgers (nodes, links)."""
        total = ResourceVector()
        for vec in self.node_reservations.values():
            total = total + vec
        return total, float(sum(self.link_reservations.values()))

    def to_document(self) -> dict:
        """JSON-ready snapshot of the state for audits."""
        def vec(v):
            return list(v.as_tuple())
        return {
            "clock": self.clock,
            "available": {n: vec(v) for n, v in sorted(self.available.items())},
            "avail_bw": dict(sorted(self.avail_bw.items())),
            "used_nodes": sorted(self.used_nodes),
            "used_links": sorted(self.used_links),
            "placements": [[*k, n] for k, n in sorted(self.placements.items())],
            "embeddings": [[*k, list(p.links)] for k, p in sorted(self.embeddings.items())],
            "active": [{"tenant": k[0], "slice": k[1], "phi": e.phi,
                        "admitted_slot": e.admitted_slot}
                       for k, e in sorted(self.active.items())],
            "node_reservations": [[t, n, vec(v)] for (t, n), v in sorted(self.node_reservations.items())],
            "link_reservations": [[t, l, v] for (t, l), v in sorted(self.link_reservations.items())],
            "power_used_nodes": self.power_used_nodes,
            "power_used_switches": self.power_used_switches,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=1, sort_keys=True)


def node_protection(vms, cfg: RobustConfig) -> ResourceVector:
    """Worst-case minus nominal load of a VM population, per resource."""
    return ResourceVector(*(top_gamma_sum((cfg.delta1 * vm.nominal[r] for vm in vms), cfg.gamma1)
                            for r in range(3)))


def link_protection(vls, cfg: RobustConfig) -> float:
    return top_gamma_sum((cfg.delta2 * vl.nominal_rate for vl in vls), cfg.gamma2)


# -- bookkeeping -------------------------------------------------------------

def _held_node(state: SimState, n) -> ResourceVector:
    total = ResourceVector()
    for (t, m), vec in state.node_reservations.items():
        if m == n:
            total = total + vec
    return total


def _held_link(state: SimState, l) -> float:
    return sum(v for (t, m), v in state.link_reservations.items() if m == l)


def _refresh(state: SimState) -> None:
    """Recompute availability, usage flags and standing power from the registries."""
    topo = state.topology
    hosted = state.hosted_vms()
    carried = state.carried_vls()
    for n, spec in topo.nodes.items():
        used = [math.fsum(vm.nominal[r] for vm in hosted[n]) for r in range(3)]
        held = _held_node(state, n)
        avail = [spec.capacity[r] - used[r] - held[r] for r in range(3)]
        state.available[n] = ResourceVector(*(0.0 if abs(a) < 1e-9 else a for a in avail))
    for l, spec in topo.links.items():
        used = math.fsum(vl.nominal_rate for vl in carried[l])
        avail = spec.bandwidth - used - _held_link(state, l)
        state.avail_bw[l] = 0.0 if abs(avail) < 1e-9 else avail
    state.used_nodes = {n for n, vms in hosted.items() if vms}
    state.used_links = {l for l, vls in carried.items() if vls}
    power = 0.0
    for n in sorted(state.used_nodes):
        spec = topo.nodes[n]
        power += spec.p_idle
        if spec.capacity.cpu > 0:
            busy = spec.capacity.cpu - state.available[n].cpu
            power += (spec.p_max - spec.p_idle) * busy / spec.capacity.cpu
    state.power_used_nodes = power
    state.power_used_switches = math.fsum(topo.links[l].power_weight for l in sorted(state.used_links))


def _newest_slot_on(state: SimState, hosted_keys) -> int:
    return max(state.active[k].admitted_slot for k in hosted_keys)


def _rebalance(state: SimState) -> None:
    """Drop ledgers of idle elements; top up ledgers that no longer cover the protection."""
    hosted = state.hosted_vms()
    carried = state.carried_vls()
    node_keys = {n: set() for n in state.topology.nodes}
    link_keys = {l: set() for l in state.topology.links}
    for key, entry in state.active.items():
        req = entry.request
        for vm in req.vms:
            node_keys[state.placements[(*key, vm.id)]].add(key)
        for vl in req.vls:
            for l in state.embeddings[(*key, vl.id)].links:
                link_keys[l].add(key)
    for n in state.topology.nodes:
        if not hosted[n]:
            for tk in [tk for tk in state.node_reservations if tk[1] == n]:
                del state.node_reservations[tk]
            continue
        need = node_protection(hosted[n], state.cfg) - _held_node(state, n)
        short = need.clip_min(0.0)
        if any(short):
            t = _newest_slot_on(state, node_keys[n])
            state.node_reservations[(t, n)] = state.node_reservations.get((t, n), ResourceVector()) + short
    for l in state.topology.links:
        if not carried[l]:
            for tk in [tk for tk in state.link_reservations if tk[1] == l]:
                del state.link_reservations[tk]
            continue
        short = link_protection(carried[l], state.cfg) - _held_link(state, l)
        if short > 0:
            t = _newest_slot_on(state, link_keys[l])
            state.link_reservations[(t, l)] = state.link_reservations.get((t, l), 0.0) + short


# -- operations --------------------------------------------------------------

def release_expired(state: SimState) -> dict:
    """Start-of-slot release of slices whose lifespan ran out.

    Returns a summary with the released slice keys and the slots whose
    protection ledgers were handed back.
    """
    released = []
    for key in sorted(state.active):
        entry = state.active[key]
        if entry.phi is None:
            continue
        if entry.phi == 0:
            released.append(key)
        else:
            entry.phi -= 1
    for key in released:
        req = state.active.pop(key).request
        for vm in req.vms:
            del state.placements[(*key, vm.id)]
        for vl in req.vls:
            del state.embeddings[(*key, vl.id)]
    live_slots = {e.admitted_slot for e in state.active.values()}
    freed = sorted({t for t, _ in state.node_reservations} | {t for t, _ in state.link_reservations})
    freed = [t for t in freed if t not in live_slots]
    for t in freed:
        for tk in [tk for tk in state.node_reservations if tk[0] == t]:
            del state.node_reservations[tk]
        for tk in [tk for tk in state.link_reservations if tk[0] == t]:
            del state.link_reservations[tk]
    _rebalance(state)
    _refresh(state)
    return {"released": released, "ledgers_returned": freed}


def admit(state: SimState, arrivals: Sequence[SliceRequest], mode: str, topology: Topology,
          paths: PathTable, cfg: RobustConfig, solver_cfg: SolverConfig = SolverConfig(),
          info: dict | None = None) -> Assignment:
    """Admission decision for one slot, validated against every constraint family.

    ``info`` (optional) receives the solver status and statistics.
    """
    arrivals = list(arrivals)
    info = {} if info is None else info
    if mode == "heuristic":
        stats: dict = {}
        assignment = nea_onsu_admit(state, arrivals, topology, paths, cfg, stats)
        info.update(status="heuristic", ops=stats.get("ops", 0))
    elif mode == "exact":
        model = build_model(state, arrivals, topology, paths, cfg)
        seed = None
        if solver_cfg.warm_start and arrivals:
            greedy = nea_onsu_admit(state, arrivals, topology, paths, cfg)
            seed = model.encode(greedy, state, topology, cfg)
        sol = solve_exact(model, solver_cfg, incumbent=seed)
        assignment = sol.assignment
        # the objective reported is the direct evaluation, not the LP value
        info.update(status=sol.status, bound=sol.bound, nodes=sol.stats.get("nodes", 0))
    else:
        raise ValidationError(f"unknown admission mode {mode!r}")
    violations = check_solution(state, arrivals, topology, paths, cfg, assignment)
    if violations:
        raise InternalConsistencyError(
            f"{mode} admission produced an infeasible assignment: {violations[:5]}")
    return assignment


def commit(state: SimState, assignment: Assignment, arrivals: Sequence[SliceRequest],
           slot: int) -> SimState:
    """Apply an accepted assignment and book this slot's protection ledgers."""
    if not assignment.accepted:
        state.clock = slot
        return state
    by_key = {r.key: r for r in arrivals}
    before_nodes = {n: _held_node(state, n) for n in state.topology.nodes}
    before_links = {l: _held_link(state, l) for l in state.topology.links}
    for key in sorted(assignment.accepted):
        req = by_key[key]
        if key in state.active:
            raise ValidationError(f"slice {key} is already active")
        for vm in req.vms:
            state.placements[(*key, vm.id)] = assignment.placements[(*key, vm.id)]
        for vl in req.vls:
            state.embeddings[(*key, vl.id)] = assignment.embeddings[(*key, vl.id)]
        phi = None if req.lifespan is None else max(req.lifespan - 1, 0)
        state.active[key] = ActiveSlice(req, phi, slot)
    hosted = state.hosted_vms()
    carried = state.carried_vls()
    cfg = state.cfg
    for n in state.topology.nodes:
        delta = (node_protection(hosted[n], cfg) - before_nodes[n]).clip_min(0.0)
        if any(delta):
            state.node_reservations[(slot, n)] = delta
    for l in state.topology.links:
        delta = max(0.0, link_protection(carried[l], cfg) - before_links[l])
        if delta > 0:
            state.link_reservations[(slot, l)] = delta
    state.clock = slot
    _refresh(state)
    problems = audit_state(state)
    if problems:
        raise InternalConsistencyError(f"state audit failed after slot {slot}: {problems[:5]}")
    return state


def audit_state(state: SimState) -> list[str]:
    """Conservation, range, flag and ledger-coverage checks; empty when consistent."""
    out = []
    topo = state.topology
    hosted = state.hosted_vms()
    carried = state.carried_vls()
    for n, spec in topo.nodes.items():
        avail = state.available[n]
        held = _held_node(state, n)
        for r in range(3):
            total = avail[r] + sum(vm.nominal[r] for vm in hosted[n]) + held[r]
            if abs(total - spec.capacity[r]) > AUDIT_TOL * max(1.0, spec.capacity[r]):
                out.append(f"node {n}: resource {r} not conserved ({total} vs {spec.capacity[r]})")
            if avail[r] < -AUDIT_TOL or avail[r] > spec.capacity[r] + AUDIT_TOL:
                out.append(f"node {n}: available {avail[r]} out of range")
        need = node_protection(hosted[n], state.cfg)
        if not need.fits(held, AUDIT_TOL):
            out.append(f"node {n}: ledgers {held} do not cover protection {need}")
        if (n in state.used_nodes) != bool(hosted[n]):
            out.append(f"node {n}: usage flag out of sync")
    for l, spec in topo.links.items():
        avail = state.avail_bw[l]
        held = _held_link(state, l)
        total = avail + sum(vl.nominal_rate for vl in carried[l]) + held
        if abs(total - spec.bandwidth) > AUDIT_TOL * max(1.0, spec.bandwidth):
            out.append(f"link {l}: bandwidth not conserved ({total} vs {spec.bandwidth})")
        if avail < -AUDIT_TOL or avail > spec.bandwidth + AUDIT_TOL:
            out.append(f"link {l}: available {avail} out of range")
        if link_protection(carried[l], state.cfg) > held + AUDIT_TOL:
            out.append(f"link {l}: ledgers do not cover protection")
        if (l in state.used_links) != bool(carried[l]):
            out.append(f"link {l}: usage flag out of sync")
    return out


# -- simulation loop ---------------------------------------------------------

@dataclass
class SimulationResult:
    records: list
    state: SimState
    assignments: list = field(default_factory=list)
    infos: list = field(default_factory=list)


def run_simulation(topology: Topology, schedule: ArrivalSchedule, mode: str,
                   cfg: RobustConfig, solver_cfg: SolverConfig = SolverConfig(),
                   paths: PathTable | None = None, k_paths: int = 5, drain: bool = False,
                   record_timing: bool = True, on_slot=None) -> SimulationResult:
    """Run the slot loop over ``schedule``.

    With ``drain`` the loop continues with empty slots until every
    finite-lifespan slice has expired. ``on_slot(state, arrivals, assignment,
    slot)`` is called after each commit. With ``record_timing=False`` the
    admission wall time is recorded as 0 so repeated runs are byte-identical.
    """
    from .metrics import SlotRecord

    if schedule.n_slots < 1:
        raise ValidationError("schedule needs at least one slot")
    paths = enumerate_paths(topology, k_paths) if paths is None else paths
    state = SimState.initial(topology, cfg)
    result = SimulationResult([], state)
    slot = 0
    while True:
        slot += 1
        if slot > schedule.n_slots and not (drain and any(
                e.phi is not None for e in state.active.values())):
            break
        if slot > 1:
            release_expired(state)
        arrivals = schedule.arrivals(slot)
        info: dict = {}
        start = time.perf_counter()
        assignment = admit(state, arrivals, mode, topology, paths, cfg, solver_cfg, info)
        elapsed = time.perf_counter() - start if record_timing else 0.0
        commit(state, assignment, arrivals, slot)
        if on_slot is not None:
            on_slot(state, arrivals, assignment, slot)
        result.assignments.append(assignment)
        result.infos.append(info)
        result.records.append(SlotRecord(
            slot=slot, arrived=len(arrivals), accepted=len(assignment.accepted),
            eta=assignment.eta, node_power=state.power_used_nodes,
            switch_power=state.power_used_switches,
            total_power=state.power_used_nodes + state.power_used_switches,
            active_servers=len(state.used_nodes), active_links=len(state.used_links),
            admit_wall_time=elapsed))
    return result
