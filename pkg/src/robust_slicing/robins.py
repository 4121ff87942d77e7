"""Gamma-robust binary linear program for one admission slot.

The model places the VMs of the slices arriving in the current slot, embeds
their VLs on candidate paths, and decides which slices to reject, minimising

    w_eta * eta + N_c / N_total + S_c / S_total
        + sum_n U_ram / R_ram + sum_n U_stor / R_stor + sum_l U'_l / B_total

against the resources still available after earlier slots. Demand deviations
are protected with the usual Gamma-robust dual: per node and resource,
``U = sum nominal*pi + sum rho1 + gamma1 * z1`` with ``dev*pi <= rho1 + z1``,
and likewise per link.

Besides the model, this module provides the independent route used to verify
it: closed-form worst-case loads and a direct constraint checker that never
looks at a model object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .topology import RESOURCES, PathTable, ResourceVector, Topology
from .workload import SliceRequest, VlSpec, VmSpec

__all__ = [
    "RobustConfig",
    "VarCatalog",
    "RobinsModel",
    "Assignment",
    "Violation",
    "build_model",
    "check_solution",
    "evaluate_objective",
    "worst_case_node_load",
    "worst_case_link_load",
    "top_gamma_sum",
]

TOL = 1e-6


@dataclass(frozen=True)
class RobustConfig:
    """Protection levels, relative deviations and the rejection weight.

    ``eta_weight=None`` picks a weight large enough that rejecting one more
    slice can never pay for itself; ``paper_faithful_objective`` forces 1.
    """

    gamma1: int = 0
    gamma2: int = 0
    delta1: float = 0.0
    delta2: float = 0.0
    eta_weight: float | None = None
    paper_faithful_objective: bool = False

    def __post_init__(self):
        for g in (self.gamma1, self.gamma2):
            if int(g) != g or g < 0:
                raise ValidationError("protection levels must be non-negative integers")
        for d in (self.delta1, self.delta2):
            if not 0.0 <= d <= 1.0:
                raise ValidationError("relative deviations must lie in [0, 1]")
        if self.eta_weight is not None and self.eta_weight <= 0:
            raise ValidationError("eta_weight must be positive")

    def resolved_eta_weight(self, topology: Topology) -> float:
        if self.paper_faithful_objective:
            return 1.0
        if self.eta_weight is not None:
            return float(self.eta_weight)
        n, l = len(topology.nodes), len(topology.links)
        # the five non-rejection terms together stay below 2|N| + 3
        return float(max(n + l + 4, 2 * n + 4))


# -- worst-case oracles ----------------------------------------------------

def top_gamma_sum(deviations: Iterable[float], gamma: int) -> float:
    """Largest total of at most ``gamma`` non-negative deviations."""
    if gamma <= 0:
        return 0.0
    devs = sorted(deviations, reverse=True)
    return float(sum(devs[:gamma]))


def worst_case_node_load(vms: Sequence[VmSpec], gamma1: int, delta1: float) -> ResourceVector:
    """Nominal total plus the worst ``gamma1`` VM deviations, per resource."""
    out = []
    for r in range(3):
        nominal = [vm.nominal[r] for vm in vms]
        out.append(sum(nominal) + top_gamma_sum((delta1 * x for x in nominal), gamma1))
    return ResourceVector(*out)


def worst_case_link_load(vls: Sequence[VlSpec], gamma2: int, delta2: float) -> float:
    """Nominal rate total plus the worst ``gamma2`` VL deviations (Mbps)."""
    rates = [vl.nominal_rate for vl in vls]
    return float(sum(rates) + top_gamma_sum((delta2 * x for x in rates), gamma2))


# -- assignment ------------------------------------------------------------

VmKey = tuple  # (tenant, slice, vm_id)
VlKey = tuple  # (tenant, slice, vl_id)


@dataclass
class Assignment:
    """Admission decisions for one slot."""

    accepted: set = field(default_factory=set)
    placements: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    activated_nodes: set = field(default_factory=set)
    activated_links: set = field(default_factory=set)
    objective_value: float = 0.0
    eta: int = 0

    def encoding(self) -> tuple:
        """Canonical tuple used for deterministic tie-breaking."""
        return (tuple(sorted(self.accepted)),
                tuple(sorted(self.placements.items())),
                tuple(sorted((k, p.links) for k, p in self.embeddings.items())))


@dataclass(frozen=True)
class Violation:
    family: str
    entity: object
    detail: str = ""


def _state_view(state, topology: Topology):
    available = {n: state.available[n] for n in topology.nodes}
    avail_bw = {l: float(state.avail_bw[l]) for l in topology.links}
    used_nodes = set(state.used_nodes)
    used_links = set(state.used_links)
    return available, avail_bw, used_nodes, used_links


def slot_loads(arrivals: Sequence[SliceRequest], assignment: Assignment, cfg: RobustConfig):
    """Per-node hosted VMs and per-link carried VLs of this slot's assignment."""
    vms_on: dict[str, list[VmSpec]] = {}
    vls_on: dict[str, list[VlSpec]] = {}
    for req in arrivals:
        if req.key not in assignment.accepted:
            continue
        for vm in req.vms:
            node = assignment.placements.get((*req.key, vm.id))
            if node is not None:
                vms_on.setdefault(node, []).append(vm)
        for vl in req.vls:
            path = assignment.embeddings.get((*req.key, vl.id))
            if path is not None:
                for lid in path.links:
                    vls_on.setdefault(lid, []).append(vl)
    return vms_on, vls_on


def evaluate_objective(state, arrivals: Sequence[SliceRequest], topology: Topology,
                       cfg: RobustConfig, assignment: Assignment) -> float:
    """Objective of an assignment computed directly from its decisions."""
    _, _, used_nodes, _ = _state_view(state, topology)
    vms_on, vls_on = slot_loads(arrivals, assignment, cfg)
    eta = sum(1 for r in arrivals if r.key not in assignment.accepted)
    n_c = 0.0
    ram = stor = 0.0
    for nid, node in topology.nodes.items():
        load = worst_case_node_load(vms_on.get(nid, ()), cfg.gamma1, cfg.delta1)
        if node.capacity.cpu > 0:
            n_c += (node.p_max - node.p_idle) * load.cpu / node.capacity.cpu
        if nid in assignment.activated_nodes and nid not in used_nodes:
            n_c += node.p_idle
        if node.capacity.ram > 0:
            ram += load.ram / node.capacity.ram
        if node.capacity.storage > 0:
            stor += load.storage / node.capacity.storage
    s_c = sum(topology.links[l].power_weight for l in assignment.activated_links)
    link_load = sum(worst_case_link_load(vls, cfg.gamma2, cfg.delta2) for vls in vls_on.values())
    total = cfg.resolved_eta_weight(topology) * eta + ram + stor
    if topology.n_total_power > 0:
        total += n_c / topology.n_total_power
    if topology.s_total_power > 0:
        total += s_c / topology.s_total_power
    if topology.b_total > 0:
        total += link_load / topology.b_total
    return float(total)


def check_solution(state, arrivals: Sequence[SliceRequest], topology: Topology,
                   paths: PathTable, cfg: RobustConfig, assignment: Assignment,
                   objective_tol: float = 1e-6) -> list[Violation]:
    """Re-evaluate every constraint family directly from ``assignment``.

    Returns the violated families with the offending entity; an empty list
    means the assignment is feasible and its stored objective is correct.
    """
    available, avail_bw, used_nodes, used_links = _state_view(state, topology)
    out: list[Violation] = []
    keys = {r.key for r in arrivals}
    for key in assignment.accepted - keys:
        out.append(Violation("C1", key, "accepted slice is not among the arrivals"))
    eta = sum(1 for r in arrivals if r.key not in assignment.accepted)
    if assignment.eta != eta:
        out.append(Violation("C1", None, f"eta={assignment.eta}, rejected count={eta}"))

    known_vms, known_vls = set(), set()
    for req in arrivals:
        accepted = req.key in assignment.accepted
        for vm in req.vms:
            k = (*req.key, vm.id)
            known_vms.add(k)
            node = assignment.placements.get(k)
            if accepted and node is None:
                out.append(Violation("C2", k, "VM of an accepted slice is not placed"))
            elif not accepted and node is not None:
                out.append(Violation("C2", k, "VM of a rejected slice is placed"))
            elif node is not None and node not in topology.nodes:
                out.append(Violation("C2", k, f"unknown node {node!r}"))
        for vl in req.vls:
            k = (*req.key, vl.id)
            known_vls.add(k)
            path = assignment.embeddings.get(k)
            if accepted and path is None:
                out.append(Violation("C3", k, "VL of an accepted slice is not embedded"))
                continue
            if not accepted:
                if path is not None:
                    out.append(Violation("C3", k, "VL of a rejected slice is embedded"))
                continue
            a = assignment.placements.get((*req.key, vl.endpoints[0]))
            b = assignment.placements.get((*req.key, vl.endpoints[1]))
            if a is None or b is None or path not in paths.get(a, b):
                out.append(Violation("C4", k, f"path does not join the hosts {a!r} and {b!r}"))
            if path.delay > vl.max_delay + 1e-9:
                out.append(Violation("C9", k, f"delay {path.delay:.4f} > {vl.max_delay:.4f}"))
    for k in set(assignment.placements) - known_vms:
        out.append(Violation("C2", k, "placement for an unknown VM"))
    for k in set(assignment.embeddings) - known_vls:
        out.append(Violation("C3", k, "embedding for an unknown VL"))

    vms_on, vls_on = slot_loads(arrivals, assignment, cfg)
    for nid, vms in vms_on.items():
        if nid not in topology.nodes:
            continue
        load = worst_case_node_load(vms, cfg.gamma1, cfg.delta1)
        avail = available[nid]
        for r, name in enumerate(RESOURCES):
            if load[r] > avail[r] + TOL * max(1.0, abs(avail[r])):
                out.append(Violation("C6", nid, f"{name} load {load[r]:.6g} > available {avail[r]:.6g}"))
        if nid not in used_nodes and nid not in assignment.activated_nodes:
            out.append(Violation("C12", nid, "VMs placed on a node that is not switched on"))
    for nid in assignment.activated_nodes:
        if nid in used_nodes:
            out.append(Violation("C11", nid, "node already on is activated again"))
        elif nid not in topology.nodes:
            out.append(Violation("C12", nid, "unknown node activated"))
    for lid, vls in vls_on.items():
        if lid not in topology.links:
            out.append(Violation("C7", lid, "unknown link"))
            continue
        load = worst_case_link_load(vls, cfg.gamma2, cfg.delta2)
        if load > avail_bw[lid] + TOL * max(1.0, avail_bw[lid]):
            out.append(Violation("C8", lid, f"load {load:.6g} > available {avail_bw[lid]:.6g}"))
        if lid not in used_links and lid not in assignment.activated_links:
            out.append(Violation("C8", lid, "VLs routed over a link that is not activated"))
    for lid in assignment.activated_links:
        if lid in used_links or lid not in topology.links:
            out.append(Violation("C13", lid, "activated link is already in use or unknown"))

    if not out:
        value = evaluate_objective(state, arrivals, topology, cfg, assignment)
        if abs(value - assignment.objective_value) > objective_tol * max(1.0, abs(value)):
            out.append(Violation("objective", None,
                                 f"stored {assignment.objective_value:.12g} != recomputed {value:.12g}"))
    return out


# -- model -----------------------------------------------------------------

@dataclass
class VarCatalog:
    """Index maps from model entities to variable columns."""

    eta: int | None = None
    delta: dict = field(default_factory=dict)   # slice key -> col
    pi: dict = field(default_factory=dict)      # (vm key, node) -> col
    xi: dict = field(default_factory=dict)      # (vl key, n, n2, b) -> col
    beta: dict = field(default_factory=dict)    # node -> col
    theta: dict = field(default_factory=dict)   # link -> col
    U: dict = field(default_factory=dict)       # (node, r) -> col
    Ul: dict = field(default_factory=dict)      # link -> col
    Nc: int | None = None
    Sc: int | None = None
    rho1: dict = field(default_factory=dict)    # (vm key, node, r) -> col
    z1: dict = field(default_factory=dict)      # (node, r) -> col
    rho2: dict = field(default_factory=dict)    # (vl key, link) -> col
    z2: dict = field(default_factory=dict)      # link -> col


@dataclass(frozen=True)
class RobinsModel:
    """Sparse linear model: ``A x (sense) rhs``, bounds, objective ``c``.

    ``row_tags`` names the constraint family of every row; ``row_names`` and
    ``var_names`` are unique LP-format identifiers.
    """

    var_names: tuple
    is_binary: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    row_names: tuple
    row_tags: tuple
    catalog: VarCatalog
    arrivals: tuple
    paths: PathTable
    node_ids: tuple
    link_ids: tuple
    eta_weight: float

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    def families(self) -> set:
        return set(self.row_tags)

    def decode(self, x: np.ndarray, objective: float | None = None) -> Assignment:
        """Read an Assignment off a (binary-integral) point."""
        cat = self.catalog
        on = lambda col: x[col] > 0.5  # noqa: E731
        accepted = {k for k, col in cat.delta.items() if on(col)}
        placements = {vm_key: n for (vm_key, n), col in cat.pi.items() if on(col)}
        embeddings = {}
        for (vl_key, n, n2, b), col in cat.xi.items():
            if on(col):
                embeddings[vl_key] = self.paths.get(n, n2)[b]
        nodes = {n for n, col in cat.beta.items() if on(col)}
        links = {l for l, col in cat.theta.items() if on(col)}
        value = float(self.c @ x) if objective is None else float(objective)
        eta = len(self.arrivals) - len(accepted)
        return Assignment(accepted, placements, embeddings, nodes, links, value, eta)

    def encode(self, assignment: Assignment, state, topology: Topology,
               cfg: RobustConfig) -> np.ndarray:
        """Feasible point for ``assignment`` with minimal auxiliaries."""
        cat = self.catalog
        x = np.zeros(self.n_vars)
        if cat.eta is not None:
            x[cat.eta] = assignment.eta
        for k, col in cat.delta.items():
            x[col] = 1.0 if k in assignment.accepted else 0.0
        for (vm_key, n), col in cat.pi.items():
            x[col] = 1.0 if assignment.placements.get(vm_key) == n else 0.0
        for (vl_key, n, n2, b), col in cat.xi.items():
            path = assignment.embeddings.get(vl_key)
            x[col] = 1.0 if path is not None and self.paths.get(n, n2)[b] == path and \
                _hosts(assignment, vl_key, self.arrivals) == (n, n2) else 0.0
        for n, col in cat.beta.items():
            x[col] = 1.0 if n in assignment.activated_nodes else 0.0
        for l, col in cat.theta.items():
            x[col] = 1.0 if l in assignment.activated_links else 0.0
        vms_on, vls_on = slot_loads(self.arrivals, assignment, cfg)
        vm_of = {(*r.key, vm.id): vm for r in self.arrivals for vm in r.vms}
        vl_of = {(*r.key, vl.id): vl for r in self.arrivals for vl in r.vls}
        for n in self.node_ids:
            hosted = vms_on.get(n, [])
            load = worst_case_node_load(hosted, cfg.gamma1, cfg.delta1)
            for r, name in enumerate(RESOURCES):
                x[cat.U[(n, name)]] = load[r]
                if (n, name) in cat.z1:
                    devs = sorted((cfg.delta1 * vm.nominal[r] for vm in hosted), reverse=True)
                    z = devs[cfg.gamma1 - 1] if len(devs) >= cfg.gamma1 else 0.0
                    x[cat.z1[(n, name)]] = z
                    for vm_key, node in assignment.placements.items():
                        if node == n and (vm_key, n, name) in cat.rho1:
                            dev = cfg.delta1 * vm_of[vm_key].nominal[r]
                            x[cat.rho1[(vm_key, n, name)]] = max(0.0, dev - z)
        for l in self.link_ids:
            carried = vls_on.get(l, [])
            x[cat.Ul[l]] = worst_case_link_load(carried, cfg.gamma2, cfg.delta2)
            if l in cat.z2:
                devs = sorted((cfg.delta2 * vl.nominal_rate for vl in carried), reverse=True)
                z = devs[cfg.gamma2 - 1] if len(devs) >= cfg.gamma2 else 0.0
                x[cat.z2[l]] = z
                for vl_key, path in assignment.embeddings.items():
                    if l in path.links and (vl_key, l) in cat.rho2:
                        dev = cfg.delta2 * vl_of[vl_key].nominal_rate
                        x[cat.rho2[(vl_key, l)]] = max(0.0, dev - z)
        if cat.Nc is not None:
            row = self.row_tags.index("C10")
            x[cat.Nc] = 0.0
            x[cat.Nc] = -(self.A.getrow(row) @ x)[0]
        if cat.Sc is not None:
            row = self.row_tags.index("C13")
            x[cat.Sc] = 0.0
            x[cat.Sc] = -(self.A.getrow(row) @ x)[0]
        return x


def _hosts(assignment: Assignment, vl_key, arrivals):
    for req in arrivals:
        if req.key == vl_key[:2]:
            for vl in req.vls:
                if vl.id == vl_key[2]:
                    a, b = vl.endpoints
                    return (assignment.placements.get((*req.key, a)),
                            assignment.placements.get((*req.key, b)))
    return (None, None)


class _Builder:
    def __init__(self):
        self.names: list[str] = []
        self.binary: list[bool] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: dict[int, float] = {}
        self.rows: list[tuple[str, str, dict, str, float]] = []

    def var(self, name, binary=False, lb=0.0, ub=np.inf):
        self.names.append(name)
        self.binary.append(binary)
        self.lb.append(lb)
        self.ub.append(1.0 if binary else ub)
        return len(self.names) - 1

    def row(self, tag, name, coefs, sense, rhs):
        self.rows.append((tag, name, coefs, sense, float(rhs)))


def _add(coefs: dict, col: int, value: float):
    coefs[col] = coefs.get(col, 0.0) + value


def build_model(state, arrivals: Sequence[SliceRequest], topology: Topology,
                paths: PathTable, cfg: RobustConfig) -> RobinsModel:
    """Assemble the slot's robust BLP against ``state``'s remaining resources."""
    available, avail_bw, used_nodes, used_links = _state_view(state, topology)
    for nid, vec in available.items():
        if not vec.is_nonnegative(1e-9) or not vec.fits(topology.nodes[nid].capacity, 1e-6):
            raise ValidationError(f"state: available resources of {nid!r} out of range")
    for lid, bw in avail_bw.items():
        if bw < -1e-9 or bw > topology.links[lid].bandwidth + 1e-6:
            raise ValidationError(f"state: available bandwidth of {lid!r} out of range")
    arrivals = tuple(arrivals)
    if len({r.key for r in arrivals}) != len(arrivals):
        raise ValidationError("arrivals contain duplicate slice keys")
    nodes = tuple(topology.nodes)
    links = tuple(topology.links)
    node_ix = {n: i for i, n in enumerate(nodes)}
    link_ix = {l: i for i, l in enumerate(links)}
    w_eta = cfg.resolved_eta_weight(topology)
    cat = VarCatalog()
    bld = _Builder()

    if not arrivals:
        return _finish(bld, cat, arrivals, paths, nodes, links, w_eta)

    # variables
    cat.eta = bld.var("eta", ub=float(len(arrivals)))
    bld.cost[cat.eta] = w_eta
    vm_index: list[tuple] = []
    vl_index: list[tuple] = []
    for s, req in enumerate(arrivals):
        cat.delta[req.key] = bld.var(f"delta_s{s}", binary=True)
        for vm in req.vms:
            vm_key = (*req.key, vm.id)
            vm_index.append((s, req, vm, vm_key))
            for n in nodes:
                cat.pi[(vm_key, n)] = bld.var(f"pi_s{s}_vm{vm.id}_node{node_ix[n]}", binary=True)
        for vl in req.vls:
            vl_key = (*req.key, vl.id)
            vl_index.append((s, req, vl, vl_key))
            for n in nodes:
                for n2 in nodes:
                    for b, _ in enumerate(paths.get(n, n2)):
                        cat.xi[(vl_key, n, n2, b)] = bld.var(
                            f"xi_s{s}_vl{vl.id}_node{node_ix[n]}_node{node_ix[n2]}_p{b}",
                            binary=True)
    for n in nodes:
        if n not in used_nodes:
            cat.beta[n] = bld.var(f"beta_node{node_ix[n]}", binary=True)
    for l in links:
        if l not in used_links:
            cat.theta[l] = bld.var(f"theta_link{link_ix[l]}", binary=True)
    for n in nodes:
        for name in RESOURCES:
            cat.U[(n, name)] = bld.var(f"U_node{node_ix[n]}_{name}")
    for l in links:
        cat.Ul[l] = bld.var(f"Ul_link{link_ix[l]}")
    cat.Nc = bld.var("Nc")
    cat.Sc = bld.var("Sc")
    if cfg.gamma1 > 0:
        for s, req, vm, vm_key in vm_index:
            for n in nodes:
                for name in RESOURCES:
                    cat.rho1[(vm_key, n, name)] = bld.var(
                        f"rho1_s{s}_vm{vm.id}_node{node_ix[n]}_{name}")
        for n in nodes:
            for name in RESOURCES:
                cat.z1[(n, name)] = bld.var(f"z1_node{node_ix[n]}_{name}")
    # links each VL could touch
    vl_links: dict[tuple, dict[str, list[int]]] = {}
    for s, req, vl, vl_key in vl_index:
        touched: dict[str, list[int]] = {}
        for (key, n, n2, b), col in cat.xi.items():
            if key == vl_key:
                for lid in paths.get(n, n2)[b].links:
                    touched.setdefault(lid, []).append(col)
        vl_links[vl_key] = {l: touched[l] for l in links if l in touched}
    if cfg.gamma2 > 0:
        for s, req, vl, vl_key in vl_index:
            for lid in vl_links[vl_key]:
                cat.rho2[(vl_key, lid)] = bld.var(f"rho2_s{s}_vl{vl.id}_link{link_ix[lid]}")
        for l in links:
            cat.z2[l] = bld.var(f"z2_link{link_ix[l]}")

    xi_by_vl: dict[tuple, list] = {}
    for (vl_key, n, n2, b), col in cat.xi.items():
        xi_by_vl.setdefault(vl_key, []).append((n, n2, b, col))

    # C1: eta counts rejected slices
    coefs = {cat.eta: 1.0}
    for req in arrivals:
        coefs[cat.delta[req.key]] = 1.0
    bld.row("C1", "C1_rejected", coefs, "=", len(arrivals))
    # C2: each VM of an accepted slice on exactly one node
    for s, req, vm, vm_key in vm_index:
        coefs = {cat.pi[(vm_key, n)]: 1.0 for n in nodes}
        coefs[cat.delta[req.key]] = -1.0
        bld.row("C2", f"C2_s{s}_vm{vm.id}", coefs, "=", 0.0)
    # C3: each VL of an accepted slice on exactly one path
    for s, req, vl, vl_key in vl_index:
        coefs = {col: 1.0 for *_, col in xi_by_vl.get(vl_key, [])}
        coefs[cat.delta[req.key]] = -1.0
        bld.row("C3", f"C3_s{s}_vl{vl.id}", coefs, "=", 0.0)
    # C4-1..C4-3: path choice linked to both endpoint placements
    for s, req, vl, vl_key in vl_index:
        a, b_vm = vl.endpoints
        ka, kb = (*req.key, a), (*req.key, b_vm)
        by_src: dict[str, dict] = {n: {} for n in nodes}
        by_dst: dict[str, dict] = {n: {} for n in nodes}
        by_pair: dict[tuple, dict] = {}
        for n, n2, b, col in xi_by_vl.get(vl_key, []):
            by_src[n][col] = 1.0
            by_dst[n2][col] = 1.0
            by_pair.setdefault((n, n2), {})[col] = 1.0
        for n in nodes:
            coefs = dict(by_src[n])
            coefs[cat.pi[(ka, n)]] = -1.0
            bld.row("C4-1", f"C4_1_s{s}_vl{vl.id}_node{node_ix[n]}", coefs, "<", 0.0)
        for n in nodes:
            for n2 in nodes:
                coefs = dict(by_pair.get((n, n2), {}))
                _add(coefs, cat.pi[(ka, n)], -1.0)
                _add(coefs, cat.pi[(kb, n2)], -1.0)
                bld.row("C4-2", f"C4_2_s{s}_vl{vl.id}_node{node_ix[n]}_node{node_ix[n2]}",
                        coefs, ">", -1.0)
        for n2 in nodes:
            coefs = dict(by_dst[n2])
            coefs[cat.pi[(kb, n2)]] = -1.0
            bld.row("C4-3", f"C4_3_s{s}_vl{vl.id}_node{node_ix[n2]}", coefs, "<", 0.0)
    # C5-1 / C5-2 / C6: robust node usage within available resources
    for n in nodes:
        for r, name in enumerate(RESOURCES):
            coefs = {cat.U[(n, name)]: 1.0}
            for s, req, vm, vm_key in vm_index:
                if vm.nominal[r]:
                    coefs[cat.pi[(vm_key, n)]] = -vm.nominal[r]
                if cfg.gamma1 > 0:
                    coefs[cat.rho1[(vm_key, n, name)]] = -1.0
            if cfg.gamma1 > 0:
                coefs[cat.z1[(n, name)]] = -float(cfg.gamma1)
            bld.row("C5-1", f"C5_1_node{node_ix[n]}_{name}", coefs, "=", 0.0)
    if cfg.gamma1 > 0:
        for s, req, vm, vm_key in vm_index:
            for n in nodes:
                for r, name in enumerate(RESOURCES):
                    coefs = {cat.rho1[(vm_key, n, name)]: -1.0, cat.z1[(n, name)]: -1.0}
                    dev = cfg.delta1 * vm.nominal[r]
                    if dev:
                        coefs[cat.pi[(vm_key, n)]] = dev
                    bld.row("C5-2", f"C5_2_s{s}_vm{vm.id}_node{node_ix[n]}_{name}",
                            coefs, "<", 0.0)
    for n in nodes:
        for r, name in enumerate(RESOURCES):
            bld.row("C6", f"C6_node{node_ix[n]}_{name}", {cat.U[(n, name)]: 1.0}, "<",
                    max(0.0, available[n][r]))
    # C7-1 / C7-2 / C8: robust link usage within available bandwidth
    for l in links:
        coefs = {cat.Ul[l]: 1.0}
        for s, req, vl, vl_key in vl_index:
            for col in vl_links[vl_key].get(l, ()):
                _add(coefs, col, -vl.nominal_rate)
            if cfg.gamma2 > 0 and (vl_key, l) in cat.rho2:
                coefs[cat.rho2[(vl_key, l)]] = -1.0
        if cfg.gamma2 > 0:
            coefs[cat.z2[l]] = -float(cfg.gamma2)
        bld.row("C7-1", f"C7_1_link{link_ix[l]}", coefs, "=", 0.0)
    if cfg.gamma2 > 0:
        for s, req, vl, vl_key in vl_index:
            dev = cfg.delta2 * vl.nominal_rate
            for l, cols in vl_links[vl_key].items():
                coefs = {cat.rho2[(vl_key, l)]: -1.0, cat.z2[l]: -1.0}
                if dev:
                    for col in cols:
                        _add(coefs, col, dev)
                bld.row("C7-2", f"C7_2_s{s}_vl{vl.id}_link{link_ix[l]}", coefs, "<", 0.0)
    for l in links:
        cap = max(0.0, avail_bw[l])
        if l in cat.theta:
            bld.row("C8", f"C8_link{link_ix[l]}", {cat.Ul[l]: 1.0, cat.theta[l]: -cap}, "<", 0.0)
        else:
            bld.row("C8", f"C8_link{link_ix[l]}", {cat.Ul[l]: 1.0}, "<", cap)
    # C9: delay bound per candidate path
    vl_by_key = {vl_key: (s, vl) for s, _, vl, vl_key in vl_index}
    for (vl_key, n, n2, b), col in cat.xi.items():
        s, vl = vl_by_key[vl_key]
        delay = paths.get(n, n2)[b].delay
        rhs = vl.max_delay if np.isfinite(vl.max_delay) else 1e30
        bld.row("C9", f"C9_s{s}_vl{vl.id}_node{node_ix[n]}_node{node_ix[n2]}_p{b}",
                {col: delay}, "<", rhs)
    # C10: node power of this slot
    coefs = {cat.Nc: 1.0}
    for n in nodes:
        spec = topology.nodes[n]
        if spec.capacity.cpu > 0 and spec.p_max > spec.p_idle:
            coefs[cat.U[(n, "cpu")]] = -(spec.p_max - spec.p_idle) / spec.capacity.cpu
        if n in cat.beta and spec.p_idle:
            coefs[cat.beta[n]] = -spec.p_idle
    bld.row("C10", "C10_node_power", coefs, "=", 0.0)
    # C11 / C12: VMs only on switched-on nodes
    for s, req, vm, vm_key in vm_index:
        for n in nodes:
            if n in cat.beta:
                bld.row("C12", f"C12_s{s}_vm{vm.id}_node{node_ix[n]}",
                        {cat.pi[(vm_key, n)]: 1.0, cat.beta[n]: -1.0}, "<", 0.0)
            else:
                bld.row("C11", f"C11_s{s}_vm{vm.id}_node{node_ix[n]}",
                        {cat.pi[(vm_key, n)]: 1.0}, "<", 1.0)
    # C13: switch power of newly activated links
    coefs = {cat.Sc: 1.0}
    for l, col in cat.theta.items():
        if topology.links[l].power_weight:
            coefs[col] = -topology.links[l].power_weight
    bld.row("C13", "C13_switch_power", coefs, "=", 0.0)

    # objective
    if topology.n_total_power > 0:
        bld.cost[cat.Nc] = 1.0 / topology.n_total_power
    if topology.s_total_power > 0:
        bld.cost[cat.Sc] = 1.0 / topology.s_total_power
    for n in nodes:
        cap = topology.nodes[n].capacity
        if cap.ram > 0:
            bld.cost[cat.U[(n, "ram")]] = 1.0 / cap.ram
        if cap.storage > 0:
            bld.cost[cat.U[(n, "storage")]] = 1.0 / cap.storage
    if topology.b_total > 0:
        for l in links:
            bld.cost[cat.Ul[l]] = 1.0 / topology.b_total
    return _finish(bld, cat, arrivals, paths, nodes, links, w_eta)


def _finish(bld: _Builder, cat, arrivals, paths, nodes, links, w_eta) -> RobinsModel:
    n = len(bld.names)
    indptr, indices, data = [0], [], []
    for _, _, coefs, _, _ in bld.rows:
        for col in sorted(coefs):
            if coefs[col] != 0.0:
                indices.append(col)
                data.append(coefs[col])
        indptr.append(len(indices))
    A = sp.csr_matrix((np.asarray(data, float), np.asarray(indices, int),
                       np.asarray(indptr, int)), shape=(len(bld.rows), n))
    c = np.zeros(n)
    for col, value in bld.cost.items():
        c[col] = value
    return RobinsModel(
        var_names=tuple(bld.names),
        is_binary=np.asarray(bld.binary, dtype=bool),
        lb=np.asarray(bld.lb, float),
        ub=np.asarray(bld.ub, float),
        c=c,
        A=A,
        sense=np.asarray([r[3] for r in bld.rows], dtype="<U1"),
        rhs=np.asarray([r[4] for r in bld.rows], float),
        row_names=tuple(r[1] for r in bld.rows),
        row_tags=tuple(r[0] for r in bld.rows),
        catalog=cat,
        arrivals=tuple(arrivals),
        paths=paths,
        node_ids=tuple(nodes),
        link_ids=tuple(links),
        eta_weight=w_eta,
    )
