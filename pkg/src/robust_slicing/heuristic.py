"""Greedy admission: sort, place VM by VM, route each VL on its fastest fitting path."""

from __future__ import annotations

from typing import Sequence

from .robins import (Assignment, RobustConfig, evaluate_objective, worst_case_link_load,
                     worst_case_node_load)
from .topology import RESOURCES, PathTable, Topology
from .workload import SliceRequest, VmSpec

__all__ = ["nea_onsu_admit", "node_order", "slice_order"]


def node_order(state, topology: Topology) -> list[str]:
    """Nodes by descending normalised available capacity, ids ascending on ties."""
    def free(n):
        cap = topology.nodes[n].capacity
        avail = state.available[n]
        return sum(avail[r] / cap[r] for r in range(3) if cap[r] > 0)
    return sorted(sorted(topology.nodes), key=free, reverse=True)


def _mean_capacity(topology: Topology) -> list[float]:
    nodes = list(topology.nodes.values())
    return [sum(n.capacity[r] for n in nodes) / len(nodes) for r in range(len(RESOURCES))]


def _vm_size(vm: VmSpec, scale) -> float:
    return sum(vm.nominal[r] / scale[r] for r in range(3) if scale[r] > 0)


def slice_order(arrivals: Sequence[SliceRequest], topology: Topology) -> list[SliceRequest]:
    """Slices by descending normalised total VM demand, keys ascending on ties."""
    scale = _mean_capacity(topology)
    by_key = sorted(arrivals, key=lambda r: r.key)
    return sorted(by_key, key=lambda r: sum(_vm_size(vm, scale) for vm in r.vms), reverse=True)


def nea_onsu_admit(state, arrivals: Sequence[SliceRequest], topology: Topology,
                   paths: PathTable, cfg: RobustConfig, stats: dict | None = None) -> Assignment:
    """Greedy admission of one slot's arrivals.

    Each VM goes to the first node (in capacity order) that can take it with
    its protection and from which every VL towards an already placed peer has
    a path within the delay bound and link room. A slice with a VM that fits
    nowhere is rejected and its tentative allocations are undone.

    ``stats`` (optional) receives ``ops``, the number of node and path
    feasibility checks performed.
    """
    ops = 0
    order = node_order(state, topology)
    scale = _mean_capacity(topology)
    available = state.available
    avail_bw = state.avail_bw
    used_nodes, used_links = set(state.used_nodes), set(state.used_links)
    vms_on: dict[str, list[VmSpec]] = {n: [] for n in topology.nodes}
    vls_on: dict[str, list] = {l: [] for l in topology.links}
    out = Assignment()

    def node_fits(n, vm):
        load = worst_case_node_load(vms_on[n] + [vm], cfg.gamma1, cfg.delta1)
        return load.fits(available[n], 1e-9)

    def link_fits(l, vl):
        load = worst_case_link_load(vls_on[l] + [vl], cfg.gamma2, cfg.delta2)
        return load <= avail_bw[l] + 1e-9

    for req in slice_order(arrivals, topology):
        vms = sorted(sorted(req.vms, key=lambda v: v.id), key=lambda v: _vm_size(v, scale),
                     reverse=True)
        host: dict[int, str] = {}
        routed: dict[int, object] = {}
        ok = True
        for vm in vms:
            incident = [vl for vl in req.vls if vm.id in vl.endpoints
                        and (vl.endpoints[0] if vl.endpoints[1] == vm.id else vl.endpoints[1]) in host]
            placed = False
            for n in order:
                ops += 1
                if not node_fits(n, vm):
                    continue
                vms_on[n].append(vm)
                host[vm.id] = n
                chosen = []
                for vl in incident:
                    a, b = host[vl.endpoints[0]], host[vl.endpoints[1]]
                    path = None
                    for cand in paths.get(a, b):
                        ops += 1
                        if cand.delay > vl.max_delay + 1e-9:
                            continue
                        if all(link_fits(l, vl) for l in cand.links):
                            path = cand
                            break
                    if path is None:
                        break
                    for l in path.links:
                        vls_on[l].append(vl)
                    chosen.append((vl, path))
                if len(chosen) == len(incident):
                    for vl, path in chosen:
                        routed[vl.id] = path
                    placed = True
                    break
                # undo this node attempt
                for vl, path in reversed(chosen):
                    for l in path.links:
                        vls_on[l].pop()
                vms_on[n].pop()
                del host[vm.id]
            if not placed:
                ok = False
                break
        if ok:
            out.accepted.add(req.key)
            for vm_id, n in host.items():
                out.placements[(*req.key, vm_id)] = n
            for vl_id, path in routed.items():
                out.embeddings[(*req.key, vl_id)] = path
            continue
        # roll back the whole slice
        for vl_id, path in routed.items():
            vl = next(v for v in req.vls if v.id == vl_id)
            for l in path.links:
                vls_on[l].remove(vl)
        for vm_id, n in host.items():
            vms_on[n].remove(req.vm(vm_id))

    for key, n in out.placements.items():
        if n not in used_nodes:
            out.activated_nodes.add(n)
    for path in out.embeddings.values():
        out.activated_links.update(l for l in path.links if l not in used_links)
    out.eta = len(arrivals) - len(out.accepted)
    out.objective_value = evaluate_objective(state, arrivals, topology, cfg, out)
    if stats is not None:
        stats["ops"] = stats.get("ops", 0) + ops
    return out
