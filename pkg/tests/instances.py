"""Seeded desk-scale instances shared by the test modules."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from robust_slicing.errors import SizeGuardError
from robust_slicing.orchestrator import SimState
from robust_slicing.robins import RobustConfig
from robust_slicing.solver import brute_force_optimum
from robust_slicing.topology import ResourceVector, enumerate_paths, load_topology
from robust_slicing.workload import make_slice


def small_topology(rng: np.random.Generator, n_nodes: int, self_links: bool = True):
    """Connected topology with tight capacities so rejections happen."""
    ids = [f"n{i}" for i in range(n_nodes)]
    nodes = []
    for nid in ids:
        cpu = float(rng.choice([4, 6, 8, 12]))
        nodes.append({"id": nid, "cpu": cpu, "ram": float(rng.choice([8, 16, 24])),
                      "storage": float(rng.choice([240, 480])),
                      "p_max": float(rng.choice([540, 700])), "p_idle": float(rng.choice([170, 180]))})
    links = []
    for i in range(1, n_nodes):
        j = int(rng.integers(i))
        links.append((ids[j], ids[i]))
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if (ids[i], ids[j]) not in links and rng.random() < 0.3:
                links.append((ids[i], ids[j]))
    doc_links = [{"id": f"l{a}-{b}", "u": a, "v": b,
                  "bandwidth_mbps": float(rng.choice([1500, 2500, 4000])),
                  "prop_delay_ms": float(np.round(rng.uniform(1, 5), 3))} for a, b in links]
    if self_links:
        doc_links += [{"id": f"{nid}-self", "u": nid, "v": nid,
                       "bandwidth_mbps": float(rng.choice([2000, 40000])), "rate_class": "40G"}
                      for nid in ids]
    return load_topology({"name": "small", "nodes": nodes, "links": doc_links})


def small_arrivals(rng: np.random.Generator, n_slices: int, max_vms: int, delta: float,
                   first_tenant: int = 1):
    demands = [(1, 2, 120), (2, 4, 120), (4, 16, 120)]
    out = []
    for s in range(n_slices):
        n_vms = int(rng.integers(1, max_vms + 1))
        vms = [demands[int(rng.integers(3))] for _ in range(n_vms)]
        vls = []
        for v in range(2, n_vms + 1):
            u = int(rng.integers(1, v))
            vls.append((u, v, float(np.round(rng.uniform(100, 1500), 1)),
                        float(np.round(rng.uniform(2, 13), 2))))
        out.append(make_slice(first_tenant + s, vms, vls, lifespan=int(rng.integers(1, 4)),
                              delta1=delta, delta2=delta))
    return out


def partial_state(rng: np.random.Generator, topology, cfg: RobustConfig) -> SimState:
    """A state with some capacity consumed and some elements already switched on."""
    state = SimState.initial(topology, cfg)
    for n, spec in topology.nodes.items():
        if rng.random() < 0.4:
            frac = float(rng.uniform(0.1, 0.6))
            state.available[n] = ResourceVector(*(c * (1 - frac) for c in spec.capacity))
            state.used_nodes.add(n)
    for l, spec in topology.links.items():
        if rng.random() < 0.3:
            state.avail_bw[l] = spec.bandwidth * float(rng.uniform(0.3, 0.9))
            state.used_links.add(l)
    return state


@dataclass
class Instance:
    seed: int
    topology: object
    paths: object
    state: SimState
    arrivals: list
    cfg: RobustConfig
    oracle: object = field(default=None, repr=False)


def desk_instance(seed: int, gamma=None, with_oracle: bool = True, max_tries: int = 50) -> Instance:
    """Random instance within the brute-force size guard (<= 4 nodes, <= 3 slices, <= 3 VMs, k <= 2)."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        n_nodes = int(rng.integers(2, 5))
        topo = small_topology(rng, n_nodes)
        k = int(rng.integers(1, 3))
        paths = enumerate_paths(topo, k)
        g = int(rng.integers(0, 3)) if gamma is None else gamma
        delta = float(rng.choice([0.0, 0.1, 0.3]))
        cfg = RobustConfig(g, g, delta, delta)
        state = partial_state(rng, topo, cfg)
        arrivals = small_arrivals(rng, int(rng.integers(1, 4)), 3, delta)
        inst = Instance(seed, topo, paths, state, arrivals, cfg)
        if not with_oracle:
            return inst
        try:
            inst.oracle = brute_force_optimum(state, arrivals, topo, paths, cfg)
        except SizeGuardError:
            continue
        return inst
    raise RuntimeError(f"seed {seed}: no instance within the size guard")


def adversary_violations(state, exhaustive_limit=8, samples=200, seed=0):
    """Realisations with at most Gamma deviating demands that overload raw capacity.

    Populations up to ``exhaustive_limit`` are enumerated; larger ones get the
    top-Gamma subset plus random draws.
    """
    rng = np.random.default_rng(seed)
    cfg = state.cfg
    topo = state.topology
    bad = []

    def subsets(n, gamma):
        g = min(gamma, n)
        if n <= exhaustive_limit:
            return itertools.chain.from_iterable(itertools.combinations(range(n), s) for s in range(g + 1))
        # the largest deviations first, then random draws
        return itertools.chain([tuple(range(g))],
                               (tuple(rng.choice(n, size=g, replace=False)) for _ in range(samples)))

    for n, vms in state.hosted_vms().items():
        cap = topo.nodes[n].capacity
        for r in range(3):
            base = sum(vm.nominal[r] for vm in vms)
            devs = sorted((vm.deviation[r] for vm in vms), reverse=True)
            for S in subsets(len(vms), cfg.gamma1):
                load = base + sum(devs[i] for i in S)
                if load > cap[r] + 1e-9:
                    bad.append((n, r, S))
    for l, vls in state.carried_vls().items():
        cap = topo.links[l].bandwidth
        base = sum(vl.nominal_rate for vl in vls)
        devs = sorted((vl.rate_deviation for vl in vls), reverse=True)
        for S in subsets(len(vls), cfg.gamma2):
            if base + sum(devs[i] for i in S) > cap + 1e-9:
                bad.append((l, S))
    return bad


def minimise_column(model, target, fixed, tags):
    """Smallest value of column ``target`` over the rows tagged ``tags``, with ``fixed`` columns pinned."""
    rows = np.array([t in tags for t in model.row_tags])
    A = model.A[rows]
    sense, rhs = model.sense[rows], model.rhs[rows]
    lb, ub = model.lb.copy(), model.ub.copy()
    for col, value in fixed.items():
        lb[col] = ub[col] = value
    c = np.zeros(model.n_vars)
    c[target] = 1.0
    le, ge, eq = sense == "<", sense == ">", sense == "="
    res = linprog(c, A_ub=sp.vstack([A[le], -A[ge]]), b_ub=np.concatenate([rhs[le], -rhs[ge]]),
                  A_eq=A[eq], b_eq=rhs[eq], bounds=np.column_stack([lb, ub]), method="highs")
    assert res.status == 0
    return res.fun
