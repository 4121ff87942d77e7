"""Exact solution of the slot model, a brute-force oracle and LP-file export.

``solve_exact`` is a branch-and-bound over the binary columns. Every node
first propagates variable bounds through the rows (rejecting a slice clears
its placements, fixing a placement clears the VM's other nodes, capacity rows
drop VMs that cannot fit, ...), then bounds the subtree with the continuous
relaxation solved by HiGHS' dual simplex. The all-reject decision is always
feasible and seeds the incumbent.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .errors import SizeGuardError, ValidationError
from .robins import (Assignment, RobinsModel, RobustConfig, evaluate_objective,
                     worst_case_link_load, worst_case_node_load)
from .topology import PathTable, Topology
from .workload import SliceRequest

__all__ = [
    "SolverConfig",
    "Solution",
    "LPResult",
    "solve_exact",
    "solve_lp_relaxation",
    "brute_force_optimum",
    "export_lp",
]

INT_TOL = 1e-6
FEAS_TOL = 1e-7


@dataclass(frozen=True)
class SolverConfig:
    time_limit: float = 60.0
    gap_tolerance: float = 1e-6
    node_limit: int = 200_000
    search: str = "best-first"
    engine: str = "highs"
    warm_start: bool = True

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValidationError("time_limit must be positive")
        if self.gap_tolerance < 0:
            raise ValidationError("gap_tolerance must be non-negative")
        if self.search not in ("best-first", "depth-first"):
            raise ValidationError(f"unknown search order {self.search!r}")
        if self.engine not in ("bnb", "highs"):
            raise ValidationError(f"unknown engine {self.engine!r}")


@dataclass
class Solution:
    assignment: Assignment
    status: str  # proven-optimal | feasible-time-limited | infeasible
    bound: float
    stats: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.assignment.objective_value


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unavailable
    bound: float
    x: np.ndarray | None = None


class _LP:
    """Row split of a model in the shape ``linprog`` expects, built once."""

    def __init__(self, model: RobinsModel, rows: np.ndarray | None = None):
        A = model.A if rows is None else model.A[rows]
        sense = model.sense if rows is None else model.sense[rows]
        rhs = model.rhs if rows is None else model.rhs[rows]
        le, ge, eq = sense == "<", sense == ">", sense == "="
        self.A_ub = sp.vstack([A[le], -A[ge]]).tocsr()
        self.b_ub = np.concatenate([rhs[le], -rhs[ge]])
        self.A_eq = A[eq].tocsr()
        self.b_eq = rhs[eq]
        self.c = model.c

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> LPResult:
        if self.c.size == 0:
            return LPResult("optimal", 0.0, np.zeros(0))
        kwargs = {}
        if self.A_ub.shape[0]:
            kwargs.update(A_ub=self.A_ub, b_ub=self.b_ub)
        if self.A_eq.shape[0]:
            kwargs.update(A_eq=self.A_eq, b_eq=self.b_eq)
        try:
            res = linprog(self.c, bounds=np.column_stack([lb, ub]), method="highs-ds",
                          options={"presolve": True}, **kwargs)
        except (ValueError, FloatingPointError):
            return LPResult("unavailable", 0.0)
        if res.status == 0:
            return LPResult("optimal", float(res.fun), np.asarray(res.x))
        if res.status == 2:
            return LPResult("infeasible", math.inf)
        return LPResult("unavailable", 0.0)


def solve_lp_relaxation(model: RobinsModel, lb=None, ub=None) -> LPResult:
    """Optimal value and point of the continuous relaxation (binaries in [0, 1]).

    A numerical failure is reported with status ``"unavailable"`` and the
    trivial bound 0 (every objective term is non-negative).
    """
    lb = model.lb if lb is None else lb
    ub = model.ub if ub is None else ub
    return _LP(model).solve(lb, ub)


# -- bound propagation -------------------------------------------------------

class _Propagator:
    """Activity-based bound tightening on binary columns."""

    def __init__(self, model: RobinsModel, rows: np.ndarray):
        A = model.A[rows].tocsr()
        self.row_of = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
        self.col = A.indices
        self.a = A.data
        self.m = A.shape[0]
        sense = model.sense[rows]
        self.rhs = model.rhs[rows]
        self.le = (sense == "<") | (sense == "=")
        self.ge = (sense == ">") | (sense == "=")
        self.binary = model.is_binary

    def run(self, lb: np.ndarray, ub: np.ndarray, max_passes: int = 50):
        lb, ub = lb.copy(), ub.copy()
        a, col, row = self.a, self.col, self.row_of
        pos = a > 0
        for _ in range(max_passes):
            lo_c = np.where(pos, a * lb[col], a * ub[col])
            hi_c = np.where(pos, a * ub[col], a * lb[col])
            lo_inf = ~np.isfinite(lo_c)
            hi_inf = ~np.isfinite(hi_c)
            minact = np.bincount(row, np.where(lo_inf, 0.0, lo_c), self.m)
            maxact = np.bincount(row, np.where(hi_inf, 0.0, hi_c), self.m)
            n_lo_inf = np.bincount(row, lo_inf, self.m)
            n_hi_inf = np.bincount(row, hi_inf, self.m)
            scale = np.maximum(1.0, np.abs(self.rhs))
            if np.any(self.le & (n_lo_inf == 0) & (minact > self.rhs + FEAS_TOL * scale)):
                return lb, ub, False
            if np.any(self.ge & (n_hi_inf == 0) & (maxact < self.rhs - FEAS_TOL * scale)):
                return lb, ub, False
            new_lb, new_ub = lb.copy(), ub.copy()
            # sum(a x) <= rhs: each column limited by the others' minimum activity
            rest = minact[row] - np.where(lo_inf, 0.0, lo_c)
            ok = self.le[row] & (n_lo_inf[row] - lo_inf == 0) & self.binary[col]
            limit = (self.rhs[row] - rest) / a
            _tighten(new_lb, new_ub, col, limit, ok & pos, ok & ~pos)
            # sum(a x) >= rhs: each column pushed by the others' maximum activity
            rest = maxact[row] - np.where(hi_inf, 0.0, hi_c)
            ok = self.ge[row] & (n_hi_inf[row] - hi_inf == 0) & self.binary[col]
            limit = (self.rhs[row] - rest) / a
            _tighten(new_lb, new_ub, col, limit, ok & ~pos, ok & pos)
            if np.any(new_lb > new_ub + 0.5):
                return new_lb, new_ub, False
            if np.array_equal(new_lb, lb) and np.array_equal(new_ub, ub):
                break
            lb, ub = new_lb, new_ub
        return lb, ub, True


def _tighten(lb, ub, col, limit, upper_mask, lower_mask):
    # binary columns only: an upper limit below 1 forces 0, a lower limit above 0 forces 1
    if np.any(upper_mask):
        cols = col[upper_mask][limit[upper_mask] < 1.0 - INT_TOL]
        ub[cols] = 0.0
    if np.any(lower_mask):
        cols = col[lower_mask][limit[lower_mask] > INT_TOL]
        lb[cols] = 1.0


def _presolve(model: RobinsModel):
    """Turn singleton rows into bounds; return bounds and the remaining rows."""
    lb, ub = model.lb.copy(), model.ub.copy()
    counts = np.diff(model.A.indptr)
    single = np.flatnonzero(counts == 1)
    for i in single:
        j = model.A.indices[model.A.indptr[i]]
        a = model.A.data[model.A.indptr[i]]
        limit = model.rhs[i] / a
        s = model.sense[i]
        if s == "=" or (s == "<" and a > 0) or (s == ">" and a < 0):
            ub[j] = min(ub[j], limit)
        if s == "=" or (s == "<" and a < 0) or (s == ">" and a > 0):
            lb[j] = max(lb[j], limit)
    b = model.is_binary
    ub[b] = np.floor(ub[b] + INT_TOL)
    lb[b] = np.ceil(lb[b] - INT_TOL)
    keep = np.flatnonzero(counts != 1)
    return lb, ub, keep


# -- branch and bound --------------------------------------------------------

def _branch_groups(model: RobinsModel) -> list[np.ndarray]:
    cat = model.catalog
    groups = [sorted(cat.delta.values()), sorted(cat.pi.values()), sorted(cat.xi.values()),
              sorted(list(cat.beta.values()) + list(cat.theta.values()))]
    return [np.asarray(g, dtype=int) for g in groups if g]


def _pick_branch(x: np.ndarray, groups) -> int | None:
    for cols in groups:
        frac = np.abs(x[cols] - np.round(x[cols]))
        if frac.max(initial=0.0) > INT_TOL:
            # most fractional; lowest column wins ties
            dist = np.abs(x[cols] - 0.5)
            return int(cols[np.argmin(dist)])
    return None


def _all_reject(model: RobinsModel) -> tuple[np.ndarray, float]:
    x = np.zeros(model.n_vars)
    if model.catalog.eta is not None:
        x[model.catalog.eta] = len(model.arrivals)
    return x, float(model.c @ x)


def solve_exact(model: RobinsModel, cfg: SolverConfig = SolverConfig(),
                incumbent: np.ndarray | None = None) -> Solution:
    """Optimal assignment of a slot model.

    ``incumbent`` may pass a known feasible point (for example an encoded
    heuristic assignment) to seed the upper bound.
    """
    if model.A.shape != (model.n_rows, model.n_vars):
        raise ValidationError("malformed model: matrix shape does not match rows/columns")
    start = time.perf_counter()
    if cfg.engine == "highs":
        return _solve_highs(model, cfg, start)

    best_x, best_val = _all_reject(model)
    if incumbent is not None:
        val = float(model.c @ incumbent)
        if _is_feasible(model, incumbent) and val < best_val:
            best_x, best_val = incumbent.copy(), val
    stats = {"nodes": 0, "lp_solves": 0, "incumbents": [(0.0, best_val)], "bounds": []}
    if model.n_vars == 0 or not model.catalog.delta:
        return _finish(model, best_x, best_val, "proven-optimal", best_val, stats, start)

    lb0, ub0, rows = _presolve(model)
    lp = _LP(model, rows)
    prop = _Propagator(model, rows)
    groups = _branch_groups(model)
    binary = model.is_binary
    counter = itertools.count()
    depth_first = cfg.search == "depth-first"
    # heap entries: (key, depth-tiebreak, seq, lb, ub, parent bound)
    heap = [(0.0, 0, next(counter), lb0, ub0, 0.0)]
    global_bound = 0.0
    status = "proven-optimal"

    def gap_ok(bound):
        return best_val - bound <= cfg.gap_tolerance * max(1.0, abs(best_val))

    while heap:
        if time.perf_counter() - start > cfg.time_limit or stats["nodes"] >= cfg.node_limit:
            status = "feasible-time-limited"
            break
        if not depth_first:
            global_bound = max(global_bound, heap[0][0])
            stats["bounds"].append(global_bound)
            if gap_ok(global_bound):
                break
        _, neg_depth, _, lb, ub, parent = heapq.heappop(heap)
        if gap_ok(parent):
            continue
        stats["nodes"] += 1
        lb, ub, feasible = prop.run(lb, ub)
        if not feasible:
            continue
        res = lp.solve(lb, ub)
        stats["lp_solves"] += 1
        if res.status == "infeasible":
            continue
        bound = res.bound if res.status == "optimal" else parent
        if gap_ok(bound):
            continue
        if res.status != "optimal":
            j = _first_free(lb, ub, groups)
        else:
            j = _pick_branch(res.x, groups)
            if j is None:
                x_int = _polish(lp, res.x, lb, ub, binary)
                if x_int is not None:
                    val = float(model.c @ x_int)
                    if val < best_val - 1e-12:
                        best_x, best_val = x_int, val
                        stats["incumbents"].append((time.perf_counter() - start, best_val))
                continue
        if j is None:
            continue
        depth = -neg_depth + 1
        order = (1.0, 0.0)
        for value in order:
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = value
            key = -depth if depth_first else bound
            # depth-first pops the up-branch first
            tie = -depth if not depth_first else (0 if value == 1.0 else 1)
            heapq.heappush(heap, (key, tie, next(counter), clb, cub, bound))
    else:
        global_bound = best_val

    if status == "proven-optimal" and heap and not gap_ok(global_bound):
        status = "feasible-time-limited"
    if status == "feasible-time-limited":
        open_bounds = [h[5] for h in heap]
        global_bound = min(open_bounds + [best_val]) if open_bounds else best_val
    bound = min(global_bound, best_val) if status == "feasible-time-limited" else \
        min(max(global_bound, 0.0), best_val)
    return _finish(model, best_x, best_val, status, bound, stats, start)


def _first_free(lb, ub, groups):
    for cols in groups:
        free = cols[lb[cols] < ub[cols]]
        if free.size:
            return int(free[0])
    return None


def _polish(lp: _LP, x, lb, ub, binary):
    """Fix binaries at their rounded values and re-solve the continuous part."""
    flb, fub = lb.copy(), ub.copy()
    r = np.round(x[binary])
    flb[binary] = r
    fub[binary] = r
    res = lp.solve(flb, fub)
    if res.status != "optimal":
        return None
    out = res.x.copy()
    out[binary] = r
    return out


def _is_feasible(model: RobinsModel, x: np.ndarray, tol: float = 1e-6) -> bool:
    if np.any(x < model.lb - tol) or np.any(x > model.ub + tol):
        return False
    b = model.is_binary
    if np.any(np.abs(x[b] - np.round(x[b])) > tol):
        return False
    act = model.A @ x
    scale = tol * np.maximum(1.0, np.abs(model.rhs))
    le = model.sense == "<"
    ge = model.sense == ">"
    eq = model.sense == "="
    return bool(np.all(act[le] <= model.rhs[le] + scale[le])
                and np.all(act[ge] >= model.rhs[ge] - scale[ge])
                and np.all(np.abs(act[eq] - model.rhs[eq]) <= scale[eq]))


def _finish(model, x, value, status, bound, stats, start) -> Solution:
    stats["wall_time"] = time.perf_counter() - start
    assignment = model.decode(x, value)
    return Solution(assignment, status, float(bound), stats)


def _solve_highs(model: RobinsModel, cfg: SolverConfig, start: float) -> Solution:
    stats = {"nodes": 0, "engine": "highs"}
    if model.n_vars == 0:
        return _finish(model, np.zeros(0), 0.0, "proven-optimal", 0.0, stats, start)
    lo = np.where(model.sense == ">", model.rhs, -np.inf)
    lo = np.where(model.sense == "=", model.rhs, lo)
    hi = np.where(model.sense == "<", model.rhs, np.inf)
    hi = np.where(model.sense == "=", model.rhs, hi)
    res = milp(model.c, constraints=LinearConstraint(model.A, lo, hi),
               integrality=model.is_binary.astype(int), bounds=Bounds(model.lb, model.ub),
               options={"time_limit": cfg.time_limit, "mip_rel_gap": cfg.gap_tolerance,
                        "presolve": True})
    stats["nodes"] = int(getattr(res, "mip_node_count", 0) or 0)
    if res.x is None:
        x, val = _all_reject(model)
        return _finish(model, x, val, "feasible-time-limited", 0.0, stats, start)
    x = np.asarray(res.x)
    b = model.is_binary
    x[b] = np.round(x[b])
    val = float(model.c @ x)
    status = "proven-optimal" if res.status == 0 else "feasible-time-limited"
    bound = float(getattr(res, "mip_dual_bound", val) or val)
    return _finish(model, x, val, status, min(bound, val), stats, start)


# -- brute force -------------------------------------------------------------

def _slice_choices(req: SliceRequest, nodes, paths: PathTable) -> int:
    total = 0
    for hosts in itertools.product(nodes, repeat=len(req.vms)):
        where = dict(zip((vm.id for vm in req.vms), hosts))
        count = 1
        for vl in req.vls:
            count *= len(paths.get(where[vl.endpoints[0]], where[vl.endpoints[1]]))
            if not count:
                break
        total += count
    return total


def brute_force_optimum(state, arrivals: Sequence[SliceRequest], topology: Topology,
                        paths: PathTable, cfg: RobustConfig, limit: float = 1e7) -> Solution:
    """Exhaustive search over accept/reject, VM hosts and VL paths.

    Feasibility is judged with the closed-form worst-case loads; the cheapest
    assignment wins, ties going to the smallest canonical encoding. Raises
    ``SizeGuardError`` when the raw number of combinations exceeds ``limit``.
    """
    start = time.perf_counter()
    nodes = list(topology.nodes)
    arrivals = list(arrivals)
    size = 1.0
    for req in arrivals:
        upper = float(len(nodes)) ** len(req.vms) * float(max(paths.k, 1)) ** len(req.vls)
        size *= 1.0 + (upper if upper * size > limit else _slice_choices(req, nodes, paths))
        if size > limit:
            raise SizeGuardError(f"brute force needs more than {limit:.0e} combinations")

    available = {n: state.available[n] for n in nodes}
    avail_bw = {l: float(state.avail_bw[l]) for l in topology.links}
    used_nodes, used_links = set(state.used_nodes), set(state.used_links)

    def node_ok(vms, n):
        load = worst_case_node_load(vms, cfg.gamma1, cfg.delta1)
        return load.fits(available[n], 1e-6 * max(1.0, max(available[n])))

    def link_ok(vls, l):
        return worst_case_link_load(vls, cfg.gamma2, cfg.delta2) <= avail_bw[l] + 1e-6 * max(1.0, avail_bw[l])

    # per-slice options feasible in isolation
    options = []
    for req in arrivals:
        opts = [None]
        for hosts in itertools.product(nodes, repeat=len(req.vms)):
            where = dict(zip((vm.id for vm in req.vms), hosts))
            per_node: dict = {}
            for vm, n in zip(req.vms, hosts):
                per_node.setdefault(n, []).append(vm)
            if not all(node_ok(v, n) for n, v in per_node.items()):
                continue
            choices = []
            for vl in req.vls:
                cand = [p for p in paths.get(where[vl.endpoints[0]], where[vl.endpoints[1]])
                        if p.delay <= vl.max_delay + 1e-9]
                choices.append(cand)
            for combo in itertools.product(*choices):
                per_link: dict = {}
                for vl, p in zip(req.vls, combo):
                    for l in p.links:
                        per_link.setdefault(l, []).append(vl)
                if all(link_ok(v, l) for l, v in per_link.items()):
                    opts.append((hosts, combo))
        options.append(opts)

    best = [math.inf, None, None]
    vms_on: dict = {n: [] for n in nodes}
    vls_on: dict = {l: [] for l in topology.links}
    chosen: list = [None] * len(arrivals)

    def leaf():
        a = _assignment_from(arrivals, chosen, used_nodes, used_links)
        a.objective_value = evaluate_objective(state, arrivals, topology, cfg, a)
        val = a.objective_value
        if val < best[0] - 1e-9 or (val <= best[0] + 1e-9 and a.encoding() < best[2]):
            best[0], best[1], best[2] = val, a, a.encoding()

    def dfs(i):
        if i == len(arrivals):
            leaf()
            return
        req = arrivals[i]
        for opt in options[i]:
            chosen[i] = opt
            if opt is None:
                dfs(i + 1)
                continue
            hosts, combo = opt
            touched_n = set(hosts)
            for vm, n in zip(req.vms, hosts):
                vms_on[n].append(vm)
            touched_l = set()
            for vl, p in zip(req.vls, combo):
                for l in p.links:
                    vls_on[l].append(vl)
                    touched_l.add(l)
            if all(node_ok(vms_on[n], n) for n in touched_n) and \
                    all(link_ok(vls_on[l], l) for l in touched_l):
                dfs(i + 1)
            for vm, n in zip(req.vms, hosts):
                vms_on[n].pop()
            for vl, p in zip(req.vls, combo):
                for l in p.links:
                    vls_on[l].pop()
        chosen[i] = None

    dfs(0)
    stats = {"wall_time": time.perf_counter() - start,
             "options": [len(o) for o in options]}
    return Solution(best[1], "proven-optimal", best[0], stats)


def _assignment_from(arrivals, chosen, used_nodes, used_links) -> Assignment:
    a = Assignment()
    for req, opt in zip(arrivals, chosen):
        if opt is None:
            continue
        hosts, combo = opt
        a.accepted.add(req.key)
        for vm, n in zip(req.vms, hosts):
            a.placements[(*req.key, vm.id)] = n
            if n not in used_nodes:
                a.activated_nodes.add(n)
        for vl, p in zip(req.vls, combo):
            a.embeddings[(*req.key, vl.id)] = p
            a.activated_links.update(l for l in p.links if l not in used_links)
    a.eta = len(arrivals) - len(a.accepted)
    return a


# -- LP export ---------------------------------------------------------------

def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _expr(terms, width: int = 6) -> list[str]:
    parts = []
    for i, (coef, name) in enumerate(terms):
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = name if mag == 1.0 else f"{_fmt(mag)} {name}"
        if i == 0:
            parts.append(f"- {body}" if coef < 0 else body)
        else:
            parts.append(f"{sign} {body}")
    lines = []
    for i in range(0, len(parts), width):
        lines.append(" ".join(parts[i:i + width]))
    return lines or ["0"]


def export_lp(model: RobinsModel) -> str:
    """Render the model in CPLEX LP text format.

    Rows carry their constraint-family name (``C5_1_node3_cpu``) and each
    family starts with a comment line naming it.
    """
    names = model.var_names
    out = ["\\ Robust slot admission model", f"\\ {model.n_vars} columns, {model.n_rows} rows",
           "Minimize"]
    obj = [(model.c[j], names[j]) for j in np.flatnonzero(model.c)]
    lines = _expr(obj)
    out.append(" obj: " + lines[0])
    out += ["   " + ln for ln in lines[1:]]
    out.append("Subject To")
    A = model.A
    last = None
    ops = {"<": "<=", ">": ">=", "=": "="}
    for i, name in enumerate(model.row_names):
        tag = model.row_tags[i]
        if tag != last:
            out.append(f"\\ {tag}")
            last = tag
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = [(A.data[k], names[A.indices[k]]) for k in range(lo, hi)]
        lines = _expr(terms)
        rhs = model.rhs[i]
        lines[-1] += f" {ops[model.sense[i]]} {_fmt(rhs)}"
        out.append(f" {name}: " + lines[0])
        out += ["   " + ln for ln in lines[1:]]
    out.append("Bounds")
    for j, name in enumerate(names):
        if model.is_binary[j]:
            continue
        lb, ub = model.lb[j], model.ub[j]
        if lb == 0.0 and math.isinf(ub):
            continue
        if math.isinf(ub):
            out.append(f" {name} >= {_fmt(lb)}")
        else:
            out.append(f" {_fmt(lb)} <= {name} <= {_fmt(ub)}")
    binaries = [names[j] for j in np.flatnonzero(model.is_binary)]
    if binaries:
        out.append("Binaries")
        for i in range(0, len(binaries), 8):
            out.append(" " + " ".join(binaries[i:i + 8]))
    out.append("End")
    return "\n".join(out) + "\n"
