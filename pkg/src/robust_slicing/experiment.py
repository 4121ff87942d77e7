"""Seeded scenario sweeps writing per-slot CSV, run summaries and aggregates."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ValidationError
from .metrics import CSV_COLUMNS, final_acceptance, records_to_csv
from .orchestrator import SimState, run_simulation
from .robins import RobustConfig
from .solver import SolverConfig
from .topology import Topology, enumerate_paths, load_topology
from .workload import WorkloadParams, generate_schedule

__all__ = [
    "ScenarioPoint",
    "ExperimentConfig",
    "scenario_points",
    "reserved_protection_pct",
    "run_one",
    "run_experiment",
    "read_aggregate",
]


@dataclass(frozen=True)
class ScenarioPoint:
    gamma1: int
    gamma2: int
    delta1: float
    delta2: float

    @property
    def label(self) -> str:
        return f"g{self.gamma1}-{self.gamma2}_d{self.delta1:g}-{self.delta2:g}"


def scenario_points(scenario: str, custom: Sequence[dict] | None = None) -> list[ScenarioPoint]:
    """Grid of protection settings for a named scenario."""
    if scenario == "gamma-sweep":
        return [ScenarioPoint(g, g, 0.1, 0.1) for g in range(5)]
    if scenario == "delta-sweep":
        return [ScenarioPoint(1, 1, d, d) for d in (0.0, 0.1, 0.3)]
    if scenario == "custom":
        if not custom:
            raise ValidationError("custom scenario needs at least one point")
        points = []
        for i, raw in enumerate(custom):
            try:
                g = raw.get("gamma")
                d = raw.get("delta")
                point = ScenarioPoint(int(raw.get("gamma1", g)), int(raw.get("gamma2", g)),
                                      float(raw.get("delta1", d)), float(raw.get("delta2", d)))
            except (TypeError, ValueError, AttributeError):
                raise ValidationError(f"custom scenario point {i}: need gamma/delta values") from None
            RobustConfig(point.gamma1, point.gamma2, point.delta1, point.delta2)
            points.append(point)
        return points
    raise ValidationError(f"unknown scenario {scenario!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    topology: str = "abilene"
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    seeds: tuple[int, ...] = tuple(range(20))
    modes: tuple[str, ...] = ("exact", "heuristic")
    points: tuple[ScenarioPoint, ...] = tuple(scenario_points("gamma-sweep"))
    scenario: str = "gamma-sweep"
    solver: SolverConfig = field(default_factory=SolverConfig)
    k_paths: int = 5
    eta_weight: float | None = None
    paper_faithful_objective: bool = False
    out_dir: str = "results"
    record_timing: bool = True
    workers: int = 1

    def validate(self) -> None:
        if not self.seeds:
            raise ValidationError("seed list must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        if not self.modes or any(m not in ("exact", "heuristic") for m in self.modes):
            raise ValidationError("modes must be a non-empty subset of exact/heuristic")
        if not self.points:
            raise ValidationError("scenario has no points")
        if self.k_paths < 1:
            raise ValidationError("k_paths must be >= 1")
        for p in self.points:
            self.robust(p)
        self.workload.validate()

    def robust(self, point: ScenarioPoint) -> RobustConfig:
        return RobustConfig(point.gamma1, point.gamma2, point.delta1, point.delta2,
                            self.eta_weight, self.paper_faithful_objective)


def reserved_protection_pct(state: SimState) -> float:
    """Share of total capacity withheld as protection, in percent.

    Averaged over the four dimensions CPU, RAM, storage and bandwidth.
    """
    topo = state.topology
    nodes, bw = state.reserved_protection()
    shares = []
    for r in range(3):
        total = sum(n.capacity[r] for n in topo.nodes.values())
        shares.append(nodes[r] / total if total > 0 else 0.0)
    shares.append(bw / topo.b_total if topo.b_total > 0 else 0.0)
    return 100.0 * sum(shares) / len(shares)


def run_one(topology: Topology, cfg: ExperimentConfig, point: ScenarioPoint, seed: int,
            mode: str, paths=None, schedule=None) -> dict:
    """One simulation; returns the records and summary metrics.

    The schedule is drawn from ``seed`` unless one is given.
    """
    if schedule is None:
        schedule = generate_schedule(seed, cfg.workload)
    schedule = schedule.with_deltas(point.delta1, point.delta2)
    protection = []

    def track(state, *_):
        protection.append(reserved_protection_pct(state))

    result = run_simulation(topology, schedule, mode, cfg.robust(point), cfg.solver, paths=paths,
                            k_paths=cfg.k_paths, record_timing=cfg.record_timing, on_slot=track)
    records = result.records
    statuses = sorted({i.get("status", "") for i in result.infos})
    return {
        "records": records,
        "acceptance_ratio": final_acceptance(records),
        "reserved_protection": float(np.mean(protection)),
        "statuses": statuses,
    }


def _summary(cfg: ExperimentConfig, topology: Topology, point, seed, mode, run) -> dict:
    records = run["records"]
    means = {c: float(np.mean([getattr(r, c) for r in records])) for c in CSV_COLUMNS}
    return {
        "software_version": __version__,
        "config": {
            "topology": cfg.topology, "seed": seed, "mode": mode,
            "gamma1": point.gamma1, "gamma2": point.gamma2,
            "delta1": point.delta1, "delta2": point.delta2,
            "k_paths": cfg.k_paths, "eta_weight": cfg.eta_weight,
            "paper_faithful_objective": cfg.paper_faithful_objective,
            "workload": asdict(cfg.workload), "solver": asdict(cfg.solver),
        },
        "server_draw": {n: [spec.capacity.cpu, spec.capacity.ram, spec.capacity.storage,
                            spec.p_max, spec.p_idle]
                        for n, spec in sorted(topology.nodes.items())},
        "acceptance_convention": "a slot or run with no arrivals counts as 100% accepted",
        "final": {
            "arrived": sum(r.arrived for r in records),
            "accepted": sum(r.accepted for r in records),
            "acceptance_ratio": run["acceptance_ratio"],
            "reserved_protection_pct": run["reserved_protection"],
            "solver_statuses": run["statuses"],
            "slot_means": means,
        },
    }


def _task(args):
    cfg, point, seed, mode = args
    topology = load_topology(cfg.topology, seed=seed)
    paths = enumerate_paths(topology, cfg.k_paths)
    run = run_one(topology, cfg, point, seed, mode, paths)
    return point, seed, mode, run, _summary(cfg, topology, point, seed, mode, run)


AGG_METRICS = tuple(c for c in CSV_COLUMNS if c != "slot") + ("acceptance_ratio", "reserved_protection")


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every (point, seed, mode) and write outputs under ``cfg.out_dir``.

    Layout::

        runs/<point>/<mode>/seed<k>.csv     per-slot records
        runs/<point>/<mode>/seed<k>.json    run summary
        aggregate.csv                       mean/std across seeds per point and mode

    Returns the output directory.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    tasks = [(cfg, p, s, m) for p in cfg.points for s in sorted(cfg.seeds) for m in cfg.modes]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]

    per_run: dict = {}
    for point, seed, mode, run, summary in results:
        run_dir = out / "runs" / point.label / mode
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / f"seed{seed}.csv").write_text(records_to_csv(run["records"]))
        (run_dir / f"seed{seed}.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        values = {c: float(np.mean([getattr(r, c) for r in run["records"]]))
                  for c in CSV_COLUMNS if c != "slot"}
        values["acceptance_ratio"] = run["acceptance_ratio"]
        values["reserved_protection"] = run["reserved_protection"]
        per_run.setdefault((point, mode), []).append((seed, values))

    header = ["point", "mode", "gamma1", "gamma2", "delta1", "delta2", "n_seeds"]
    for m in AGG_METRICS:
        header += [f"mean_{m}", f"std_{m}"]
    lines = [",".join(header)]
    for point in cfg.points:
        for mode in cfg.modes:
            runs = sorted(per_run[(point, mode)], key=lambda sv: sv[0])
            row = [point.label, mode, str(point.gamma1), str(point.gamma2),
                   repr(point.delta1), repr(point.delta2), str(len(runs))]
            for m in AGG_METRICS:
                vals = [v[m] for _, v in runs]
                mean = math.fsum(vals) / len(vals)
                std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)) \
                    if len(vals) > 1 else 0.0
                row += [repr(mean), repr(std)]
            lines.append(",".join(row))
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.csv").write_text("\n".join(lines) + "\n")
    return out


def read_aggregate(path: str | os.PathLike) -> list[dict]:
    """Parse ``aggregate.csv`` back into dictionaries of floats where possible."""
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v) if k not in ("point", "mode") else v
            except ValueError:
                parsed[k] = v
        out.append(parsed)
    return out
