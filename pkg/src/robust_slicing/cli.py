"""Command-line entry point: ``simulate``, ``experiment``, ``export-lp``, ``validate``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ValidationError
from .errors import ParseError
from .experiment import (ExperimentConfig, ScenarioPoint, _summary, run_experiment, run_one,
                         scenario_points)
from .metrics import records_to_csv
from .orchestrator import SimState, admit, commit, release_expired
from .robins import RobustConfig, build_model
from .solver import SolverConfig, export_lp
from .topology import enumerate_paths, load_topology
from .workload import ArrivalSchedule, WorkloadParams, generate_schedule


def _eta_weight(text: str):
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a positive number or 'auto'") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("eta weight must be positive")
    return value


def _common(p: argparse.ArgumentParser, seeds: bool = False) -> None:
    p.add_argument("--topology", default="abilene",
                   help="builtin name (abilene, abilene-half) or path to a JSON document")
    p.add_argument("--seed", type=int, default=0, help="workload seed (first seed for sweeps)")
    if seeds:
        p.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    p.add_argument("--slots", type=int, default=40)
    p.add_argument("--arrival-rate", type=float, default=2.0)
    p.add_argument("--k-paths", type=int, default=5)
    p.add_argument("--time-limit", type=float, default=60.0, help="per-slot solver limit (s)")
    p.add_argument("--engine", choices=("highs", "bnb"), default="highs",
                   help="exact engine: HiGHS MILP or the built-in branch and bound")
    p.add_argument("--eta-weight", type=_eta_weight, default=None, metavar="REAL|auto")
    p.add_argument("--paper-faithful-objective", action="store_true",
                   help="use weight 1 on the rejection count")
    p.add_argument("--no-timing", action="store_true",
                   help="record admission time as 0 so outputs are byte-reproducible")


def _robust_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=int, default=None, help="sets both protection levels")
    p.add_argument("--gamma1", type=int, default=None)
    p.add_argument("--gamma2", type=int, default=None)
    p.add_argument("--delta", type=float, default=None, help="sets both relative deviations")
    p.add_argument("--delta1", type=float, default=None)
    p.add_argument("--delta2", type=float, default=None)


def _pick(specific, shared, default):
    if specific is not None:
        return specific
    return shared if shared is not None else default


def _point(args) -> ScenarioPoint:
    return ScenarioPoint(_pick(args.gamma1, args.gamma, 1), _pick(args.gamma2, args.gamma, 1),
                         _pick(args.delta1, args.delta, 0.1), _pick(args.delta2, args.delta, 0.1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-slicing",
                                     description="Robust online network slice admission.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one seeded simulation")
    _common(sim)
    _robust_flags(sim)
    sim.add_argument("--mode", choices=("exact", "heuristic", "both"), default="exact")
    sim.add_argument("--schedule", help="arrival schedule JSON instead of a generated one")
    sim.add_argument("--out", help="output directory (CSV to stdout when omitted)")

    exp = sub.add_parser("experiment", help="sweep protection settings over seeds")
    _common(exp, seeds=True)
    exp.add_argument("--mode", choices=("exact", "heuristic", "both"), default="both")
    exp.add_argument("--scenario", nargs="+", default=["gamma-sweep"],
                     metavar="gamma-sweep|delta-sweep|custom FILE")
    exp.add_argument("--workers", type=int, default=1)
    exp.add_argument("--out", default="results")

    lp = sub.add_parser("export-lp", help="write one slot's model in LP format")
    _common(lp)
    _robust_flags(lp)
    lp.add_argument("--slot", type=int, default=1,
                    help="slot to export; earlier slots are admitted exactly first")
    lp.add_argument("--out", help="output file (stdout when omitted)")

    val = sub.add_parser("validate", help="check a topology and/or schedule document")
    val.add_argument("--topology", help="topology JSON path or builtin name")
    val.add_argument("--schedule", help="arrival schedule JSON path")
    return parser


def _modes(mode: str) -> tuple[str, ...]:
    return ("exact", "heuristic") if mode == "both" else (mode,)


def _experiment_config(args, points, scenario) -> ExperimentConfig:
    return ExperimentConfig(
        topology=args.topology,
        workload=WorkloadParams(n_slots=args.slots, arrival_rate=args.arrival_rate),
        seeds=tuple(range(args.seed, args.seed + getattr(args, "seeds", 1))),
        modes=_modes(args.mode), points=tuple(points), scenario=scenario,
        solver=SolverConfig(time_limit=args.time_limit, engine=args.engine),
        k_paths=args.k_paths, eta_weight=args.eta_weight,
        paper_faithful_objective=args.paper_faithful_objective,
        out_dir=getattr(args, "out", None) or "results", record_timing=not args.no_timing,
        workers=getattr(args, "workers", 1))


def _cmd_simulate(args, out) -> int:
    cfg = _experiment_config(args, [_point(args)], "custom")
    cfg.validate()
    point = cfg.points[0]
    topology = load_topology(args.topology, seed=args.seed)
    paths = enumerate_paths(topology, args.k_paths)
    schedule = None
    if args.schedule:
        schedule = ArrivalSchedule.from_json(Path(args.schedule).read_text())
        cfg = replace(cfg, workload=schedule.params)
    for mode in cfg.modes:
        run = run_one(topology, cfg, point, args.seed, mode, paths, schedule)
        csv_text = records_to_csv(run["records"])
        if args.out:
            target = Path(args.out)
            target.mkdir(parents=True, exist_ok=True)
            (target / f"{mode}.csv").write_text(csv_text)
            summary = _summary(cfg, topology, point, args.seed, mode, run)
            (target / f"{mode}.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
            print(f"{mode}: acceptance {run['acceptance_ratio']:.2f}% -> {target / f'{mode}.csv'}",
                  file=out)
        else:
            if len(cfg.modes) > 1:
                print(f"# mode={mode}", file=out)
            out.write(csv_text)
    return 0


def _cmd_experiment(args, out) -> int:
    scenario, *rest = args.scenario
    custom = None
    if scenario == "custom":
        if len(rest) != 1:
            raise ValidationError("--scenario custom needs exactly one FILE")
        try:
            raw = json.loads(Path(rest[0]).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
        custom = raw.get("points") if isinstance(raw, dict) else raw
    elif rest:
        raise ValidationError(f"scenario {scenario!r} takes no file argument")
    if args.seeds < 1:
        raise ValidationError("--seeds must be >= 1")
    cfg = _experiment_config(args, scenario_points(scenario, custom), scenario)
    path = run_experiment(cfg)
    print(f"wrote {path / 'aggregate.csv'}", file=out)
    return 0


def _cmd_export_lp(args, out) -> int:
    point = _point(args)
    cfg = RobustConfig(point.gamma1, point.gamma2, point.delta1, point.delta2,
                       args.eta_weight, args.paper_faithful_objective)
    topology = load_topology(args.topology, seed=args.seed)
    paths = enumerate_paths(topology, args.k_paths)
    params = WorkloadParams(n_slots=max(args.slots, args.slot), arrival_rate=args.arrival_rate)
    schedule = generate_schedule(args.seed, params).with_deltas(point.delta1, point.delta2)
    state = SimState.initial(topology, cfg)
    solver = SolverConfig(time_limit=args.time_limit, engine=args.engine)
    for t in range(1, args.slot):
        if t > 1:
            release_expired(state)
        arrivals = schedule.arrivals(t)
        commit(state, admit(state, arrivals, "exact", topology, paths, cfg, solver), arrivals, t)
    if args.slot > 1:
        release_expired(state)
    model = build_model(state, schedule.arrivals(args.slot), topology, paths, cfg)
    text = export_lp(model)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} ({model.n_vars} columns, {model.n_rows} rows)", file=out)
    else:
        out.write(text)
    return 0


def _cmd_validate(args, out) -> int:
    if not args.topology and not args.schedule:
        raise ValidationError("nothing to validate: pass --topology and/or --schedule")
    if args.topology:
        topo = load_topology(args.topology)
        print(f"topology ok: {len(topo.nodes)} nodes, {len(topo.links)} links", file=out)
    if args.schedule:
        sched = ArrivalSchedule.from_json(Path(args.schedule).read_text())
        print(f"schedule ok: {sched.n_slots} slots, {sched.total_arrivals} slices", file=out)
    return 0


COMMANDS = {"simulate": _cmd_simulate, "experiment": _cmd_experiment,
            "export-lp": _cmd_export_lp, "validate": _cmd_validate}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
