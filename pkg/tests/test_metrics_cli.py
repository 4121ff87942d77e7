import csv
import io
import json

import pytest

from robust_slicing.cli import main
from robust_slicing.errors import ValidationError
from robust_slicing.experiment import (ExperimentConfig, ScenarioPoint, read_aggregate,
                                       run_experiment, scenario_points)
from robust_slicing.metrics import CSV_COLUMNS, SlotRecord, acceptance_ratio, final_acceptance
from robust_slicing.workload import WorkloadParams, generate_schedule

TINY = WorkloadParams(n_slots=4, arrival_rate=1.5)


@pytest.mark.parametrize("accepted, arrived, want", [(4, 5, 80.0), (0, 0, 100.0), (100, 100, 100.0),
                                                     (0, 3, 0.0)])
def test_acceptance_ratio(accepted, arrived, want):
    assert acceptance_ratio(accepted, arrived) == want


@pytest.mark.parametrize("accepted, arrived", [(6, 5), (-1, 2), (1, -1)])
def test_acceptance_ratio_errors(accepted, arrived):
    with pytest.raises(ValidationError):
        acceptance_ratio(accepted, arrived)


def test_slot_record_checks_counts():
    with pytest.raises(ValidationError):
        SlotRecord(1, 3, 1, 1, 0.0, 0.0, 0.0, 0, 0, 0.0)


def test_csv_columns_are_record_fields():
    assert CSV_COLUMNS == ("slot", "arrived", "accepted", "eta", "node_power", "switch_power",
                           "total_power", "active_servers", "active_links", "admit_wall_time")


def test_scenarios():
    assert [p.gamma1 for p in scenario_points("gamma-sweep")] == [0, 1, 2, 3, 4]
    assert {p.delta1 for p in scenario_points("gamma-sweep")} == {0.1}
    assert [p.delta2 for p in scenario_points("delta-sweep")] == [0.0, 0.1, 0.3]
    pts = scenario_points("custom", [{"gamma": 2, "delta": 0.2}, {"gamma1": 1, "gamma2": 3, "delta": 0}])
    assert pts == [ScenarioPoint(2, 2, 0.2, 0.2), ScenarioPoint(1, 3, 0.0, 0.0)]
    for bad in ([], [{"gamma": 1}], [{"gamma": -1, "delta": 0.1}], [{"gamma": 1, "delta": 2}]):
        with pytest.raises(ValidationError):
            scenario_points("custom", bad)
    with pytest.raises(ValidationError):
        scenario_points("beta-sweep")


@pytest.mark.parametrize("kwargs", [{"seeds": ()}, {"seeds": (1, 1)}, {"modes": ("fast",)},
                                    {"points": ()}, {"k_paths": 0}])
def test_experiment_config_validation(kwargs):
    with pytest.raises(ValidationError):
        ExperimentConfig(**kwargs).validate()


def _config(tmp_path, name, seeds=(0, 1, 2), **kw):
    base = dict(topology="abilene-half", workload=TINY, seeds=seeds,
                points=(ScenarioPoint(1, 1, 0.1, 0.1), ScenarioPoint(2, 2, 0.1, 0.1)),
                scenario="custom", out_dir=str(tmp_path / name), record_timing=False)
    base.update(kw)
    return ExperimentConfig(**base)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_experiment_outputs_and_invariants(tmp_path):
    out = run_experiment(_config(tmp_path, "a"))
    files = _tree(out)
    assert "aggregate.csv" in files
    assert "runs/g1-1_d0.1-0.1/exact/seed2.csv" in files
    assert "runs/g2-2_d0.1-0.1/heuristic/seed0.json" in files
    for name, data in files.items():
        if name.endswith(".csv") and name.startswith("runs/"):
            rows = list(csv.DictReader(io.StringIO(data.decode())))
            assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == TINY.n_slots
            for r in rows:
                assert int(r["accepted"]) + int(r["eta"]) == int(r["arrived"])
                assert float(r["total_power"]) == float(r["node_power"]) + float(r["switch_power"])
            summary = json.loads(files[name[:-4] + ".json"])
            acc = sum(int(r["accepted"]) for r in rows)
            arr = sum(int(r["arrived"]) for r in rows)
            assert summary["final"]["acceptance_ratio"] == acceptance_ratio(acc, arr)
            assert summary["software_version"]
            assert summary["config"]["mode"] in ("exact", "heuristic")
            assert len(summary["server_draw"]) == 6
    agg = read_aggregate(out / "aggregate.csv")
    assert len(agg) == 4 and all(row["n_seeds"] == 3 for row in agg)

    # identical config -> byte-identical outputs
    again = run_experiment(_config(tmp_path, "a"))
    assert _tree(again) == files
    # seed order does not matter
    shuffled = run_experiment(_config(tmp_path, "b", seeds=(2, 0, 1)))
    assert _tree(shuffled)["aggregate.csv"] == files["aggregate.csv"]


def test_parallel_matches_serial(tmp_path):
    serial = run_experiment(_config(tmp_path, "s", seeds=(0, 1), modes=("heuristic",)))
    parallel = run_experiment(_config(tmp_path, "p", seeds=(0, 1), modes=("heuristic",), workers=2))
    assert _tree(serial) == _tree(parallel)


# -- CLI ---------------------------------------------------------------------

def run_cli(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


def test_cli_simulate_writes_csv(tmp_path):
    code, text = run_cli("simulate", "--topology", "abilene", "--seed", "7", "--slots", "5",
                         "--mode", "heuristic", "--gamma", "1", "--delta", "0.1",
                         "--out", str(tmp_path))
    assert code == 0 and "heuristic.csv" in text
    rows = list(csv.DictReader(open(tmp_path / "heuristic.csv")))
    assert len(rows) == 5 and tuple(rows[0]) == CSV_COLUMNS
    summary = json.loads((tmp_path / "heuristic.json").read_text())
    assert summary["config"]["gamma1"] == 1 and summary["config"]["seed"] == 7


def test_cli_simulate_stdout_both_modes():
    code, text = run_cli("simulate", "--topology", "abilene-half", "--slots", "2", "--mode", "both",
                         "--no-timing")
    assert code == 0
    assert text.count("# mode=") == 2 and text.count("slot,arrived") == 2


def test_cli_simulate_from_schedule(tmp_path):
    sched = tmp_path / "s.json"
    sched.write_text(generate_schedule(3, WorkloadParams(n_slots=3)).to_json())
    code, text = run_cli("simulate", "--topology", "abilene-half", "--schedule", str(sched),
                         "--mode", "heuristic", "--no-timing")
    assert code == 0 and len(text.strip().splitlines()) == 4


def test_cli_experiment_custom(tmp_path):
    points = tmp_path / "points.json"
    points.write_text(json.dumps({"points": [{"gamma": 0, "delta": 0.1}, {"gamma": 2, "delta": 0.3}]}))
    code, text = run_cli("experiment", "--topology", "abilene-half", "--seeds", "2", "--slots", "3",
                         "--mode", "heuristic", "--scenario", "custom", str(points),
                         "--out", str(tmp_path / "res"), "--no-timing")
    assert code == 0 and "aggregate.csv" in text
    agg = read_aggregate(tmp_path / "res" / "aggregate.csv")
    assert [row["gamma1"] for row in agg] == [0.0, 2.0]


def test_cli_experiment_gamma_sweep(tmp_path):
    code, _ = run_cli("experiment", "--topology", "abilene-half", "--seeds", "1", "--slots", "2",
                      "--mode", "heuristic", "--scenario", "gamma-sweep", "--out", str(tmp_path))
    assert code == 0
    assert [row["gamma1"] for row in read_aggregate(tmp_path / "aggregate.csv")] == [0, 1, 2, 3, 4]


def test_cli_export_lp(tmp_path):
    target = tmp_path / "slot.lp"
    code, text = run_cli("export-lp", "--topology", "abilene-half", "--slot", "2", "--gamma", "1",
                         "--out", str(target))
    assert code == 0 and "columns" in text
    body = target.read_text()
    assert body.startswith("\\ ") and "Subject To" in body and body.endswith("End\n")
    code, text = run_cli("export-lp", "--topology", "abilene-half", "--slot", "2", "--gamma", "1")
    assert text == body


def test_cli_validate(tmp_path, capsys):
    assert run_cli("validate", "--topology", "abilene")[0] == 0
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "nodes": [\n    {"id": "a",,}\n  ]\n}\n')
    code, _ = run_cli("validate", "--topology", str(bad))
    assert code == 1
    assert "line 3" in capsys.readouterr().err
    code, _ = run_cli("validate")
    assert code == 1


@pytest.mark.parametrize("argv", [["simulate", "--bogus"], ["launch"], ["simulate", "--mode", "fast"],
                                  ["simulate", "--eta-weight", "-2"]])
def test_cli_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv, out=io.StringIO())
    assert info.value.code == 2


def test_cli_bad_values_exit_1(capsys):
    assert run_cli("experiment", "--seeds", "0", "--mode", "heuristic")[0] == 1
    assert run_cli("simulate", "--gamma", "-1", "--slots", "1")[0] == 1
    assert run_cli("simulate", "--topology", "/no/such/file.json")[0] == 1
    assert capsys.readouterr().err.startswith("error:")


def test_final_acceptance_uses_totals():
    recs = [SlotRecord(1, 2, 2, 0, 0.0, 0.0, 0.0, 0, 0, 0.0),
            SlotRecord(2, 0, 0, 0, 0.0, 0.0, 0.0, 0, 0, 0.0),
            SlotRecord(3, 3, 1, 2, 0.0, 0.0, 0.0, 0, 0, 0.0)]
    assert final_acceptance(recs) == pytest.approx(60.0)
