import json

import pytest

from robust_slicing import orchestrator
from robust_slicing.errors import InternalConsistencyError, ValidationError
from robust_slicing.orchestrator import (SimState, admit, audit_state, commit, release_expired,
                                         run_simulation)
from robust_slicing.robins import Assignment, RobustConfig
from robust_slicing.solver import SolverConfig
from robust_slicing.topology import enumerate_paths, load_topology
from robust_slicing.workload import ArrivalSchedule, WorkloadParams, generate_schedule, make_slice

from instances import adversary_violations


def one_node():
    return load_topology({"nodes": [{"id": "n", "cpu": 32, "ram": 192, "storage": 4000,
                                     "p_max": 540, "p_idle": 170}],
                          "links": [{"id": "n-self", "u": "n", "v": "n"}]})


def _admit_commit(state, reqs, slot, mode="heuristic"):
    topo = state.topology
    paths = enumerate_paths(topo, 1)
    a = admit(state, reqs, mode, topo, paths, state.cfg)
    commit(state, a, reqs, slot)
    return a


def test_release_returns_nominal_resources():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig(0, 0, 0.1, 0.1))
    req = make_slice(1, [(2, 4, 120)], [], lifespan=1)
    _admit_commit(state, [req], 1)
    assert state.available["n"].cpu == 30
    before = state.available["n"].cpu
    summary = release_expired(state)
    assert summary["released"] == [req.key]
    assert state.available["n"].cpu - before == 2
    assert state.available["n"] == topo.nodes["n"].capacity
    assert not state.used_nodes and state.power_used_nodes == 0


def test_lifespan_one_is_gone_at_start_of_next_slot():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig())
    req = make_slice(1, [(2, 4, 120)], [], lifespan=3)
    _admit_commit(state, [req], 1)
    for _ in range(2):
        assert release_expired(state)["released"] == []
    assert release_expired(state)["released"] == [req.key]


def test_permanent_slice_never_released():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig())
    req = make_slice(1, [(2, 4, 120)], [], lifespan=None)
    _admit_commit(state, [req], 1)
    for _ in range(50):
        assert release_expired(state)["released"] == []
    assert state.active[req.key].phi is None
    assert state.placements == {(1, 1, 1): "n"}


def test_commit_books_protection():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig(1, 1, 0.1, 0.1))
    req = make_slice(1, [(2, 4, 120)], [], delta1=0.1)
    _admit_commit(state, [req], 1)
    assert state.available["n"].cpu == pytest.approx(32 - 2.2)
    assert state.node_reservations[(1, "n")].cpu == pytest.approx(0.2)
    assert state.node_reservations[(1, "n")].ram == pytest.approx(0.4)


def test_gamma_zero_books_no_protection():
    topo = load_topology("abilene-half")
    state = SimState.initial(topo, RobustConfig(0, 0, 0.3, 0.3))
    reqs = list(generate_schedule(1, WorkloadParams(n_slots=1, arrival_rate=5.0)).with_deltas(0.3, 0.3).arrivals(1))
    assert reqs
    a = _admit_commit(state, reqs, 1)
    assert a.accepted
    assert state.node_reservations == {} and state.link_reservations == {}


def test_empty_commit_leaves_state_alone():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig(1, 1, 0.1, 0.1))
    _admit_commit(state, [make_slice(1, [(2, 4, 120)], [])], 1)
    before = state.to_document()
    commit(state, Assignment(), [], 2)
    after = state.to_document()
    assert after.pop("clock") == 2 and before.pop("clock") == 1
    assert after == before


def test_scripted_three_slot_ledgers():
    """Two overlapping slices on one node, Gamma1 = 1, Delta1 = 10%."""
    topo = one_node()
    spec = topo.nodes["n"]
    state = SimState.initial(topo, RobustConfig(1, 1, 0.1, 0.1))
    a = make_slice(1, [(2, 4, 120)], [], lifespan=2, delta1=0.1)
    b = make_slice(2, [(4, 16, 120)], [], lifespan=2, delta1=0.1)

    _admit_commit(state, [a], 1)
    assert state.node_reservations[(1, "n")].cpu == pytest.approx(0.2)
    assert state.available["n"].cpu == pytest.approx(29.8)

    release_expired(state)  # slot 2: nothing expires
    _admit_commit(state, [b], 2)
    # protection rises from 0.2 (top-1 of {0.2}) to 0.4 (top-1 of {0.2, 0.4})
    assert state.node_reservations[(2, "n")].cpu == pytest.approx(0.2)
    assert state.available["n"].cpu == pytest.approx(32 - 6 - 0.4)
    busy = 6.4
    assert state.power_used_nodes == pytest.approx(spec.p_idle + (spec.p_max - spec.p_idle) * busy / 32)

    out = release_expired(state)  # slot 3: slice a leaves, slot-1 ledger returned
    assert out["released"] == [a.key] and out["ledgers_returned"] == [1]
    # b alone needs 0.4; the surviving slot-2 ledger is topped up to cover it
    assert set(state.node_reservations) == {(2, "n")}
    assert state.node_reservations[(2, "n")].cpu == pytest.approx(0.4)
    assert state.available["n"].cpu == pytest.approx(32 - 4 - 0.4)

    out = release_expired(state)  # slot 4: b leaves
    assert out["released"] == [b.key] and out["ledgers_returned"] == [2]
    assert state.available["n"] == spec.capacity
    assert state.node_reservations == {} and state.power_used_nodes == 0
    assert audit_state(state) == []


def test_admit_unknown_mode():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig())
    with pytest.raises(ValidationError):
        admit(state, [], "magic", topo, enumerate_paths(topo, 1), RobustConfig())


@pytest.mark.parametrize("mode", ["heuristic", "exact"])
def test_admit_without_arrivals(mode):
    topo = one_node()
    cfg = RobustConfig()
    a = admit(SimState.initial(topo, cfg), [], mode, topo, enumerate_paths(topo, 1), cfg)
    assert a.eta == 0 and not a.accepted


def test_infeasible_engine_output_aborts(monkeypatch):
    topo = one_node()
    cfg = RobustConfig()
    req = make_slice(1, [(2, 4, 120)], [])

    def bogus(state, arrivals, *args, **kwargs):
        out = Assignment(accepted={req.key})  # accepted but never placed
        return out

    monkeypatch.setattr(orchestrator, "nea_onsu_admit", bogus)
    with pytest.raises(InternalConsistencyError):
        admit(SimState.initial(topo, cfg), [req], "heuristic", topo, enumerate_paths(topo, 1), cfg)


def test_double_commit_rejected():
    topo = one_node()
    state = SimState.initial(topo, RobustConfig())
    req = make_slice(1, [(2, 4, 120)], [])
    a = _admit_commit(state, [req], 1)
    with pytest.raises(ValidationError):
        commit(state, a, [req], 2)


# -- whole runs --------------------------------------------------------------

@pytest.mark.parametrize("mode", ["heuristic", "exact"])
def test_drain_restores_initial_state(mode):
    topo = load_topology("abilene-half", seed=3)
    sched = generate_schedule(3, WorkloadParams(n_slots=8, arrival_rate=3.0))
    cfg = RobustConfig(2, 2, 0.2, 0.2)
    checks = []
    result = run_simulation(topo, sched.with_deltas(0.2, 0.2), mode, cfg, drain=True,
                            on_slot=lambda s, *a: checks.append(audit_state(s) + adversary_violations(s)))
    assert all(c == [] for c in checks)
    state = result.state
    assert len(result.records) > 8
    assert state.available == {n: spec.capacity for n, spec in topo.nodes.items()}
    assert state.avail_bw == {l: spec.bandwidth for l, spec in topo.links.items()}
    assert state.power_used_nodes == 0 and state.power_used_switches == 0
    assert not state.node_reservations and not state.link_reservations
    assert not state.used_nodes and not state.used_links
    assert sum(r.accepted for r in result.records) > 0


def test_runs_are_deterministic():
    topo = load_topology("abilene-half")
    sched = generate_schedule(5, WorkloadParams(n_slots=6))
    cfg = RobustConfig(1, 1, 0.1, 0.1)
    a = run_simulation(topo, sched, "exact", cfg, record_timing=False)
    b = run_simulation(topo, sched, "exact", cfg, record_timing=False)
    assert a.records == b.records
    assert a.state.to_json() == b.state.to_json()


def test_state_document_is_json():
    topo = load_topology("abilene-half")
    result = run_simulation(topo, generate_schedule(2, WorkloadParams(n_slots=4)), "heuristic",
                            RobustConfig(1, 1, 0.1, 0.1))
    doc = json.loads(result.state.to_json())
    assert doc["clock"] == 4
    assert {tuple(p[:3]) for p in doc["placements"]} == set(result.state.placements)
    assert len(doc["active"]) == len(result.state.active)


def test_past_allocations_never_move():
    topo = load_topology("abilene-half")
    sched = generate_schedule(8, WorkloadParams(n_slots=10))
    seen = {}

    def track(state, *_):
        for key, node in state.placements.items():
            assert seen.setdefault(key, node) == node

    run_simulation(topo, sched, "heuristic", RobustConfig(1, 1, 0.1, 0.1), on_slot=track)
    assert seen


def test_empty_schedule_rejected():
    with pytest.raises(ValidationError):
        run_simulation(one_node(), ArrivalSchedule(()), "heuristic",
                       RobustConfig())


def test_exact_mode_uses_bnb_engine_too():
    topo = load_topology("abilene-half")
    sched = generate_schedule(4, WorkloadParams(n_slots=3, arrival_rate=1.0))
    cfg = RobustConfig(1, 1, 0.1, 0.1)
    a = run_simulation(topo, sched, "exact", cfg, SolverConfig(engine="bnb"), record_timing=False)
    b = run_simulation(topo, sched, "exact", cfg, SolverConfig(engine="highs"), record_timing=False)
    assert [r.eta for r in a.records] == [r.eta for r in b.records]
    for x, y in zip(a.assignments, b.assignments):
        assert x.objective_value == pytest.approx(y.objective_value, abs=1e-6)
