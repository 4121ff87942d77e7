import collections
import itertools

import numpy as np
import pytest

from robust_slicing.errors import ParseError, ValidationError
from robust_slicing.topology import ResourceVector
from robust_slicing.workload import (VM_TYPES, ArrivalSchedule, SliceRequest, VlSpec, VmSpec,
                                     WorkloadParams, ba_slice_graph, generate_schedule, make_slice)


def test_schedule_is_deterministic():
    a = generate_schedule(5).to_json()
    b = generate_schedule(5).to_json()
    assert a == b
    assert a != generate_schedule(6).to_json()


def test_zero_rate_gives_empty_slots():
    sched = generate_schedule(1, WorkloadParams(arrival_rate=0.0))
    assert sched.total_arrivals == 0
    assert all(len(s) == 0 for s in sched.slots)


def test_negative_rate_rejected():
    with pytest.raises(ValidationError):
        generate_schedule(1, WorkloadParams(arrival_rate=-1.0))


@pytest.mark.parametrize("params", [
    WorkloadParams(vm_types=()),
    WorkloadParams(vm_count=(1, 3)),
    WorkloadParams(n_slots=0),
    WorkloadParams(delta1=1.5),
    WorkloadParams(bandwidth=(0, 10)),
])
def test_invalid_params(params):
    with pytest.raises(ValidationError):
        generate_schedule(0, params)


def test_default_schedules_respect_ranges():
    totals = []
    for seed in range(20):
        sched = generate_schedule(seed)
        assert sched.n_slots == 40
        totals.append(sched.total_arrivals)
        tenants = [r.tenant for slot in sched.slots for r in slot]
        assert len(tenants) == len(set(tenants))
        for t, slot in enumerate(sched.slots, start=1):
            assert len(slot) <= 5
            for req in slot:
                req.validate()
                assert req.arrival_slot == t
                assert 2 <= len(req.vms) <= 4
                assert len(req.vls) == len(req.vms) - 1
                assert req.lifespan >= 1
                for vm in req.vms:
                    assert vm.nominal.as_tuple() in VM_TYPES
                    assert vm.deviation == vm.nominal.scale(0.1)
                for vl in req.vls:
                    assert 100 <= vl.nominal_rate <= 1500
                    assert 4 <= vl.max_delay <= 13
                    assert vl.rate_deviation == pytest.approx(0.1 * vl.nominal_rate)
    assert all(40 <= n <= 200 for n in totals)


def test_attribute_means_near_midpoints():
    params = WorkloadParams(n_slots=2000, arrival_rate=5.0, max_arrivals=5)
    sched = generate_schedule(3, params)
    reqs = [r for slot in sched.slots for r in slot]
    rates = [vl.nominal_rate for r in reqs for vl in r.vls]
    delays = [vl.max_delay for r in reqs for vl in r.vls]
    counts = [len(r.vms) for r in reqs]
    assert len(rates) >= 10_000
    assert abs(np.mean(rates) - 800) / 800 < 0.05
    assert abs(np.mean(delays) - 8.5) / 8.5 < 0.05
    assert abs(np.mean(counts) - 3) / 3 < 0.05
    assert min(rates) >= 100 and max(rates) <= 1500
    lifespans = [r.lifespan for r in reqs]
    assert abs(np.mean(lifespans) - 10) / 10 < 0.05


def test_arrival_counts_are_capped_poisson():
    params = WorkloadParams(n_slots=20_000, arrival_rate=2.0)
    counts = np.array([len(s) for s in generate_schedule(9, params).slots])
    assert counts.max() <= 5
    # mean of min(Poisson(2), 5)
    from scipy.stats import poisson
    expected = sum(min(k, 5) * poisson.pmf(k, 2.0) for k in range(60))
    assert abs(counts.mean() - expected) < 0.03


def test_ba_small_cases():
    rng = np.random.default_rng(0)
    assert ba_slice_graph(rng, 2) == [(1, 2)]
    for _ in range(50):
        edges = ba_slice_graph(rng, 4)
        assert len(edges) == 3
        seen = {1, 2}
        for u, v in edges[1:]:
            assert u in seen and v not in seen
            seen.add(v)
    with pytest.raises(ValidationError):
        ba_slice_graph(rng, 1)


def _ba_distribution(n):
    """Exact distribution of preferential-attachment trees on vertices 1..n."""
    dist = {((1, 2),): 1.0}
    for v in range(3, n + 1):
        nxt = collections.defaultdict(float)
        for edges, p in dist.items():
            deg = collections.Counter(itertools.chain.from_iterable(edges))
            total = sum(deg[u] for u in range(1, v))
            for u in range(1, v):
                nxt[edges + ((u, v),)] += p * deg[u] / total
        dist = dict(nxt)
    return dist


def test_ba_frequencies_match_preferential_attachment():
    rng = np.random.default_rng(1)
    exact = _ba_distribution(4)
    samples = collections.Counter(tuple(ba_slice_graph(rng, 4)) for _ in range(10_000))
    assert set(samples) <= set(exact)
    for edges, p in exact.items():
        assert abs(samples[edges] / 10_000 - p) < 0.02
    # early vertices gather more degree
    degree = collections.Counter()
    for edges, c in samples.items():
        for u, v in edges:
            degree[u] += c
            degree[v] += c
    assert degree[1] > degree[3] > degree[4]


def test_schedule_json_round_trip():
    sched = generate_schedule(7, WorkloadParams(n_slots=6))
    again = ArrivalSchedule.from_json(sched.to_json())
    assert again == sched
    assert again.to_json() == sched.to_json()


def test_schedule_parse_error_has_line():
    with pytest.raises(ParseError) as info:
        ArrivalSchedule.from_json('{\n"slots": [\n  [}\n]}')
    assert info.value.lineno == 3


def test_schedule_with_deltas_rescales_deviations():
    sched = generate_schedule(2, WorkloadParams(n_slots=5)).with_deltas(0.3, 0.0)
    for slot in sched.slots:
        for req in slot:
            for vm in req.vms:
                assert vm.deviation.as_tuple() == pytest.approx(vm.nominal.scale(0.3).as_tuple())
            assert all(vl.rate_deviation == 0 for vl in req.vls)


def test_arrivals_outside_range_are_empty():
    sched = generate_schedule(0, WorkloadParams(n_slots=3))
    assert sched.arrivals(0) == () and sched.arrivals(4) == ()


def test_slice_validation():
    vm = VmSpec(1, ResourceVector(1, 1, 1))
    with pytest.raises(ValidationError, match="parallel"):
        SliceRequest(1, 1, (vm, VmSpec(2, ResourceVector(1, 1, 1))),
                     (VlSpec(1, (1, 2), 10.0), VlSpec(2, (2, 1), 10.0))).validate()
    with pytest.raises(ValidationError, match="endpoints"):
        SliceRequest(1, 1, (vm,), (VlSpec(1, (1, 1), 10.0),)).validate()
    with pytest.raises(ValidationError, match="deviation"):
        SliceRequest(1, 1, (VmSpec(1, ResourceVector(1, 1, 1), ResourceVector(2, 0, 0)),), ()).validate()
    with pytest.raises(ValidationError, match="lifespan"):
        SliceRequest(1, 1, (vm,), (), lifespan=-1).validate()
    permanent = make_slice(3, [(1, 2, 120)], [], lifespan=None)
    assert permanent.permanent
