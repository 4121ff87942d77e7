"""Slice requests and seeded stochastic arrival schedules."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .topology import ResourceVector

__all__ = [
    "VmSpec",
    "VlSpec",
    "SliceRequest",
    "WorkloadParams",
    "ArrivalSchedule",
    "VM_TYPES",
    "ba_slice_graph",
    "generate_schedule",
    "make_slice",
]

# VM types as (cpu cores, ram GB, storage GB).
VM_TYPES = ((1.0, 2.0, 120.0), (2.0, 4.0, 120.0), (4.0, 16.0, 120.0))


@dataclass(frozen=True)
class VmSpec:
    id: int
    nominal: ResourceVector
    deviation: ResourceVector = ResourceVector()


@dataclass(frozen=True)
class VlSpec:
    id: int
    endpoints: tuple[int, int]
    nominal_rate: float
    rate_deviation: float = 0.0
    max_delay: float = float("inf")


@dataclass(frozen=True)
class SliceRequest:
    """A tenant's virtual network: VMs, VLs and a lifespan in slots.

    ``lifespan`` is ``None`` for a permanent slice.
    """

    tenant: int
    slice: int
    vms: tuple[VmSpec, ...]
    vls: tuple[VlSpec, ...]
    lifespan: int | None = 1
    arrival_slot: int = 1

    @property
    def key(self) -> tuple[int, int]:
        return (self.tenant, self.slice)

    @property
    def permanent(self) -> bool:
        return self.lifespan is None

    def vm(self, vm_id: int) -> VmSpec:
        for vm in self.vms:
            if vm.id == vm_id:
                return vm
        raise KeyError(vm_id)

    def with_deltas(self, delta1: float, delta2: float) -> "SliceRequest":
        """Copy with deviations re-derived from relative deviations."""
        vms = tuple(replace(vm, deviation=vm.nominal.scale(delta1)) for vm in self.vms)
        vls = tuple(replace(vl, rate_deviation=vl.nominal_rate * delta2) for vl in self.vls)
        return replace(self, vms=vms, vls=vls)

    def validate(self) -> None:
        ids = [vm.id for vm in self.vms]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"slice {self.key}: duplicate VM ids")
        for vm in self.vms:
            if not vm.nominal.is_nonnegative() or not vm.deviation.is_nonnegative():
                raise ValidationError(f"slice {self.key}: VM {vm.id} has negative demand")
            if not vm.deviation <= vm.nominal:
                raise ValidationError(f"slice {self.key}: VM {vm.id} deviation exceeds nominal")
        pairs = set()
        for vl in self.vls:
            a, b = vl.endpoints
            if a == b or a not in ids or b not in ids:
                raise ValidationError(f"slice {self.key}: VL {vl.id} has bad endpoints {vl.endpoints}")
            pair = frozenset(vl.endpoints)
            if pair in pairs:
                raise ValidationError(f"slice {self.key}: parallel VLs between {a} and {b}")
            pairs.add(pair)
            if not vl.nominal_rate > 0 or not 0 <= vl.rate_deviation <= vl.nominal_rate:
                raise ValidationError(f"slice {self.key}: VL {vl.id} has bad rate")
            if vl.max_delay < 0:
                raise ValidationError(f"slice {self.key}: VL {vl.id} has negative max delay")
        if self.lifespan is not None and self.lifespan < 0:
            raise ValidationError(f"slice {self.key}: negative lifespan")


@dataclass(frozen=True)
class WorkloadParams:
    n_slots: int = 40
    arrival_rate: float = 2.0
    max_arrivals: int = 5
    lifespan_mean: float = 10.0
    vm_count: tuple[int, int] = (2, 4)
    vm_types: tuple[tuple[float, float, float], ...] = VM_TYPES
    bandwidth: tuple[float, float] = (100.0, 1500.0)
    max_delay: tuple[float, float] = (4.0, 13.0)
    delta1: float = 0.1
    delta2: float = 0.1

    def validate(self) -> None:
        if self.n_slots < 1:
            raise ValidationError("n_slots must be >= 1")
        if self.arrival_rate < 0 or not np.isfinite(self.arrival_rate):
            raise ValidationError("arrival_rate must be a finite non-negative number")
        if self.max_arrivals < 0:
            raise ValidationError("max_arrivals must be >= 0")
        if self.lifespan_mean <= 0:
            raise ValidationError("lifespan_mean must be positive")
        lo, hi = self.vm_count
        if not 2 <= lo <= hi:
            raise ValidationError("vm_count must satisfy 2 <= lo <= hi")
        if not self.vm_types:
            raise ValidationError("vm_types must not be empty")
        if not 0 < self.bandwidth[0] <= self.bandwidth[1]:
            raise ValidationError("bandwidth range must be positive and ordered")
        if not 0 <= self.max_delay[0] <= self.max_delay[1]:
            raise ValidationError("max_delay range must be non-negative and ordered")
        for d in (self.delta1, self.delta2):
            if not 0 <= d <= 1:
                raise ValidationError("relative deviations must lie in [0, 1]")


def ba_slice_graph(rng: np.random.Generator, n_vms: int) -> list[tuple[int, int]]:
    """Preferential-attachment tree over VM ids ``1..n_vms``.

    Every new vertex attaches to one existing vertex drawn with probability
    proportional to its degree.
    """
    if n_vms < 2:
        raise ValidationError("a slice graph needs at least 2 VMs")
    edges = [(1, 2)]
    degree = [0, 1, 1]  # index 0 unused
    for v in range(3, n_vms + 1):
        weights = np.asarray(degree[1:v], dtype=float)
        u = int(rng.choice(np.arange(1, v), p=weights / weights.sum()))
        edges.append((u, v))
        degree[u] += 1
        degree.append(1)
    return edges


@dataclass(frozen=True)
class ArrivalSchedule:
    """Slice arrivals per slot; ``slots[i]`` holds the arrivals of slot ``i + 1``."""

    slots: tuple[tuple[SliceRequest, ...], ...]
    seed: int | None = None
    params: WorkloadParams = field(default_factory=WorkloadParams)

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def arrivals(self, slot: int) -> tuple[SliceRequest, ...]:
        return self.slots[slot - 1] if 1 <= slot <= len(self.slots) else ()

    @property
    def total_arrivals(self) -> int:
        return sum(len(s) for s in self.slots)

    def with_deltas(self, delta1: float, delta2: float) -> "ArrivalSchedule":
        slots = tuple(tuple(s.with_deltas(delta1, delta2) for s in slot) for slot in self.slots)
        return replace(self, slots=slots, params=replace(self.params, delta1=delta1, delta2=delta2))

    def to_json(self) -> str:
        return json.dumps(_schedule_to_dict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArrivalSchedule":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
        try:
            return _schedule_from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed schedule document: {exc!r}") from None


def _schedule_to_dict(schedule: ArrivalSchedule) -> dict:
    def vm(v):
        return {"id": v.id, "nominal": list(v.nominal.as_tuple()),
                "deviation": list(v.deviation.as_tuple())}

    def vl(e):
        return {"id": e.id, "endpoints": list(e.endpoints), "nominal_rate": e.nominal_rate,
                "rate_deviation": e.rate_deviation, "max_delay": e.max_delay}

    slots = [[{"tenant": s.tenant, "slice": s.slice, "lifespan": s.lifespan,
               "arrival_slot": s.arrival_slot, "vms": [vm(v) for v in s.vms],
               "vls": [vl(e) for e in s.vls]} for s in slot] for slot in schedule.slots]
    params = asdict(schedule.params)
    return {"seed": schedule.seed, "params": params, "slots": slots}


def _schedule_from_dict(raw: dict) -> ArrivalSchedule:
    p = dict(raw.get("params") or {})
    for key in ("vm_count", "bandwidth", "max_delay"):
        if key in p:
            p[key] = tuple(p[key])
    if "vm_types" in p:
        p["vm_types"] = tuple(tuple(float(x) for x in t) for t in p["vm_types"])
    params = WorkloadParams(**p)
    slots = []
    for slot in raw["slots"]:
        reqs = []
        for s in slot:
            req = SliceRequest(
                tenant=int(s["tenant"]), slice=int(s["slice"]),
                vms=tuple(VmSpec(int(v["id"]), ResourceVector.from_iter(v["nominal"]),
                                 ResourceVector.from_iter(v.get("deviation", (0, 0, 0))))
                          for v in s["vms"]),
                vls=tuple(VlSpec(int(e["id"]), (int(e["endpoints"][0]), int(e["endpoints"][1])),
                                 float(e["nominal_rate"]), float(e.get("rate_deviation", 0.0)),
                                 float(e.get("max_delay", float("inf"))))
                          for e in s["vls"]),
                lifespan=None if s.get("lifespan") is None else int(s["lifespan"]),
                arrival_slot=int(s.get("arrival_slot", 1)))
            req.validate()
            reqs.append(req)
        slots.append(tuple(reqs))
    return ArrivalSchedule(tuple(slots), raw.get("seed"), params)


def generate_schedule(seed: int, params: WorkloadParams = WorkloadParams()) -> ArrivalSchedule:
    """Draw a reproducible arrival schedule.

    Per slot the arrival count is Poisson(``arrival_rate``) capped at
    ``max_arrivals``. Each slice gets a uniform VM count, VM demands drawn from
    ``vm_types``, a preferential-attachment VL tree, uniform VL rates and delay
    bounds, and a lifespan equal to a rounded exponential draw (at least 1).
    Every slice belongs to a fresh tenant.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    tenant = 0
    slots = []
    for t in range(1, params.n_slots + 1):
        count = min(int(rng.poisson(params.arrival_rate)), params.max_arrivals)
        arrivals = []
        for _ in range(count):
            tenant += 1
            n_vms = int(rng.integers(params.vm_count[0], params.vm_count[1] + 1))
            vms = []
            for vm_id in range(1, n_vms + 1):
                nominal = ResourceVector.from_iter(
                    params.vm_types[int(rng.integers(len(params.vm_types)))])
                vms.append(VmSpec(vm_id, nominal, nominal.scale(params.delta1)))
            vls = []
            for vl_id, (a, b) in enumerate(ba_slice_graph(rng, n_vms), start=1):
                rate = float(rng.uniform(*params.bandwidth))
                delay = float(rng.uniform(*params.max_delay))
                vls.append(VlSpec(vl_id, (a, b), rate, rate * params.delta2, delay))
            lifespan = max(1, int(round(rng.exponential(params.lifespan_mean))))
            req = SliceRequest(tenant, 1, tuple(vms), tuple(vls), lifespan, t)
            arrivals.append(req)
        slots.append(tuple(arrivals))
    return ArrivalSchedule(tuple(slots), seed, params)


def make_slice(tenant: int, vm_demands: Sequence[Sequence[float]],
               vls: Sequence[tuple[int, int, float, float]], lifespan: int | None = 1,
               arrival_slot: int = 1, delta1: float = 0.0, delta2: float = 0.0,
               slice_id: int = 1) -> SliceRequest:
    """Convenience constructor: VM demands and ``(a, b, rate, max_delay)`` VLs."""
    vms = tuple(VmSpec(i, ResourceVector.from_iter(d), ResourceVector.from_iter(d).scale(delta1))
                for i, d in enumerate(vm_demands, start=1))
    links = tuple(VlSpec(i, (a, b), float(rate), float(rate) * delta2, float(delay))
                  for i, (a, b, rate, delay) in enumerate(vls, start=1))
    req = SliceRequest(tenant, slice_id, vms, links, lifespan, arrival_slot)
    req.validate()
    return req
