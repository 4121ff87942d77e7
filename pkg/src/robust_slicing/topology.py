"""Physical infrastructure: nodes, links, link power weights and k-path tables.

A node is a server cluster plus its switch. Links are undirected; every node
may additionally carry a self-link so that VMs sharing a server can talk to
each other. Topologies are described by JSON documents::

    {"nodes": [{"id": "a", "cpu": 32, "ram": 192, "storage": 4000,
                "p_max": 540, "p_idle": 170, "switch_power": 184,
                "port_power": {"10G": 4.3, "40G": 13.6}}],
     "links": [{"id": "a-a", "u": "a", "v": "a", "bandwidth_mbps": 40000,
                "rate_class": "40G", "prop_delay_ms": 0}]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath
from types import MappingProxyType
from typing import Iterable, Mapping

import networkx as nx
import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "ResourceVector",
    "NodeSpec",
    "LinkSpec",
    "Topology",
    "Path",
    "PathTable",
    "SERVER_TYPES",
    "DEFAULT_PORT_POWER",
    "SWITCH_POWER",
    "load_topology",
    "link_power_weight",
    "enumerate_paths",
    "path_delay",
]

RESOURCES = ("cpu", "ram", "storage")

# Server types: (cpu cores, ram GB, storage GB, p_max W, p_idle W).
SERVER_TYPES = (
    (32.0, 192.0, 4000.0, 540.0, 170.0),
    (48.0, 768.0, 4000.0, 700.0, 180.0),
)
SWITCH_POWER = 184.0
DEFAULT_PORT_POWER = MappingProxyType({"10G": 4.3, "40G": 13.6})
INTER_SWITCH_MBPS = 10_000.0
LOCAL_LINK_MBPS = 40_000.0


@dataclass(frozen=True)
class ResourceVector:
    """(cpu, ram, storage) triple in cores / GB / GB."""

    cpu: float = 0.0
    ram: float = 0.0
    storage: float = 0.0

    @classmethod
    def zero(cls) -> "ResourceVector":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_iter(cls, values: Iterable[float]) -> "ResourceVector":
        cpu, ram, storage = values
        return cls(float(cpu), float(ram), float(storage))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.cpu, self.ram, self.storage)

    def __iter__(self):
        return iter((self.cpu, self.ram, self.storage))

    def __getitem__(self, i):
        return self.as_tuple()[i]

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu + other.cpu, self.ram + other.ram,
                              self.storage + other.storage)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu - other.cpu, self.ram - other.ram,
                              self.storage - other.storage)

    def scale(self, factor: float) -> "ResourceVector":
        return ResourceVector(self.cpu * factor, self.ram * factor, self.storage * factor)

    def clip_min(self, floor: float = 0.0) -> "ResourceVector":
        return ResourceVector(max(self.cpu, floor), max(self.ram, floor),
                              max(self.storage, floor))

    def __le__(self, other: "ResourceVector") -> bool:
        # component-wise partial order
        return self.cpu <= other.cpu and self.ram <= other.ram and self.storage <= other.storage

    def fits(self, other: "ResourceVector", tol: float = 1e-9) -> bool:
        return (self.cpu <= other.cpu + tol and self.ram <= other.ram + tol
                and self.storage <= other.storage + tol)

    def is_nonnegative(self, tol: float = 0.0) -> bool:
        return min(self.cpu, self.ram, self.storage) >= -tol


@dataclass(frozen=True)
class NodeSpec:
    id: str
    capacity: ResourceVector
    p_max: float
    p_idle: float
    switch_power: float = SWITCH_POWER
    port_power_by_rate: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_PORT_POWER))
    connected_ports: int = 0


@dataclass(frozen=True)
class LinkSpec:
    id: str
    u: str
    v: str
    bandwidth: float
    rate_class: str
    prop_delay: float = 0.0
    power_weight: float = 0.0

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.u, self.v)

    @property
    def is_self(self) -> bool:
        return self.u == self.v


@dataclass(frozen=True)
class Topology:
    """Validated physical graph with precomputed link power weights and totals."""

    nodes: Mapping[str, NodeSpec]
    links: Mapping[str, LinkSpec]
    name: str = ""
    server_types: tuple = ()

    @property
    def node_ids(self) -> list[str]:
        return list(self.nodes)

    @property
    def link_ids(self) -> list[str]:
        return list(self.links)

    @property
    def n_total_power(self) -> float:
        return float(sum(n.p_max for n in self.nodes.values()))

    @property
    def s_total_power(self) -> float:
        return float(sum(l.power_weight for l in self.links.values()))

    @property
    def b_total(self) -> float:
        return float(sum(l.bandwidth for l in self.links.values()))

    def self_link(self, node: str) -> LinkSpec | None:
        for link in self.links.values():
            if link.u == node and link.v == node:
                return link
        return None

    def incident_links(self, node: str) -> list[LinkSpec]:
        return [l for l in self.links.values() if node in (l.u, l.v)]

    def to_document(self) -> dict:
        nodes = [{
            "id": n.id, "cpu": n.capacity.cpu, "ram": n.capacity.ram,
            "storage": n.capacity.storage, "p_max": n.p_max, "p_idle": n.p_idle,
            "switch_power": n.switch_power, "port_power": dict(n.port_power_by_rate),
            "connected_ports": n.connected_ports,
        } for n in self.nodes.values()]
        links = [{
            "id": l.id, "u": l.u, "v": l.v, "bandwidth_mbps": l.bandwidth,
            "rate_class": l.rate_class, "prop_delay_ms": l.prop_delay,
        } for l in self.links.values()]
        return {"name": self.name, "nodes": nodes, "links": links}


def link_power_weight(link: LinkSpec, nodes: Mapping[str, NodeSpec]) -> float:
    """Cumulative switch power attributed to one link, in watts.

    An inter-switch link carries one port on each switch plus each switch's
    chassis power shared over its connected ports; a self-link carries one
    port and its switch's share.
    """
    try:
        a, b = nodes[link.u], nodes[link.v]
    except KeyError as exc:
        raise ValidationError(f"link {link.id!r}: unknown endpoint {exc.args[0]!r}") from None
    for node in (a, b):
        if node.connected_ports < 1:
            raise ValidationError(f"link {link.id!r}: node {node.id!r} has no connected ports")
    port_a = _port_power(a, link)
    if link.is_self:
        return port_a + a.switch_power / a.connected_ports
    port_b = _port_power(b, link)
    return (port_a + port_b + a.switch_power / a.connected_ports
            + b.switch_power / b.connected_ports)


def _port_power(node: NodeSpec, link: LinkSpec) -> float:
    try:
        return float(node.port_power_by_rate[link.rate_class])
    except KeyError:
        raise ValidationError(
            f"node {node.id!r} has no port power for rate class {link.rate_class!r}") from None


# -- loading ---------------------------------------------------------------

def _num(entry: dict, key: str, where: str, default=None) -> float:
    if key not in entry:
        if default is None:
            raise ValidationError(f"{where}: missing field {key!r}")
        return float(default)
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: field {key!r} must be a number")
    if not math.isfinite(value):
        raise ValidationError(f"{where}: field {key!r} must be finite")
    return float(value)


def _build(document: dict) -> Topology:
    if not isinstance(document, dict):
        raise ValidationError("topology document must be an object")
    raw_nodes = document.get("nodes")
    raw_links = document.get("links", [])
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ValidationError("topology document needs a non-empty 'nodes' list")
    if not isinstance(raw_links, list):
        raise ValidationError("'links' must be a list")

    seen: dict[str, dict] = {}
    for i, entry in enumerate(raw_nodes):
        if not isinstance(entry, dict) or "id" not in entry:
            raise ValidationError(f"nodes[{i}]: expected an object with an 'id'")
        nid = str(entry["id"])
        if nid in seen:
            raise ValidationError(f"duplicate node id {nid!r}")
        seen[nid] = entry

    links: list[LinkSpec] = []
    link_ids: set[str] = set()
    pairs: set[frozenset] = set()
    for i, entry in enumerate(raw_links):
        where = f"links[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{where}: expected an object")
        lid = str(entry.get("id", f"l{i}"))
        if lid in link_ids:
            raise ValidationError(f"duplicate link id {lid!r}")
        u, v = str(entry.get("u")), str(entry.get("v"))
        for end in (u, v):
            if end not in seen:
                raise ValidationError(f"{where} ({lid}): unknown endpoint {end!r}")
        pair = frozenset((u, v))
        if pair in pairs:
            raise ValidationError(f"{where} ({lid}): parallel link between {u!r} and {v!r}")
        bandwidth = _num(entry, "bandwidth_mbps", where,
                         LOCAL_LINK_MBPS if u == v else INTER_SWITCH_MBPS)
        if bandwidth <= 0:
            raise ValidationError(f"{where} ({lid}): bandwidth must be positive")
        delay = _num(entry, "prop_delay_ms", where, 0.0 if u == v else None)
        if delay < 0:
            raise ValidationError(f"{where} ({lid}): negative propagation delay")
        rate = str(entry.get("rate_class", "40G" if u == v else "10G"))
        pairs.add(pair)
        link_ids.add(lid)
        links.append(LinkSpec(lid, u, v, bandwidth, rate, delay))

    nodes: dict[str, NodeSpec] = {}
    for nid, entry in seen.items():
        where = f"node {nid!r}"
        cap = ResourceVector(_num(entry, "cpu", where), _num(entry, "ram", where),
                             _num(entry, "storage", where))
        if not cap.is_nonnegative():
            raise ValidationError(f"{where}: negative capacity")
        p_max = _num(entry, "p_max", where)
        p_idle = _num(entry, "p_idle", where)
        if not p_max >= p_idle >= 0:
            raise ValidationError(f"{where}: need p_max >= p_idle >= 0")
        switch = _num(entry, "switch_power", where, SWITCH_POWER)
        ports = entry.get("port_power", dict(DEFAULT_PORT_POWER))
        if not isinstance(ports, dict) or any(
                not isinstance(w, (int, float)) or w < 0 for w in ports.values()):
            raise ValidationError(f"{where}: port_power must map rate class to watts")
        if switch < 0:
            raise ValidationError(f"{where}: negative switch power")
        incident = [l for l in links if nid in (l.u, l.v)]
        if "connected_ports" in entry:
            connected = int(entry["connected_ports"])
        else:
            connected = sum(1 for l in incident if not l.is_self)
            if incident:
                connected = max(connected, 1)
        if incident and connected < 1:
            raise ValidationError(f"{where}: connected_ports must be >= 1")
        nodes[nid] = NodeSpec(nid, cap, p_max, p_idle, switch,
                              MappingProxyType({str(k): float(w) for k, w in ports.items()}),
                              connected)

    weighted = {l.id: LinkSpec(l.id, l.u, l.v, l.bandwidth, l.rate_class, l.prop_delay,
                               link_power_weight(l, nodes)) for l in links}
    return Topology(MappingProxyType(nodes), MappingProxyType(weighted),
                    str(document.get("name", "")), tuple(document.get("server_types", ())))


def _builtin_document(name: str, seed: int) -> dict:
    raw = json.loads(resources.files("robust_slicing").joinpath("data/abilene.json").read_text())
    keep = None
    if name == "abilene-half":
        keep = {"STTLng", "SNVAng", "LOSAng", "DNVRng", "KSCYng", "HSTNng"}
    rng = np.random.default_rng(seed)
    nodes, types = [], []
    for entry in raw["nodes"]:
        if keep is not None and entry["id"] not in keep:
            continue
        kind = int(rng.integers(len(SERVER_TYPES)))
        cpu, ram, storage, p_max, p_idle = SERVER_TYPES[kind]
        types.append(kind + 1)
        nodes.append({"id": entry["id"], "cpu": cpu, "ram": ram, "storage": storage,
                      "p_max": p_max, "p_idle": p_idle, "switch_power": SWITCH_POWER,
                      "port_power": dict(DEFAULT_PORT_POWER)})
    ids = {n["id"] for n in nodes}
    links = [{"id": l["id"], "u": l["u"], "v": l["v"], "bandwidth_mbps": INTER_SWITCH_MBPS,
              "rate_class": "10G", "prop_delay_ms": l["prop_delay_ms"]}
             for l in raw["links"] if l["u"] in ids and l["v"] in ids]
    links += [{"id": f"{nid}-self", "u": nid, "v": nid, "bandwidth_mbps": LOCAL_LINK_MBPS,
               "rate_class": "40G", "prop_delay_ms": 0.0} for nid in (n["id"] for n in nodes)]
    return {"name": name, "nodes": nodes, "links": links, "server_types": types}


BUILTIN_TOPOLOGIES = ("abilene", "abilene-half")


def load_topology(document, seed: int = 0) -> Topology:
    """Load and validate a topology.

    ``document`` may be a parsed dict, a JSON string, a path to a JSON file, or
    one of the built-in names ``"abilene"`` (12 nodes, 15 inter-switch links
    plus 12 self-links) and ``"abilene-half"`` (its 6-node western half).
    Built-in instances draw each node's server type at random from ``seed``.
    """
    if isinstance(document, str) and document in BUILTIN_TOPOLOGIES:
        return _build(_builtin_document(document, seed))
    if isinstance(document, FsPath) or (isinstance(document, str)
                                        and not document.lstrip().startswith("{")):
        path = FsPath(document)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc.strerror}") from None
        document = text
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
    return _build(document)


# -- paths -----------------------------------------------------------------

@dataclass(frozen=True)
class Path:
    """Loopless physical path: ordered nodes, ordered link ids, total delay."""

    nodes: tuple[str, ...]
    links: tuple[str, ...]
    delay: float

    @property
    def hops(self) -> int:
        return len(self.links)

    def uses(self, link_id: str) -> bool:
        return link_id in self.links

    def sort_key(self):
        return (self.delay, len(self.links), self.links)


def path_delay(path, topology: Topology) -> float:
    """Sum of propagation delays (ms) over a path's links."""
    links = path.links if isinstance(path, Path) else path
    total = 0.0
    for lid in links:
        try:
            total += topology.links[lid].prop_delay
        except KeyError:
            raise ValidationError(f"unknown link id {lid!r}") from None
    return total


@dataclass(frozen=True)
class PathTable:
    """Candidate paths for every ordered node pair, sorted by delay."""

    k: int
    paths: Mapping[tuple[str, str], tuple[Path, ...]]

    def get(self, n: str, n2: str) -> tuple[Path, ...]:
        return self.paths.get((n, n2), ())

    def __getitem__(self, pair):
        return self.get(*pair)


def enumerate_paths(topology: Topology, k: int = 5) -> PathTable:
    """k shortest loopless paths by propagation delay for every ordered pair.

    Ties are broken by hop count, then by the tuple of link ids. A pair (n, n)
    gets its self-link as the single candidate when one exists.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    graph = nx.Graph()
    graph.add_nodes_from(topology.nodes)
    edge_link: dict[frozenset, str] = {}
    for link in topology.links.values():
        if not link.is_self:
            graph.add_edge(link.u, link.v, delay=link.prop_delay)
            edge_link[frozenset((link.u, link.v))] = link.id

    table: dict[tuple[str, str], tuple[Path, ...]] = {}
    for n in topology.nodes:
        own = topology.self_link(n)
        table[(n, n)] = (Path((n,), (own.id,), own.prop_delay),) if own else ()
        for n2 in topology.nodes:
            if n2 == n:
                continue
            table[(n, n2)] = tuple(_k_shortest(graph, edge_link, topology, n, n2, k))
    return PathTable(k, MappingProxyType(table))


def _k_shortest(graph, edge_link, topology, src, dst, k):
    if not nx.has_path(graph, src, dst):
        return []
    found: list[Path] = []
    cutoff = math.inf
    for nodes in nx.shortest_simple_paths(graph, src, dst, weight="delay"):
        links = tuple(edge_link[frozenset(e)] for e in zip(nodes, nodes[1:]))
        path = Path(tuple(nodes), links, path_delay(links, topology))
        # generator is delay-ordered; keep going only while ties with the k-th remain
        if path.delay > cutoff + 1e-9:
            break
        found.append(path)
        if len(found) == k:
            cutoff = max(p.delay for p in found)
    found.sort(key=Path.sort_key)
    return found[:k]
