"""Three-tier delivery graph: one main server, a ring of trackers, and one
ring of proxies behind each tracker.

Node numbering is deterministic. Trackers are ``1..J`` clockwise and the
proxies of tracker ``t`` are ``(t, 1)..(t, M/J)`` clockwise. Clients are not
nodes; each proxy owns a pseudo ``user`` endpoint standing for its client
population so that the access link can be accounted like any other link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

from .errors import ConfigError, InvalidQueryError


class Node(NamedTuple):
    role: str  # "mms" | "tracker" | "proxy" | "user"
    tracker: int = 0
    index: int = 0

    def __str__(self) -> str:
        if self.role == "mms":
            return "mms"
        if self.role == "tracker":
            return f"tr{self.tracker}"
        prefix = "ps" if self.role == "proxy" else "user"
        return f"{prefix}{self.tracker}.{self.index}"


MMS = Node("mms")


def tracker_node(t: int) -> Node:
    return Node("tracker", t, 0)


def proxy_node(t: int, i: int) -> Node:
    return Node("proxy", t, i)


def user_node(proxy: Node) -> Node:
    return Node("user", proxy.tracker, proxy.index)


class LegKind(str, Enum):
    PROXY_USER = "proxy_user"
    PROXY_PROXY = "proxy_proxy"
    TRACKER_PROXY = "tracker_proxy"
    TRACKER_TRACKER = "tracker_tracker"
    MMS_TRACKER = "mms_tracker"


class Leg(NamedTuple):
    """One delivery leg. ``nodes`` is the traversed path, so a proxy ring leg
    spanning h hops carries h + 1 nodes."""

    kind: LegKind
    nodes: tuple[Node, ...]

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def edges(self) -> list[tuple[Node, Node]]:
        return [edge_key(a, b) for a, b in zip(self.nodes, self.nodes[1:])]


def edge_key(a: Node, b: Node) -> tuple[Node, Node]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class DelayTable:
    """Per-hop transmission delays in seconds."""

    proxy_to_user_s: float = 120.0
    proxy_to_proxy_s: float = 120.0
    tracker_to_proxy_s: float = 120.0
    tracker_to_tracker_s: float = 240.0
    mms_to_tracker_s: float = 480.0

    def __post_init__(self):
        for name, value in list(self.__dict__.items()):
            if not value > 0:
                raise ConfigError("delay must be > 0", key=name)
        table = {
            LegKind.PROXY_USER: self.proxy_to_user_s,
            LegKind.PROXY_PROXY: self.proxy_to_proxy_s,
            LegKind.TRACKER_PROXY: self.tracker_to_proxy_s,
            LegKind.TRACKER_TRACKER: self.tracker_to_tracker_s,
            LegKind.MMS_TRACKER: self.mms_to_tracker_s,
        }
        object.__setattr__(self, "_table", table)

    def per_hop(self, kind: LegKind) -> float:
        try:
            return self._table[kind]
        except (KeyError, TypeError):
            raise InvalidQueryError(f"unknown leg class {kind!r}") from None


@dataclass
class Link:
    endpoints: tuple[Node, Node]
    kind: LegKind
    capacity_streams: float = math.inf
    in_use: int = 0

    @property
    def free(self) -> float:
        return self.capacity_streams - self.in_use


@dataclass
class Topology:
    mms: Node
    trackers: list[Node]
    proxies: dict[int, list[Node]]
    clients_per_proxy: int
    delays: DelayTable
    links: dict[tuple[Node, Node], Link] = field(default_factory=dict)

    @property
    def n_trackers(self) -> int:
        return len(self.trackers)

    @property
    def all_proxies(self) -> list[Node]:
        return [p for t in self.trackers for p in self.proxies[t.tracker]]

    @property
    def n_clients(self) -> int:
        return self.clients_per_proxy * len(self.all_proxies)

    def ring_of(self, node: Node) -> list[Node]:
        if node.role == "tracker":
            return self.trackers
        if node.role == "proxy":
            return self.proxies[node.tracker]
        raise InvalidQueryError(f"{node} is not on a ring")

    def tracker_of(self, proxy: Node) -> Node:
        return self.trackers[proxy.tracker - 1]

    def ring_neighbors(self, node: Node) -> list[Node]:
        """Distinct ring neighbours, clockwise one first."""
        ring = self.ring_of(node)
        n = len(ring)
        pos = ring.index(node)
        out = []
        for step in (1, -1):
            other = ring[(pos + step) % n]
            if other != node and other not in out:
                out.append(other)
        return out

    def neighbor_trackers(self, tracker: Node) -> list[Node]:
        return self.ring_neighbors(tracker)

    def link(self, a: Node, b: Node) -> Link:
        try:
            return self.links[edge_key(a, b)]
        except KeyError:
            raise InvalidQueryError(f"no link between {a} and {b}") from None


def build_topology(
    n_trackers: int,
    proxies_per_tracker: int,
    clients_per_proxy: int,
    delays: DelayTable | None = None,
    capacities: dict[LegKind, float] | None = None,
) -> Topology:
    for key, value in (
        ("n_trackers", n_trackers),
        ("proxies_per_tracker", proxies_per_tracker),
        ("clients_per_proxy", clients_per_proxy),
    ):
        if int(value) != value or value < 1:
            raise ConfigError("count must be an integer >= 1", key=key)
    delays = delays or DelayTable()
    capacities = capacities or {}

    trackers = [tracker_node(t) for t in range(1, n_trackers + 1)]
    proxies = {
        t.tracker: [proxy_node(t.tracker, i) for i in range(1, proxies_per_tracker + 1)]
        for t in trackers
    }
    topo = Topology(MMS, trackers, proxies, clients_per_proxy, delays)

    def add(a: Node, b: Node, kind: LegKind) -> None:
        if a == b:
            return
        key = edge_key(a, b)
        if key not in topo.links:
            topo.links[key] = Link(key, kind, capacities.get(kind, math.inf))

    for a, b in _ring_pairs(trackers):
        add(a, b, LegKind.TRACKER_TRACKER)
    for t in trackers:
        add(MMS, t, LegKind.MMS_TRACKER)
        ring = proxies[t.tracker]
        for p in ring:
            add(t, p, LegKind.TRACKER_PROXY)
            add(p, user_node(p), LegKind.PROXY_USER)
        for a, b in _ring_pairs(ring):
            add(a, b, LegKind.PROXY_PROXY)
    return topo


def _ring_pairs(ring: Sequence[Node]) -> Iterable[tuple[Node, Node]]:
    n = len(ring)
    for i in range(n):
        yield ring[i], ring[(i + 1) % n]


def _positions(ring: Sequence[Node], a: Node, b: Node) -> tuple[int, int]:
    try:
        return ring.index(a), ring.index(b)
    except ValueError:
        raise InvalidQueryError(f"{a} and {b} are not on the same ring") from None


def ring_distance(ring: Sequence[Node], a: Node, b: Node) -> int:
    """Minimum hop count between two members of one ring."""
    ia, ib = _positions(ring, a, b)
    cw = (ib - ia) % len(ring)
    return min(cw, len(ring) - cw) if cw else 0


def ring_path(ring: Sequence[Node], a: Node, b: Node) -> tuple[Node, ...]:
    """Nodes along the minimum-hop path from ``a`` to ``b``; ties go clockwise."""
    ia, ib = _positions(ring, a, b)
    n = len(ring)
    cw = (ib - ia) % n
    step = 1 if cw <= n - cw else -1
    hops = min(cw, n - cw)
    return tuple(ring[(ia + step * h) % n] for h in range(hops + 1))


def path_delay(topology: Topology | DelayTable, legs: Iterable[Leg]) -> float:
    delays = topology.delays if isinstance(topology, Topology) else topology
    total = 0.0
    for leg in legs:
        total += delays.per_hop(leg.kind) * leg.hops
    return total
