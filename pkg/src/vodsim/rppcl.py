"""Request resolution for the regional-popularity prefix caching and load
sharing policy.

A request at proxy ``PS_q`` is resolved by the first matching tier:

1. prefix-1 cached at ``PS_q`` itself,
2. prefix-1 at a ring neighbour of ``PS_q``,
3. prefix-1 elsewhere in the group, fetched along the shortest ring path,
4. prefix-1 in the clockwise or counter-clockwise neighbouring group,
5. the whole video from the main server, after which prefix-1 and
   prefix-2 are offered to the origin proxy and its tracker.

Startup latency is the delivery delay of the first segment only.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np

from .cache import AllocationResult, CacheLayer, SegmentKind
from .catalog import (
    DEFAULT_CLAMP,
    Catalog,
    PopularityWindow,
    SizeTable,
    classify_and_place,
    default_k,
    popularity_or_fallback,
    size_prefixes,
    size_table,
)
from .errors import InvalidQueryError, InvalidRequestError
from .topology import MMS, Leg, LegKind, Node, Topology, path_delay, ring_path, user_node


class Tier(str, Enum):
    LOCAL_HIT = "LocalHit"
    NEIGHBOR_PROXY = "NeighborProxy"
    GROUP_PROXY = "GroupProxy"
    NEIGHBOR_LPSG = "NeighborLpsg"
    MMS_FETCH = "MmsFetch"
    REJECTED = "Rejected"


SERVED_TIERS = (Tier.LOCAL_HIT, Tier.NEIGHBOR_PROXY, Tier.GROUP_PROXY, Tier.NEIGHBOR_LPSG, Tier.MMS_FETCH)
SHARED_TIERS = (Tier.NEIGHBOR_PROXY, Tier.GROUP_PROXY, Tier.NEIGHBOR_LPSG)


@dataclass(frozen=True)
class Request:
    id: int
    video: int
    origin_proxy: Node
    arrival_time: float  # seconds


@dataclass(frozen=True)
class SegmentSource:
    segment: SegmentKind
    minutes: float
    source: Node
    legs: tuple[Leg, ...]


@dataclass(frozen=True)
class ServicePlan:
    tier: Tier
    segment_sources: tuple[SegmentSource, ...] = ()
    waiting_time_s: float = 0.0
    hops: int = 0

    @property
    def first_source(self) -> Node | None:
        return self.segment_sources[0].source if self.segment_sources else None

    @cached_property
    def edges(self) -> frozenset:
        out = set()
        for seg in self.segment_sources:
            for leg in seg.legs:
                out.update(leg.edges())
        return frozenset(out)


@dataclass
class SystemState:
    """Everything a resolver may read or mutate during one run."""

    topology: Topology
    catalog: Catalog
    caches: CacheLayer
    windows: dict[Node, PopularityWindow]  # one per tracker
    clamp: tuple[float, float] | None = DEFAULT_CLAMP
    now_s: float = 0.0
    proxy_load: Counter = field(default_factory=Counter)
    proxy_stream_slots: float = math.inf
    sizes: SizeTable | None = None
    scores: np.ndarray | None = None  # (groups, videos), last replan

    @property
    def now_min(self) -> float:
        return self.now_s / 60.0

    def group_x(self, tracker: Node) -> np.ndarray:
        x = self.windows[tracker].estimate_x(self.now_min)
        return popularity_or_fallback(x, self.catalog.popularity.pmf)

    def current_x(self, tracker: Node, video: int, node: Node | None = None) -> float:
        n_i, total = self.windows[tracker].count_of(video, self.now_min, node)
        if total == 0:
            return float(self.catalog.popularity.pmf[video - 1])
        return n_i / total


# ---------------------------------------------------------------- legs


def access_leg(proxy: Node) -> Leg:
    return Leg(LegKind.PROXY_USER, (proxy, user_node(proxy)))


def tracker_leg(tracker: Node, proxy: Node) -> Leg:
    return Leg(LegKind.TRACKER_PROXY, (tracker, proxy))


def mms_leg(tracker: Node) -> Leg:
    return Leg(LegKind.MMS_TRACKER, (MMS, tracker))


def from_mms(tracker: Node, origin: Node) -> tuple[Leg, ...]:
    return (mms_leg(tracker), tracker_leg(tracker, origin), access_leg(origin))


def waiting_time(tier: Tier | str, topology: Topology, hops: int = 1) -> float:
    """Closed-form startup delay of each tier."""
    d = topology.delays
    try:
        tier = Tier(tier)
    except ValueError:
        raise InvalidQueryError(f"unknown tier {tier!r}") from None
    if tier is Tier.LOCAL_HIT:
        return d.proxy_to_user_s
    if tier is Tier.NEIGHBOR_PROXY:
        return d.proxy_to_proxy_s + d.proxy_to_user_s
    if tier is Tier.GROUP_PROXY:
        if hops < 1:
            raise InvalidQueryError("group-proxy tier needs hops >= 1")
        return hops * d.proxy_to_proxy_s + d.proxy_to_user_s
    if tier is Tier.NEIGHBOR_LPSG:
        return d.tracker_to_tracker_s + d.tracker_to_proxy_s + d.proxy_to_user_s
    if tier is Tier.MMS_FETCH:
        return d.mms_to_tracker_s + d.tracker_to_proxy_s + d.proxy_to_user_s
    raise InvalidQueryError(f"tier {tier.value} has no waiting time")


def _prefix_tail(
    state: SystemState,
    video: int,
    origin: Node,
    pref1_min: float,
    pref2_holders: list[Node],
    pref2_legs: dict[Node, tuple[Leg, ...]],
) -> list[SegmentSource]:
    """Prefix-2 from the first tracker in ``pref2_holders`` that has it, then
    the suffix from the main server."""
    own = state.topology.tracker_of(origin)
    duration = state.catalog[video].duration_min
    out = []
    pref2_min = 0.0
    for tracker in pref2_holders:
        entry = state.caches.tracker_stores[tracker].get(video)
        if entry is not None:
            pref2_min = min(entry.size_blocks, max(duration - pref1_min, 0.0))
            if pref2_min > 0:
                out.append(SegmentSource(SegmentKind.PREF2, pref2_min, tracker, pref2_legs[tracker]))
            break
    suffix = duration - pref1_min - pref2_min
    if suffix > 0:
        out.append(SegmentSource(SegmentKind.SUFFIX, suffix, MMS, from_mms(own, origin)))
    return out


def _nearest_holder(ring: list[Node], origin: Node, holders) -> tuple[Node, int]:
    n = len(ring)
    pos = ring.index(origin)
    for d in range(1, n // 2 + 1):
        for step in (d, -d):
            cand = ring[(pos + step) % n]
            if cand in holders:
                return cand, d
    raise InvalidQueryError("no holder on ring")


def build_plan_from_proxy(state: SystemState, video: int, origin: Node, holder: Node) -> ServicePlan:
    """Serve prefix-1 from ``holder`` inside the origin's own group."""
    topo = state.topology
    own = topo.tracker_of(origin)
    entry = state.caches.proxy_stores[holder].get(video)
    if holder == origin:
        tier, hops, legs1 = Tier.LOCAL_HIT, 0, (access_leg(origin),)
    else:
        ring = topo.ring_of(origin)
        path = ring_path(ring, holder, origin)
        hops = len(path) - 1
        tier = Tier.NEIGHBOR_PROXY if holder in topo.ring_neighbors(origin) else Tier.GROUP_PROXY
        legs1 = (Leg(LegKind.PROXY_PROXY, path), access_leg(origin))
    pref1 = SegmentSource(SegmentKind.PREF1, entry.size_blocks, holder, legs1)
    tail = _prefix_tail(
        state, video, origin, entry.size_blocks, [own], {own: (tracker_leg(own, origin), access_leg(origin))}
    )
    return ServicePlan(tier, (pref1, *tail), path_delay(topo, legs1), hops)


def mms_plan(state: SystemState, video: int, origin: Node) -> ServicePlan:
    own = state.topology.tracker_of(origin)
    legs = from_mms(own, origin)
    seg = SegmentSource(SegmentKind.FULL, state.catalog[video].duration_min, MMS, legs)
    return ServicePlan(Tier.MMS_FETCH, (seg,), path_delay(state.topology, legs))


def has_capacity(state: SystemState, plan: ServicePlan) -> bool:
    links = state.topology.links
    return all(links[e].in_use < links[e].capacity_streams for e in plan.edges)


def resolve(req: Request, state: SystemState) -> ServicePlan:
    if req.video not in state.catalog:
        raise InvalidRequestError(f"video {req.video} is not in the catalog")
    plan = _cascade(req, state)
    if not has_capacity(state, plan):
        return ServicePlan(Tier.REJECTED)
    return plan


def _cascade(req: Request, state: SystemState) -> ServicePlan:
    topo = state.topology
    caches = state.caches
    video, origin = req.video, req.origin_proxy
    own = topo.tracker_of(origin)

    # tiers 1-3: own group, via the tracker directory
    holders = caches.holders(own, video)
    if origin in holders:
        return build_plan_from_proxy(state, video, origin, origin)
    if holders:
        holder, _ = _nearest_holder(topo.ring_of(origin), origin, holders)
        return build_plan_from_proxy(state, video, origin, holder)

    # tier 4: immediate neighbour groups, clockwise first
    for nbr in topo.neighbor_trackers(own):
        remote = caches.holders(nbr, video)
        if not remote:
            continue
        holder = min(remote)
        entry = caches.proxy_stores[holder].get(video)
        legs = (
            Leg(LegKind.TRACKER_TRACKER, (nbr, own)),
            tracker_leg(own, origin),
            access_leg(origin),
        )
        pref1 = SegmentSource(SegmentKind.PREF1, entry.size_blocks, holder, legs)
        own_legs = (tracker_leg(own, origin), access_leg(origin))
        tail = _prefix_tail(state, video, origin, entry.size_blocks, [nbr, own], {nbr: legs, own: own_legs})
        return ServicePlan(Tier.NEIGHBOR_LPSG, (pref1, *tail), path_delay(topo, legs))

    return mms_plan(state, video, origin)


def post_fetch_cache(req: Request, state: SystemState) -> list[tuple[Node, AllocationResult]]:
    """Offer prefix-1 to the origin proxy and prefix-2 to its tracker, sized
    from the group's current popularity estimate."""
    origin = req.origin_proxy
    own = state.topology.tracker_of(origin)
    x = state.current_x(own, req.video)
    w1, w2 = size_prefixes(state.catalog[req.video].duration_min, x, state.clamp)
    return [
        (origin, state.caches.place(origin, req.video, SegmentKind.PREF1, w1, x)),
        (own, state.caches.place(own, req.video, SegmentKind.PREF2, w2, x)),
    ]


def continuity_violated(plan: ServicePlan, topology: Topology) -> bool:
    """True when some later segment cannot arrive before playback reaches it."""
    if not plan.segment_sources:
        return False
    offset_s = 0.0
    for i, seg in enumerate(plan.segment_sources):
        if i and path_delay(topology, seg.legs) > plan.waiting_time_s + offset_s:
            return True
        offset_s += seg.minutes * 60.0
    return False


def wan_minutes(plan: ServicePlan) -> float:
    return sum(
        seg.minutes
        for seg in plan.segment_sources
        if any(leg.kind is LegKind.MMS_TRACKER for leg in seg.legs)
    )


# ---------------------------------------------------------------- policy


class Policy:
    """Hooks the engine calls; subclasses define one caching scheme."""

    name = "base"
    simplified = False

    def setup(self, state: SystemState) -> None:
        pass

    def replan(self, state: SystemState) -> None:
        pass

    def resolve(self, req: Request, state: SystemState) -> ServicePlan:
        raise NotImplementedError

    def on_mms_fetch(self, req: Request, state: SystemState) -> list[tuple[Node, AllocationResult]]:
        return []


class RppclPolicy(Policy):
    name = "rppcl"

    def __init__(self, k: int | None = None, l_replicas: int = 2):
        self.k = k
        self.l_replicas = l_replicas

    def setup(self, state: SystemState) -> None:
        self.replan(state)

    def replan(self, state: SystemState) -> None:
        topo = state.topology
        x = np.vstack([state.group_x(t) for t in topo.trackers])
        state.scores = x
        state.sizes = size_table(state.catalog.durations, x, state.clamp)
        for t in topo.trackers:
            g = t.tracker - 1
            state.caches.tracker_stores[t].rescore(by_index=x[g])
            for store in state.caches.group_stores(t):
                store.rescore(by_index=x[g])
        proxy_x = {}
        for t in topo.trackers:
            window = state.windows[t]
            for p in topo.proxies[t.tracker]:
                proxy_x[p] = window.counts(state.now_min, p)
        k = default_k(len(state.catalog)) if self.k is None else self.k
        classify_and_place(
            state.catalog, x, k, self.l_replicas, topo, state.caches, state.sizes, proxy_x
        )

    def resolve(self, req: Request, state: SystemState) -> ServicePlan:
        return resolve(req, state)

    def on_mms_fetch(self, req, state):
        return post_fetch_cache(req, state)
