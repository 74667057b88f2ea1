"""Simplified comparison policies.

Both are behavioural sketches of published load-sharing schemes, kept only
as reference points for the comparison reports:

* GWQ (simplified): whole videos are replicated at every proxy, most popular
  first, until the store is full. A busy origin hands the request to the
  least-loaded holder anywhere in the system. No caching on a miss.
* PRLS (simplified): each proxy caches prefix-1 of the videos requested at
  that proxy. No sharing between proxies and no tracker involvement.
"""

from __future__ import annotations

from enum import Enum

from .cache import SegmentKind
from .catalog import size_prefixes
from .errors import InvalidRequestError
from .rppcl import (
    Policy,
    Request,
    RppclPolicy,
    SegmentSource,
    ServicePlan,
    SystemState,
    Tier,
    access_leg,
    from_mms,
    has_capacity,
    mms_plan,
    tracker_leg,
)
from .topology import MMS, Leg, LegKind, Node, Topology, path_delay, ring_path


class PolicyKind(str, Enum):
    RPPCL = "rppcl"
    GWQ = "gwq"
    PRLS = "prls"


# ---------------------------------------------------------------- GWQ


def gwq_place(state: SystemState) -> None:
    pmf = state.catalog.popularity.pmf
    order = sorted(range(len(pmf)), key=lambda v: (-pmf[v], v))
    for proxy in state.topology.all_proxies:
        for v in order:
            video = v + 1
            size = int(state.catalog[video].duration_min)
            state.caches.place(proxy, video, SegmentKind.FULL, size, float(pmf[v]))


def remote_path(topology: Topology, holder: Node, origin: Node) -> tuple[Leg, ...]:
    """Delivery legs from ``holder`` to the clients of ``origin``."""
    if holder.tracker == origin.tracker:
        path = ring_path(topology.ring_of(origin), holder, origin)
        return (Leg(LegKind.PROXY_PROXY, path), access_leg(origin))
    src_tr = topology.tracker_of(holder)
    dst_tr = topology.tracker_of(origin)
    tr_path = ring_path(topology.trackers, src_tr, dst_tr)
    return (
        tracker_leg(src_tr, holder),
        Leg(LegKind.TRACKER_TRACKER, tr_path),
        tracker_leg(dst_tr, origin),
        access_leg(origin),
    )


def _gwq_tier(topology: Topology, holder: Node, origin: Node) -> Tier:
    if holder == origin:
        return Tier.LOCAL_HIT
    if holder.tracker != origin.tracker:
        return Tier.NEIGHBOR_LPSG
    if holder in topology.ring_neighbors(origin):
        return Tier.NEIGHBOR_PROXY
    return Tier.GROUP_PROXY


def gwq_resolve(req: Request, state: SystemState) -> ServicePlan:
    if req.video not in state.catalog:
        raise InvalidRequestError(f"video {req.video} is not in the catalog")
    topo = state.topology
    origin = req.origin_proxy
    slots = state.proxy_stream_slots
    holders = set()
    for t in topo.trackers:
        holders |= state.caches.holders(t, req.video)

    if origin in holders and state.proxy_load[origin] < slots:
        holder = origin
    else:
        idle = [h for h in holders if h != origin and state.proxy_load[h] < slots]
        holder = min(idle, key=lambda h: (state.proxy_load[h], h)) if idle else None

    if holder is None:
        plan = mms_plan(state, req.video, origin)
    else:
        legs = remote_path(topo, holder, origin) if holder != origin else (access_leg(origin),)
        entry = state.caches.proxy_stores[holder].get(req.video)
        seg = SegmentSource(SegmentKind.FULL, entry.size_blocks, holder, legs)
        hops = legs[0].hops if holder.tracker == origin.tracker and holder != origin else 0
        plan = ServicePlan(_gwq_tier(topo, holder, origin), (seg,), path_delay(topo, legs), hops)
    if not has_capacity(state, plan):
        return ServicePlan(Tier.REJECTED)
    return plan


class GwqPolicy(Policy):
    name = "gwq"
    simplified = True

    def setup(self, state):
        gwq_place(state)

    def resolve(self, req, state):
        return gwq_resolve(req, state)


# ---------------------------------------------------------------- PRLS


def prls_resolve(req: Request, state: SystemState) -> ServicePlan:
    if req.video not in state.catalog:
        raise InvalidRequestError(f"video {req.video} is not in the catalog")
    origin = req.origin_proxy
    entry = state.caches.proxy_stores[origin].get(req.video)
    if entry is None:
        plan = mms_plan(state, req.video, origin)
    else:
        own = state.topology.tracker_of(origin)
        legs = (access_leg(origin),)
        segs = [SegmentSource(SegmentKind.PREF1, entry.size_blocks, origin, legs)]
        rest = state.catalog[req.video].duration_min - entry.size_blocks
        if rest > 0:
            segs.append(SegmentSource(SegmentKind.SUFFIX, rest, MMS, from_mms(own, origin)))
        plan = ServicePlan(Tier.LOCAL_HIT, tuple(segs), path_delay(state.topology, legs))
    if not has_capacity(state, plan):
        return ServicePlan(Tier.REJECTED)
    return plan


def prls_post_fetch(req: Request, state: SystemState):
    origin = req.origin_proxy
    own = state.topology.tracker_of(origin)
    x = state.current_x(own, req.video, node=origin)
    w1, _ = size_prefixes(state.catalog[req.video].duration_min, x, state.clamp)
    return [(origin, state.caches.place(origin, req.video, SegmentKind.PREF1, w1, x))]


class PrlsPolicy(Policy):
    name = "prls"
    simplified = True

    def replan(self, state):
        now = state.now_min
        for t in state.topology.trackers:
            window = state.windows[t]
            for p in state.topology.proxies[t.tracker]:
                counts = window.counts(now, p)
                total = counts.sum()
                x = counts / total if total else counts.astype(float)
                state.caches.proxy_stores[p].rescore(by_index=x)

    def resolve(self, req, state):
        return prls_resolve(req, state)

    def on_mms_fetch(self, req, state):
        return prls_post_fetch(req, state)


def make_policy(kind: PolicyKind | str, **knobs) -> Policy:
    kind = PolicyKind(kind)
    if kind is PolicyKind.RPPCL:
        return RppclPolicy(knobs.get("k"), knobs.get("l_replicas", 2))
    if kind is PolicyKind.GWQ:
        return GwqPolicy()
    return PrlsPolicy()
