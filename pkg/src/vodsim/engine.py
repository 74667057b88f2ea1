"""Deterministic discrete-event core.

One root seed is split into independent streams: one for the topology
draw, one for the catalog, and two per proxy (arrival times, video
choices), so adding a proxy never perturbs the streams of the others.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import IntEnum

import numpy as np

from .baselines import make_policy
from .cache import CacheLayer
from .catalog import Catalog, PopularityModel, PopularityWindow, build_catalog
from .config import SimConfig
from .errors import ConfigError, SimulationAbort
from .rppcl import (
    SERVED_TIERS,
    SHARED_TIERS,
    Policy,
    Request,
    ServicePlan,
    SystemState,
    Tier,
    continuity_violated,
    wan_minutes,
)
from .topology import DelayTable, LegKind, Node, Topology, build_topology

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_TOPOLOGY_STREAM = 0
_CATALOG_STREAM = 1
_PROXY_STREAM = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def proxy_arrivals(
    rate_per_hour: float, horizon_h: float, seed: int, proxy: Node, popularity: PopularityModel
) -> tuple[np.ndarray, np.ndarray]:
    """Arrival times (seconds) and video ids for one proxy's Poisson stream."""
    if rate_per_hour < 0:
        raise ConfigError("arrival rate must be >= 0", key="arrival_rate_per_hour")
    horizon_s = horizon_h * 3600.0
    if rate_per_hour == 0 or horizon_s <= 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    time_rng = substream(seed, _PROXY_STREAM, proxy.tracker, proxy.index, 0)
    video_rng = substream(seed, _PROXY_STREAM, proxy.tracker, proxy.index, 1)
    mean_gap = 3600.0 / rate_per_hour
    expected = rate_per_hour * horizon_h
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    times = np.cumsum(time_rng.exponential(mean_gap, chunk))
    while times[-1] < horizon_s:
        more = np.cumsum(time_rng.exponential(mean_gap, chunk)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times < horizon_s]
    videos = popularity.sample(video_rng, len(times))
    return times, videos


def generate_arrivals(
    rate_per_hour: float,
    horizon_h: float,
    seed: int,
    proxies: list[Node],
    popularity: PopularityModel,
) -> list[Request]:
    """Merged arrivals of every proxy, numbered in time order."""
    parts = []
    for order, proxy in enumerate(proxies):
        times, videos = proxy_arrivals(rate_per_hour, horizon_h, seed, proxy, popularity)
        parts.extend((t, order, v) for t, v in zip(times.tolist(), videos.tolist()))
    parts.sort()
    return [Request(i, v, proxies[o], t) for i, (t, o, v) in enumerate(parts)]


class EventKind(IntEnum):
    ARRIVAL = 0
    SESSION_END = 1
    REPLAN = 2
    QUEUE_TIMEOUT = 3


@dataclass(order=True)
class Event:
    time: float
    tiebreak: int
    kind: EventKind = field(compare=False)
    payload: object = field(compare=False, default=None)


@dataclass
class Session:
    request_id: int
    video: int
    origin: Node
    plan: ServicePlan
    start: float
    end: float
    edges: tuple
    source: Node | None


@dataclass(frozen=True)
class RequestRecord:
    id: int
    arrival_s: float
    video: int
    origin: Node
    tier: Tier
    wait_s: float
    wan_minutes: float
    continuity_violation: bool
    refused: int = 0


@dataclass
class SimulationResult:
    config: SimConfig
    policy: str
    simplified: bool
    records: list[RequestRecord]
    queue_log: list[tuple[float, int]]
    mms_delay_s: float
    events: int
    trace: list[str] | None = None


@dataclass
class MetricsReport:
    policy: str
    simplified: bool
    seed: int
    horizon_h: float
    warmup_h: float
    total_requests: int = 0
    tier_counts: dict = field(default_factory=lambda: {t.value: 0 for t in SERVED_TIERS})
    rejected: int = 0
    vhr: float = 0.0
    mean_wait_s: float = 0.0
    wait_by_tier: dict = field(default_factory=lambda: {t.value: 0.0 for t in SERVED_TIERS})
    max_queue_len: int = 0
    wan_minutes: float = 0.0
    continuity_violations: int = 0
    refused_allocations: int = 0
    mms_delay_s: float = 0.0

    @property
    def served(self) -> int:
        return self.total_requests - self.rejected

    def fraction(self, *tiers: Tier) -> float:
        if not self.served:
            return 0.0
        return sum(self.tier_counts[t.value] for t in tiers) / self.served

    def flat(self) -> dict[str, float]:
        """Scalar metrics in a fixed order, for tables and aggregation."""
        out = {
            "total_requests": self.total_requests,
            "local_hit": self.tier_counts[Tier.LOCAL_HIT.value],
            "neighbor_proxy": self.tier_counts[Tier.NEIGHBOR_PROXY.value],
            "group_proxy": self.tier_counts[Tier.GROUP_PROXY.value],
            "neighbor_lpsg": self.tier_counts[Tier.NEIGHBOR_LPSG.value],
            "mms_fetch": self.tier_counts[Tier.MMS_FETCH.value],
            "rejected": self.rejected,
            "local_frac": self.fraction(Tier.LOCAL_HIT),
            "shared_frac": self.fraction(*SHARED_TIERS),
            "mms_frac": self.fraction(Tier.MMS_FETCH),
            "vhr": self.vhr,
            "mean_wait_s": self.mean_wait_s,
            "max_queue_len": self.max_queue_len,
            "wan_minutes": self.wan_minutes,
            "continuity_violations": self.continuity_violations,
            "refused_allocations": self.refused_allocations,
        }
        return out

    def to_dict(self) -> dict:
        data = asdict(self)
        data["schema_version"] = SCHEMA_VERSION
        return _round_floats(data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _round_floats(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def build_state(cfg: SimConfig) -> SystemState:
    topo_rng = substream(cfg.seed, _TOPOLOGY_STREAM)
    mms_delay = float(topo_rng.uniform(cfg.mms_delay_min_s, cfg.mms_delay_max_s))
    if cfg.mms_delay_max_s == cfg.mms_delay_min_s:
        mms_delay = float(cfg.mms_delay_min_s)
    delays = DelayTable(
        cfg.proxy_to_user_s, cfg.proxy_to_proxy_s, cfg.tracker_to_proxy_s, cfg.tracker_to_tracker_s, mms_delay
    )
    capacities = {
        LegKind.MMS_TRACKER: cfg.capacity_mms_tracker,
        LegKind.TRACKER_TRACKER: cfg.capacity_tracker_tracker,
        LegKind.TRACKER_PROXY: cfg.capacity_tracker_proxy,
        LegKind.PROXY_PROXY: cfg.capacity_proxy_proxy,
        LegKind.PROXY_USER: cfg.capacity_proxy_user,
    }
    topo = build_topology(cfg.n_trackers, cfg.proxies_per_tracker, cfg.clients_per_proxy, delays, capacities)
    catalog = build_catalog(
        cfg.n_videos,
        cfg.zipf_skew,
        (cfg.duration_min_min, cfg.duration_max_min),
        substream(cfg.seed, _CATALOG_STREAM),
        cfg.clamp,
        cfg.k,
    )
    caches = CacheLayer(topo, cfg.proxy_blocks, cfg.tracker_blocks)
    windows = {t: PopularityWindow(cfg.popularity_window_min, cfg.n_videos) for t in topo.trackers}
    return SystemState(topo, catalog, caches, windows, cfg.clamp, proxy_stream_slots=cfg.proxy_stream_slots)


class Simulation:
    def __init__(self, cfg: SimConfig, policy: Policy | str | None = None, *, debug=False, trace=False):
        self.cfg = cfg
        if policy is None or isinstance(policy, str):
            policy = make_policy(policy or cfg.policy, k=cfg.k, l_replicas=cfg.l_replicas)
        self.policy = policy
        self.debug = debug
        self.state = build_state(cfg)
        self.trace: list[str] | None = [] if trace else None
        self._heap: list[Event] = []
        self._seq = 0
        self._queue: deque[tuple[Request, float]] = deque()
        self._queued_ids: set[int] = set()
        self.records: list[RequestRecord] = []
        self.queue_log: list[tuple[float, int]] = [(0.0, 0)]
        self.events = 0
        self._touched_edges: set = set()

    @property
    def topology(self) -> Topology:
        return self.state.topology

    @property
    def catalog(self) -> Catalog:
        return self.state.catalog

    def push(self, time: float, kind: EventKind, payload=None) -> None:
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def run(self) -> SimulationResult:
        cfg = self.cfg
        horizon_s = cfg.horizon_h * 3600.0
        arrivals = generate_arrivals(
            cfg.arrival_rate_per_hour,
            cfg.horizon_h,
            cfg.seed,
            self.topology.all_proxies,
            self.catalog.popularity,
        )
        for req in arrivals:
            self.push(req.arrival_time, EventKind.ARRIVAL, req)
        step = cfg.replan_interval_min * 60.0
        m = 1
        while m * step < horizon_s:
            self.push(m * step, EventKind.REPLAN)
            m += 1

        self.state.now_s = 0.0
        self.policy.setup(self.state)
        self._check(-1, 0.0)
        while self._heap:
            ev = Event(*heapq.heappop(self._heap))
            self.state.now_s = ev.time
            if ev.kind is EventKind.ARRIVAL:
                self._on_arrival(ev.payload)
            elif ev.kind is EventKind.SESSION_END:
                self._on_session_end(ev.payload)
            elif ev.kind is EventKind.REPLAN:
                self._on_replan()
            else:
                self._on_queue_timeout(ev.payload)
            self._check(self.events, ev.time)
            self.events += 1

        return SimulationResult(
            cfg,
            self.policy.name,
            self.policy.simplified,
            sorted(self.records, key=lambda r: r.id),
            self.queue_log,
            self.topology.delays.mms_to_tracker_s,
            self.events,
            self.trace,
        )

    # ------------------------------------------------------------ events

    def _on_arrival(self, req: Request) -> None:
        own = self.topology.tracker_of(req.origin_proxy)
        self.state.windows[own].record(req.video, req.arrival_time / 60.0, req.origin_proxy)
        if not self._try_serve(req, req.arrival_time):
            if self.cfg.queue_patience_s > 0:
                self._queue.append((req, req.arrival_time))
                self._queued_ids.add(req.id)
                self._log_queue()
                self.push(req.arrival_time + self.cfg.queue_patience_s, EventKind.QUEUE_TIMEOUT, req)
            else:
                self._record_rejected(req)

    def _try_serve(self, req: Request, arrived: float) -> bool:
        plan = self.policy.resolve(req, self.state)
        if plan.tier is Tier.REJECTED:
            return False
        now = self.state.now_s
        queued = now - arrived
        wait = queued + plan.waiting_time_s
        refused = 0
        if plan.tier is Tier.MMS_FETCH:
            refused = sum(not res.placed for _, res in self.policy.on_mms_fetch(req, self.state))
        start = now + plan.waiting_time_s
        end = start + self.catalog[req.video].duration_min * 60.0
        edges = tuple(plan.edges)
        for e in edges:
            self.topology.links[e].in_use += 1
        self._touched_edges.update(edges)
        source = plan.first_source
        if source is not None and source.role == "proxy":
            self.state.proxy_load[source] += 1
        self.push(end, EventKind.SESSION_END, Session(req.id, req.video, req.origin_proxy, plan, start, end, edges, source))
        self.records.append(
            RequestRecord(
                req.id,
                req.arrival_time,
                req.video,
                req.origin_proxy,
                plan.tier,
                wait,
                wan_minutes(plan),
                continuity_violated(plan, self.topology),
                refused,
            )
        )
        self._emit(now, "arrival", req.video, req.origin_proxy, plan.tier.value, wait)
        return True

    def _record_rejected(self, req: Request) -> None:
        self.records.append(
            RequestRecord(req.id, req.arrival_time, req.video, req.origin_proxy, Tier.REJECTED, 0.0, 0.0, False)
        )
        self._emit(self.state.now_s, "arrival", req.video, req.origin_proxy, Tier.REJECTED.value, 0.0)

    def _on_session_end(self, session: Session) -> None:
        for e in session.edges:
            self.topology.links[e].in_use -= 1
        self._touched_edges.update(session.edges)
        if session.source is not None and session.source.role == "proxy":
            self.state.proxy_load[session.source] -= 1
        self._emit(self.state.now_s, "session_end", session.video, session.origin, "-", None)
        if self._queue:
            waiting = list(self._queue)
            self._queue.clear()
            for req, arrived in waiting:
                if self._try_serve(req, arrived):
                    self._queued_ids.discard(req.id)
                else:
                    self._queue.append((req, arrived))
            self._log_queue()

    def _on_queue_timeout(self, req: Request) -> None:
        if req.id not in self._queued_ids:
            return
        self._queued_ids.discard(req.id)
        self._queue = deque(item for item in self._queue if item[0].id != req.id)
        self._log_queue()
        self._record_rejected(req)

    def _on_replan(self) -> None:
        now_min = self.state.now_min
        for window in self.state.windows.values():
            window.prune(now_min)
        self.policy.replan(self.state)
        self._emit(self.state.now_s, "replan", "-", "-", "-", None)

    # ------------------------------------------------------------ bookkeeping

    def _log_queue(self) -> None:
        self.queue_log.append((self.state.now_s, len(self._queue)))

    def _emit(self, time, kind, video, origin, tier, wait) -> None:
        if self.trace is None:
            return
        wait_s = "-" if wait is None else f"{wait:.6f}"
        self.trace.append(f"{time:.6f}\t{kind}\t{video}\t{origin}\t{tier}\t{wait_s}")

    def _check(self, index: int, time: float) -> None:
        caches = self.state.caches
        if not self.debug:
            caches.dirty.clear()
            self._touched_edges.clear()
            return
        trackers = set()
        for node in caches.dirty:
            store = caches.store(node)
            if store.used_blocks > store.budget_blocks or store.used_blocks != sum(
                e.size_blocks for e in store.entries.values()
            ):
                raise SimulationAbort(f"cache budget violated at {node}", index, time)
            trackers.add(node if node.role == "tracker" else self.topology.tracker_of(node))
        for tracker in trackers:
            if not caches.audit(tracker):
                raise SimulationAbort(f"directory of {tracker} out of sync", index, time)
        for e in self._touched_edges:
            link = self.topology.links[e]
            if not 0 <= link.in_use <= link.capacity_streams:
                raise SimulationAbort(f"link {e[0]}-{e[1]} holds {link.in_use} streams", index, time)
        for proxy, load in self.state.proxy_load.items():
            if load < 0:
                raise SimulationAbort(f"negative stream load at {proxy}", index, time)
        caches.dirty.clear()
        self._touched_edges.clear()


def simulate(cfg: SimConfig, policy: Policy | str | None = None, *, debug=False, trace=False) -> SimulationResult:
    return Simulation(cfg, policy, debug=debug, trace=trace).run()


def warmup_split(result: SimulationResult, warmup_h: float | None = None) -> MetricsReport:
    """Aggregate the records of requests arriving at or after ``warmup_h``."""
    cfg = result.config
    warmup_h = cfg.warmup_h if warmup_h is None else warmup_h
    if warmup_h < 0 or (warmup_h > 0 and warmup_h >= cfg.horizon_h):
        raise ConfigError("warmup must be shorter than the horizon", key="warmup_h")
    cutoff = warmup_h * 3600.0
    report = MetricsReport(result.policy, result.simplified, cfg.seed, cfg.horizon_h, warmup_h)
    report.mms_delay_s = result.mms_delay_s
    wait_sum = {t.value: 0.0 for t in SERVED_TIERS}
    for rec in result.records:
        if rec.arrival_s < cutoff:
            continue
        report.total_requests += 1
        report.refused_allocations += rec.refused
        if rec.tier is Tier.REJECTED:
            report.rejected += 1
            continue
        report.tier_counts[rec.tier.value] += 1
        wait_sum[rec.tier.value] += rec.wait_s
        report.wan_minutes += rec.wan_minutes
        report.continuity_violations += rec.continuity_violation
    served = report.served
    if served:
        report.vhr = 1.0 - report.tier_counts[Tier.MMS_FETCH.value] / served
        report.mean_wait_s = math.fsum(wait_sum.values()) / served
    for tier, total in wait_sum.items():
        n = report.tier_counts[tier]
        report.wait_by_tier[tier] = total / n if n else 0.0

    level = 0
    peak = None
    for t, qlen in result.queue_log:
        if t < cutoff:
            level = qlen
        else:
            peak = max(level if peak is None else peak, qlen)
    report.max_queue_len = level if peak is None else peak
    return report


def run(cfg: SimConfig, policy: Policy | str | None = None, *, debug=False) -> MetricsReport:
    return warmup_split(simulate(cfg, policy, debug=debug))
