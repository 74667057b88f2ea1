"""Video catalog, Zipf request popularity, sliding-window popularity
estimates, prefix sizing and initial/periodic placement.

Video ids run 1..N. Every per-video array in this module is indexed by
``id - 1``.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cache import CacheLayer, SegmentKind
from .errors import EmptyCatalogError, InvalidParameterError
from .topology import Node, Topology

DEFAULT_CLAMP = (0.04, 0.96)
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class Scope:
    """Global videos are replicated at every proxy; local ones live in the
    listed proxy groups (tracker numbers)."""

    is_global: bool
    groups: frozenset[int] = frozenset()

    @classmethod
    def global_(cls) -> "Scope":
        return cls(True)

    @classmethod
    def local(cls, groups: Iterable[int]) -> "Scope":
        return cls(False, frozenset(groups))


@dataclass(frozen=True)
class VideoEntry:
    id: int
    duration_min: float
    w1_min: int
    w2_min: int
    scope: Scope = Scope(False)

    def __post_init__(self):
        if not 0 < self.w1_min < self.duration_min:
            raise InvalidParameterError(f"video {self.id}: need 0 < w1 < duration")
        if not 0 < self.w2_min <= self.duration_min - self.w1_min:
            raise InvalidParameterError(f"video {self.id}: need 0 < w2 <= duration - w1")

    @property
    def suffix_min(self) -> float:
        return self.duration_min - self.w1_min - self.w2_min


@dataclass(frozen=True)
class PopularityModel:
    pmf: np.ndarray
    cdf: np.ndarray
    skew: float

    @property
    def n_videos(self) -> int:
        return len(self.pmf)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw video ids (1-based) by inverting the cdf."""
        u = rng.random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(idx, self.n_videos - 1) + 1


def zipf_pmf(n_videos: int, skew: float) -> PopularityModel:
    if n_videos < 1:
        raise EmptyCatalogError("catalog must hold at least one video")
    if not skew > 0 or not math.isfinite(skew):
        raise InvalidParameterError(f"zipf skew must be a positive real, got {skew}")
    ranks = np.arange(1, n_videos + 1, dtype=np.float64)
    weights = ranks ** (-float(skew))
    pmf = weights / math.fsum(weights)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    pmf.setflags(write=False)
    cdf.setflags(write=False)
    return PopularityModel(pmf, cdf, float(skew))


@dataclass
class PopularityWindow:
    """Timestamped request log. Times are in minutes; an estimate at ``now``
    uses records with ``now - window_min < time <= now``."""

    window_min: float
    n_videos: int
    times: list[float] = field(default_factory=list)
    videos: list[int] = field(default_factory=list)
    nodes: list = field(default_factory=list)

    def record(self, video: int, time_min: float, node: Node | None = None) -> None:
        i = bisect_right(self.times, time_min)
        if i == len(self.times):
            self.times.append(time_min)
            self.videos.append(video)
            self.nodes.append(node)
        else:
            self.times.insert(i, time_min)
            self.videos.insert(i, video)
            self.nodes.insert(i, node)

    def bounds(self, now: float) -> tuple[int, int]:
        return bisect_right(self.times, now - self.window_min), bisect_right(self.times, now)

    def counts(self, now: float, node: Node | None = None) -> np.ndarray:
        lo, hi = self.bounds(now)
        vids = self.videos[lo:hi]
        if node is not None:
            vids = [v for v, n in zip(vids, self.nodes[lo:hi]) if n == node]
        out = np.zeros(self.n_videos, dtype=np.int64)
        if vids:
            out += np.bincount(np.asarray(vids) - 1, minlength=self.n_videos)
        return out

    def count_of(self, video: int, now: float, node: Node | None = None) -> tuple[int, int]:
        """(n_i, I) for one video, optionally restricted to one node."""
        lo, hi = self.bounds(now)
        if node is None:
            vids = self.videos[lo:hi]
        else:
            vids = [v for v, n in zip(self.videos[lo:hi], self.nodes[lo:hi]) if n == node]
        return vids.count(video), len(vids)

    def estimate_x(self, now: float, node: Node | None = None) -> np.ndarray:
        return estimate_x(self, now, node)

    def prune(self, now: float) -> None:
        """Drop records that can no longer enter any estimate at or after ``now``."""
        lo = bisect_right(self.times, now - self.window_min)
        if lo:
            del self.times[:lo], self.videos[:lo], self.nodes[:lo]


def estimate_x(window: PopularityWindow, now: float, node: Node | None = None) -> np.ndarray:
    counts = window.counts(now, node)
    total = counts.sum()
    if total == 0:
        return np.zeros(window.n_videos)
    return counts / total


def popularity_or_fallback(x: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    return x if x.any() else np.asarray(fallback, dtype=np.float64)


def clamp_x(x: float, clamp: tuple[float, float] | None = DEFAULT_CLAMP) -> float:
    if clamp is None:
        return float(x)
    lo, hi = clamp
    return min(max(float(x), lo), hi)


def size_prefixes(
    duration_min: float, x_i: float, clamp: tuple[float, float] | None = DEFAULT_CLAMP
) -> tuple[int, int]:
    """Prefix-1 and prefix-2 lengths in whole blocks for one video.

    prefix-1 is ``x * S`` and prefix-2 is ``x * (S - prefix-1)``, each rounded
    up, with ``x`` first clamped into ``clamp``.
    """
    if not duration_min >= 2:
        raise InvalidParameterError(f"duration must be >= 2 minutes, got {duration_min}")
    x = clamp_x(x_i, clamp)
    if not 0 < x < 1:
        raise InvalidParameterError(f"x_i must lie in (0, 1) after clamping, got {x}")
    w1 = math.ceil(x * duration_min - _CEIL_EPS)
    w1 = min(max(w1, 1), math.ceil(duration_min) - 1)
    rest = duration_min - w1
    w2 = math.ceil(x * rest - _CEIL_EPS)
    w2 = min(max(w2, 1), math.floor(rest))
    return w1, w2


@dataclass
class Catalog:
    videos: list[VideoEntry]
    popularity: PopularityModel

    def __len__(self) -> int:
        return len(self.videos)

    def __contains__(self, video: int) -> bool:
        return 1 <= video <= len(self.videos)

    def __getitem__(self, video: int) -> VideoEntry:
        return self.videos[video - 1]

    @property
    def durations(self) -> np.ndarray:
        return np.array([v.duration_min for v in self.videos], dtype=np.float64)


def build_catalog(
    n_videos: int,
    skew: float,
    duration_range: tuple[float, float],
    rng: np.random.Generator,
    clamp: tuple[float, float] | None = DEFAULT_CLAMP,
    global_k: int = 0,
) -> Catalog:
    """Durations are whole minutes drawn uniformly from ``duration_range``;
    cold-start sizes come from the generator pmf."""
    model = zipf_pmf(n_videos, skew)
    lo, hi = duration_range
    durations = rng.integers(int(lo), int(hi), endpoint=True, size=n_videos)
    videos = []
    for i, (s, p) in enumerate(zip(durations.tolist(), model.pmf.tolist()), start=1):
        w1, w2 = size_prefixes(s, p, clamp)
        scope = Scope.global_() if i <= global_k else Scope(False)
        videos.append(VideoEntry(i, float(s), w1, w2, scope))
    return Catalog(videos, model)


@dataclass
class SizeTable:
    """Per-group prefix sizes, shape (groups, videos)."""

    w1: np.ndarray
    w2: np.ndarray


def size_table(
    durations: np.ndarray, x: np.ndarray, clamp: tuple[float, float] | None = DEFAULT_CLAMP
) -> SizeTable:
    x = np.atleast_2d(x)
    w1 = np.zeros(x.shape, dtype=np.int64)
    w2 = np.zeros(x.shape, dtype=np.int64)
    for g in range(x.shape[0]):
        for v, (s, xi) in enumerate(zip(durations.tolist(), x[g].tolist())):
            w1[g, v], w2[g, v] = size_prefixes(s, xi, clamp)
    return SizeTable(w1, w2)


@dataclass
class PlacementPlan:
    global_videos: list[int]
    local_home: dict[int, int]  # video -> tracker number
    targets: dict[int, list[Node]]  # video -> proxies chosen for prefix-1
    unplaced: list[int] = field(default_factory=list)
    refused: list[tuple[Node, int]] = field(default_factory=list)


def default_k(n_videos: int) -> int:
    return math.ceil(0.1 * n_videos)


def _rotated_argmax(values: Sequence[float], offset: int) -> list[int]:
    """Indices sorted by decreasing value; ties rotate with ``offset`` so
    equal-demand candidates are spread instead of piling onto index 0."""
    n = len(values)
    return sorted(range(n), key=lambda i: (-values[i], (i - offset) % n))


def classify_and_place(
    catalog: Catalog,
    popularity: np.ndarray,
    k: int,
    l_replicas: int,
    topology: Topology,
    layer: CacheLayer | None = None,
    sizes: SizeTable | None = None,
    proxy_popularity: dict[Node, np.ndarray] | None = None,
) -> PlacementPlan:
    """Split the catalog into a global top-k and a local remainder and offer
    prefix segments to the stores.

    ``popularity`` has one row per proxy group (tracker order) and one column
    per video. Global videos go to every proxy and every tracker. A local
    video goes to the ``l_replicas`` most-demanding proxies of its
    highest-demand group and to that group's tracker. Videos with no demand
    anywhere are left alone. With ``layer=None`` only the plan is computed.
    """
    popularity = np.atleast_2d(np.asarray(popularity, dtype=np.float64))
    n = len(catalog)
    n_groups = topology.n_trackers
    per_group = len(topology.proxies[topology.trackers[0].tracker])
    if popularity.shape != (n_groups, n):
        raise InvalidParameterError(f"popularity must have shape {(n_groups, n)}")
    if not 0 <= k <= n:
        raise InvalidParameterError(f"k must lie in [0, {n}]")
    if not 1 <= l_replicas <= per_group:
        raise InvalidParameterError(f"l_replicas must lie in [1, {per_group}]")
    if layer is not None and sizes is None:
        sizes = size_table(catalog.durations, popularity)

    aggregate = popularity.sum(axis=0)
    order = sorted(range(n), key=lambda v: (-aggregate[v], v))
    plan = PlacementPlan([], {}, {})
    local_rank = 0
    for rank, v in enumerate(order):
        video = v + 1
        if rank < k:
            plan.global_videos.append(video)
            groups = list(range(n_groups))
            plan.targets[video] = list(topology.all_proxies)
        else:
            if aggregate[v] <= 0:
                continue
            g = _rotated_argmax(popularity[:, v].tolist(), local_rank)[0]
            ring = topology.proxies[topology.trackers[g].tracker]
            if proxy_popularity is not None:
                demand = [float(proxy_popularity[p][v]) for p in ring]
            else:
                demand = [0.0] * len(ring)
            offset = (local_rank // n_groups) * l_replicas
            picks = _rotated_argmax(demand, offset)[:l_replicas]
            plan.local_home[video] = topology.trackers[g].tracker
            plan.targets[video] = [ring[i] for i in picks]
            groups = [g]
            local_rank += 1

        if layer is None:
            continue
        any_placed = False
        for proxy in plan.targets[video]:
            g = proxy.tracker - 1
            res = layer.place(proxy, video, SegmentKind.PREF1, int(sizes.w1[g, v]), popularity[g, v])
            any_placed |= res.placed
            if not res.placed:
                plan.refused.append((proxy, video))
        for g in groups:
            tracker = topology.trackers[g]
            res = layer.place(tracker, video, SegmentKind.PREF2, int(sizes.w2[g, v]), popularity[g, v])
            if not res.placed:
                plan.refused.append((tracker, video))
        if not any_placed:
            plan.unplaced.append(video)
    return plan
