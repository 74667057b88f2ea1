"""Block-budgeted segment stores and the per-group tracker directory.

One block is one minute of video. Proxies hold prefix-1 segments, trackers
hold prefix-2 segments. Residency is decided by a popularity-score LFU: an
incoming segment may evict the lowest-scored entries (larger first on equal
score, then lower video id) but never an entry scored strictly higher than
itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import InvalidParameterError
from .topology import Node, Topology


class SegmentKind(str, Enum):
    PREF1 = "pref1"
    PREF2 = "pref2"
    SUFFIX = "suffix"
    # a whole video held at a proxy; only the GWQ baseline stores these
    FULL = "full"


PROXY_KINDS = frozenset({SegmentKind.PREF1, SegmentKind.FULL})
TRACKER_KINDS = frozenset({SegmentKind.PREF2})


@dataclass
class CacheEntry:
    kind: SegmentKind
    size_blocks: int
    score: float


@dataclass
class CacheStore:
    owner: Node
    budget_blocks: int
    accepts: frozenset = PROXY_KINDS
    entries: dict[int, CacheEntry] = field(default_factory=dict)
    used_blocks: int = 0

    @property
    def free_blocks(self) -> int:
        return self.budget_blocks - self.used_blocks

    def __contains__(self, video: int) -> bool:
        return video in self.entries

    def get(self, video: int) -> CacheEntry | None:
        return self.entries.get(video)

    def remove(self, video: int) -> CacheEntry:
        entry = self.entries.pop(video)
        self.used_blocks -= entry.size_blocks
        return entry

    def rescore(self, scores: Mapping[int, float] | None = None, *, by_index=None) -> None:
        """Overwrite stored scores. ``by_index`` is an array indexed by video - 1."""
        for video, entry in self.entries.items():
            if by_index is not None:
                entry.score = float(by_index[video - 1])
            elif scores is not None and video in scores:
                entry.score = float(scores[video])

    def snapshot(self) -> tuple:
        return (
            self.used_blocks,
            tuple(sorted((v, e.kind.value, e.size_blocks, e.score) for v, e in self.entries.items())),
        )


class AllocStatus(str, Enum):
    PLACED = "Placed"
    PLACED_AFTER_EVICTION = "PlacedAfterEviction"
    REFUSED = "Refused"


@dataclass(frozen=True)
class AllocationResult:
    status: AllocStatus
    evicted: tuple[int, ...] = ()
    already_present: bool = False
    reason: str = ""

    @property
    def placed(self) -> bool:
        return self.status is not AllocStatus.REFUSED


def eviction_order(store: CacheStore, max_score: float) -> list[int]:
    """Videos that may be evicted for an incoming segment scored ``max_score``,
    in eviction order."""
    victims = [(e.score, -e.size_blocks, v) for v, e in store.entries.items() if e.score <= max_score]
    victims.sort()
    return [v for _, _, v in victims]


def allocate(
    store: CacheStore, video: int, kind: SegmentKind, size_blocks: int, score: float
) -> AllocationResult:
    kind = SegmentKind(kind)
    if kind not in store.accepts:
        raise InvalidParameterError(f"{store.owner} does not store {kind.value} segments")
    if int(size_blocks) != size_blocks or size_blocks < 1:
        raise InvalidParameterError(f"size_blocks must be a positive integer, got {size_blocks}")
    size_blocks = int(size_blocks)

    if video in store.entries:
        # cached segments are never resized in place
        return AllocationResult(AllocStatus.PLACED, already_present=True)
    if size_blocks > store.budget_blocks:
        return AllocationResult(AllocStatus.REFUSED, reason="oversized")

    needed = size_blocks - store.free_blocks
    victims: list[int] = []
    if needed > 0:
        freed = 0
        for v in eviction_order(store, score):
            victims.append(v)
            freed += store.entries[v].size_blocks
            if freed >= needed:
                break
        if freed < needed:
            return AllocationResult(AllocStatus.REFUSED, reason="no evictable space")
        for v in victims:
            store.remove(v)

    store.entries[video] = CacheEntry(kind, size_blocks, float(score))
    store.used_blocks += size_blocks
    if victims:
        return AllocationResult(AllocStatus.PLACED_AFTER_EVICTION, tuple(victims))
    return AllocationResult(AllocStatus.PLACED)


@dataclass
class TrackerDirectory:
    """Where prefix-1 of each video lives inside one proxy group, and how big
    it is there. Maintained incrementally by ``CacheLayer``."""

    tracker: Node
    holders: dict[int, dict[Node, int]] = field(default_factory=dict)

    def add(self, video: int, proxy: Node, size_blocks: int) -> None:
        self.holders.setdefault(video, {})[proxy] = size_blocks

    def discard(self, video: int, proxy: Node) -> None:
        where = self.holders.get(video)
        if where is None:
            return
        where.pop(proxy, None)
        if not where:
            del self.holders[video]

    def as_sets(self) -> dict[int, frozenset[Node]]:
        return {v: frozenset(w) for v, w in self.holders.items()}


def lookup_directory(directory: TrackerDirectory, video: int) -> frozenset[Node]:
    return frozenset(directory.holders.get(video, ()))


def rebuild_directory(tracker: Node, stores: Iterable[CacheStore]) -> TrackerDirectory:
    rebuilt = TrackerDirectory(tracker)
    for store in stores:
        for video, entry in store.entries.items():
            if entry.kind in PROXY_KINDS:
                rebuilt.add(video, store.owner, entry.size_blocks)
    return rebuilt


def audit_directory(directory: TrackerDirectory, stores: Iterable[CacheStore]) -> bool:
    return rebuild_directory(directory.tracker, stores).holders == directory.holders


class CacheLayer:
    """All stores of the system plus one directory per proxy group.

    Every mutation of a proxy store goes through here so the owning
    tracker's directory stays coherent. Mutated stores are remembered in
    ``dirty`` until the engine's invariant check clears them.
    """

    def __init__(self, topology: Topology, proxy_blocks: int, tracker_blocks: int):
        self.topology = topology
        self.proxy_stores: dict[Node, CacheStore] = {
            p: CacheStore(p, proxy_blocks, PROXY_KINDS) for p in topology.all_proxies
        }
        self.tracker_stores: dict[Node, CacheStore] = {
            t: CacheStore(t, tracker_blocks, TRACKER_KINDS) for t in topology.trackers
        }
        self.directories: dict[Node, TrackerDirectory] = {
            t: TrackerDirectory(t) for t in topology.trackers
        }
        self.dirty: set[Node] = set()

    def store(self, node: Node) -> CacheStore:
        if node.role == "proxy":
            return self.proxy_stores[node]
        return self.tracker_stores[node]

    def directory_for(self, node: Node) -> TrackerDirectory:
        tracker = node if node.role == "tracker" else self.topology.tracker_of(node)
        return self.directories[tracker]

    def place(
        self, node: Node, video: int, kind: SegmentKind, size_blocks: int, score: float
    ) -> AllocationResult:
        store = self.store(node)
        result = allocate(store, video, kind, size_blocks, score)
        if result.placed and not result.already_present:
            self.dirty.add(node)
            if node.role == "proxy":
                directory = self.directory_for(node)
                for v in result.evicted:
                    directory.discard(v, node)
                directory.add(video, node, store.entries[video].size_blocks)
        return result

    def remove(self, node: Node, video: int) -> None:
        self.store(node).remove(video)
        self.dirty.add(node)
        if node.role == "proxy":
            self.directory_for(node).discard(video, node)

    def holders(self, tracker: Node, video: int) -> frozenset[Node]:
        return lookup_directory(self.directories[tracker], video)

    def group_stores(self, tracker: Node) -> list[CacheStore]:
        return [self.proxy_stores[p] for p in self.topology.proxies[tracker.tracker]]

    def audit(self, tracker: Node) -> bool:
        return audit_directory(self.directories[tracker], self.group_stores(tracker))

    def all_stores(self) -> list[CacheStore]:
        return list(self.proxy_stores.values()) + list(self.tracker_stores.values())
