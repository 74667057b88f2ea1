import math

import numpy as np
import pytest

from vodsim.cache import CacheLayer
from vodsim.catalog import Catalog, PopularityWindow, VideoEntry, zipf_pmf
from vodsim.rppcl import SystemState
from vodsim.topology import DelayTable, build_topology


def make_state(
    n_trackers=2,
    per_tracker=2,
    n_videos=4,
    duration=100.0,
    proxy_blocks=300,
    tracker_blocks=800,
    mms_delay=480.0,
    capacities=None,
    slots=math.inf,
):
    """A small hand-built system with uniform durations and empty caches."""
    topo = build_topology(
        n_trackers, per_tracker, 25, DelayTable(mms_to_tracker_s=mms_delay), capacities
    )
    videos = [VideoEntry(i, duration, 10, 10) for i in range(1, n_videos + 1)]
    catalog = Catalog(videos, zipf_pmf(n_videos, 0.73))
    caches = CacheLayer(topo, proxy_blocks, tracker_blocks)
    windows = {t: PopularityWindow(60.0, n_videos) for t in topo.trackers}
    return SystemState(topo, catalog, caches, windows, proxy_stream_slots=slots)


@pytest.fixture
def small_state():
    return make_state()


@pytest.fixture
def ring6_state():
    return make_state(n_trackers=3, per_tracker=6, n_videos=6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one "criterion N: PASS/FAIL" line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
