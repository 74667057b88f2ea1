"""Multi-seed replication, paired policy comparison and one-key sweeps.

Replication ``i`` runs with seed ``cfg.seed + i``. Every policy in a
comparison sees the same seeds, hence the same arrival streams.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .config import SimConfig, config_from_dict, tomllib
from .engine import SCHEMA_VERSION, MetricsReport, simulate, warmup_split
from .errors import ConfigError, InvalidParameterError

METRICS = (
    "total_requests",
    "local_hit",
    "neighbor_proxy",
    "group_proxy",
    "neighbor_lpsg",
    "mms_fetch",
    "rejected",
    "local_frac",
    "shared_frac",
    "mms_frac",
    "vhr",
    "mean_wait_s",
    "max_queue_len",
    "wan_minutes",
    "continuity_violations",
    "refused_allocations",
)
COMPARISON_COLUMNS = ("policy", "simplified", "replications") + tuple(
    f"{m}_{stat}" for m in METRICS for stat in ("mean", "std")
)
LONG_COLUMNS = ("policy", "metric", "value")
SWEEP_LONG_COLUMNS = ("key", "key_value", "policy", "metric", "value", "std")
SWEEP_SERIES_COLUMNS = ("key_value", "policy", "mean", "std")


@dataclass
class ExperimentReport:
    policy: str
    simplified: bool
    seeds: list[int]
    runs: list[MetricsReport]
    mean: dict[str, float]
    std: dict[str, float]
    traces: dict[int, list[str]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "simplified": self.simplified,
            "seeds": self.seeds,
            "mean": _round(self.mean),
            "std": _round(self.std),
            "runs": [r.to_dict() for r in self.runs],
        }


def _round(d: dict) -> dict:
    return {k: round(float(v), 6) for k, v in d.items()}


def _one_run(args: tuple[SimConfig, str, bool, bool]) -> tuple[MetricsReport, list[str] | None]:
    cfg, policy, trace, debug = args
    result = simulate(cfg, policy, trace=trace, debug=debug)
    return warmup_split(result), result.trace


def _map(tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [_one_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_one_run, tasks))


def summarize(runs: Sequence[MetricsReport]) -> tuple[dict[str, float], dict[str, float]]:
    flats = [r.flat() for r in runs]
    mean, std = {}, {}
    for m in METRICS:
        values = [float(f[m]) for f in flats]
        mean[m] = math.fsum(values) / len(values)
        std[m] = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def _assemble(policy: str, seeds: list[int], outputs: list) -> ExperimentReport:
    runs = [o[0] for o in outputs]
    mean, std = summarize(runs)
    traces = {s: o[1] for s, o in zip(seeds, outputs) if o[1] is not None}
    return ExperimentReport(policy, runs[0].simplified, seeds, runs, mean, std, traces)


def run_experiment(
    cfg: SimConfig,
    replications: int = 1,
    policy: str | None = None,
    *,
    jobs: int = 1,
    trace: bool = False,
    debug: bool = False,
) -> ExperimentReport:
    if replications < 1:
        raise InvalidParameterError("replications must be >= 1")
    policy = policy or cfg.policy
    seeds = [cfg.seed + i for i in range(replications)]
    tasks = [(cfg.replace(seed=s, policy=policy), policy, trace, debug) for s in seeds]
    return _assemble(policy, seeds, _map(tasks, jobs))


@dataclass
class Comparison:
    config: SimConfig
    rows: dict[str, ExperimentReport]

    def table(self) -> list[dict]:
        out = []
        for name, rep in self.rows.items():
            row = {"policy": name, "simplified": rep.simplified, "replications": len(rep.runs)}
            for m in METRICS:
                row[f"{m}_mean"] = rep.mean[m]
                row[f"{m}_std"] = rep.std[m]
            out.append(row)
        return out

    def long(self) -> list[dict]:
        return [
            {"policy": name, "metric": m, "value": rep.mean[m]}
            for name, rep in self.rows.items()
            for m in METRICS
        ]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "compare",
            "config": config_json(self.config),
            "policies": {name: rep.to_dict() for name, rep in self.rows.items()},
        }


def compare_policies(
    cfg: SimConfig,
    policies: Sequence[str],
    replications: int = 1,
    *,
    jobs: int = 1,
    trace: bool = False,
    debug: bool = False,
) -> Comparison:
    policies = list(policies)
    if len(policies) < 2:
        raise InvalidParameterError("a comparison needs at least two policies")
    if len(set(policies)) != len(policies):
        raise InvalidParameterError("policies must be distinct")
    if replications < 1:
        raise InvalidParameterError("replications must be >= 1")
    seeds = [cfg.seed + i for i in range(replications)]
    tasks = [(cfg.replace(seed=s, policy=p), p, trace, debug) for p in policies for s in seeds]
    outputs = _map(tasks, jobs)
    rows = {}
    for j, p in enumerate(policies):
        rows[p] = _assemble(p, seeds, outputs[j * replications : (j + 1) * replications])
    return Comparison(cfg, rows)


def parse_value(raw: str):
    """Parse one scalar written in config syntax (``300``, ``0.8``, ``inf``, ``"gwq"``)."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def with_override(cfg: SimConfig, key: str, value) -> SimConfig:
    data = cfg.to_dict()
    if key not in {f for f in SimConfig.__dataclass_fields__}:
        raise ConfigError("unknown key", key=key)
    data[key] = value
    return config_from_dict(data)


@dataclass
class SweepReport:
    config: SimConfig
    key: str
    values: list
    points: list[Comparison | ExperimentReport]

    def _rows(self) -> Iterable[tuple[object, str, ExperimentReport]]:
        for value, point in zip(self.values, self.points):
            reps = point.rows if isinstance(point, Comparison) else {point.policy: point}
            for name, rep in reps.items():
                yield value, name, rep

    def series(self, metric: str) -> list[dict]:
        return [
            {"key_value": v, "policy": name, "mean": rep.mean[metric], "std": rep.std[metric]}
            for v, name, rep in self._rows()
        ]

    def long(self) -> list[dict]:
        return [
            {"key": self.key, "key_value": v, "policy": name, "metric": m, "value": rep.mean[m], "std": rep.std[m]}
            for v, name, rep in self._rows()
            for m in METRICS
        ]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "sweep",
            "config": config_json(self.config),
            "key": self.key,
            "points": [
                {"value": _jsonable(v), "policies": {name: rep.to_dict()}}
                for v, name, rep in self._rows()
            ],
        }


def sweep(
    cfg: SimConfig,
    key: str,
    values: Sequence,
    policies: Sequence[str] | None = None,
    replications: int = 1,
    *,
    jobs: int = 1,
) -> SweepReport:
    if not values:
        raise InvalidParameterError("a sweep needs at least one value")
    policies = list(policies or [cfg.policy])
    points = []
    for value in values:
        point_cfg = with_override(cfg, key, value)
        if len(policies) == 1:
            points.append(run_experiment(point_cfg, replications, policies[0], jobs=jobs))
        else:
            points.append(compare_policies(point_cfg, policies, replications, jobs=jobs))
    return SweepReport(cfg, key, list(values), points)


# ---------------------------------------------------------------- output


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return str(value)


def csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    Path(path).write_text(csv_text(columns, rows), encoding="utf-8", newline="")


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def config_json(cfg: SimConfig) -> dict:
    return {k: _jsonable(v) for k, v in cfg.to_dict().items()}


def experiment_json(cfg: SimConfig, report: ExperimentReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "run",
        "config": config_json(cfg),
        "result": report.to_dict(),
    }


def dumps(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"
