"""Simulation configuration: a flat TOML key/value file.

Every key is optional; omitted keys take the defaults below. Unknown keys
are rejected. Stream capacities accept ``inf``.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

SEED_ENV_VAR = "VODSIM_SEED"
POLICIES = ("rppcl", "gwq", "prls")


@dataclass(frozen=True)
class SimConfig:
    # topology
    n_trackers: int = 6
    proxies_per_tracker: int = 6
    clients_per_proxy: int = 25
    # delays, seconds; the main-server delay is drawn once per run
    proxy_to_user_s: float = 120.0
    proxy_to_proxy_s: float = 120.0
    tracker_to_proxy_s: float = 120.0
    tracker_to_tracker_s: float = 240.0
    mms_delay_min_s: float = 480.0
    mms_delay_max_s: float = 600.0
    # budgets in blocks (1 block = 1 minute of video)
    mms_blocks: int = 2000
    tracker_blocks: int = 800
    proxy_blocks: int = 300
    enforce_ratio: bool = True
    # catalog
    n_videos: int = 600
    duration_min_min: int = 25
    duration_max_min: int = 112
    zipf_skew: float = 0.73
    # workload
    arrival_rate_per_hour: float = 45.0
    horizon_h: float = 24.0
    warmup_h: float = 2.0
    policy: str = "rppcl"
    # placement
    global_k: int | None = None  # None: ceil(0.1 * n_videos)
    l_replicas: int = 2
    popularity_window_min: float = 60.0
    replan_interval_min: float = 120.0
    clamp_min: float = 0.04
    clamp_max: float = 0.96
    # stream capacities per link class, and per-proxy outbound stream slots
    capacity_mms_tracker: float = math.inf
    capacity_tracker_tracker: float = math.inf
    capacity_tracker_proxy: float = math.inf
    capacity_proxy_proxy: float = math.inf
    capacity_proxy_user: float = math.inf
    proxy_stream_slots: float = math.inf
    # how long a request blocked on capacity may wait before rejection
    queue_patience_s: float = 0.0
    seed: int = 1

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @property
    def k(self) -> int:
        return math.ceil(0.1 * self.n_videos) if self.global_k is None else self.global_k

    @property
    def clamp(self) -> tuple[float, float]:
        return (self.clamp_min, self.clamp_max)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


_COUNT_KEYS = (
    "n_trackers",
    "proxies_per_tracker",
    "clients_per_proxy",
    "mms_blocks",
    "tracker_blocks",
    "proxy_blocks",
    "n_videos",
    "l_replicas",
)
_POSITIVE_KEYS = (
    "proxy_to_user_s",
    "proxy_to_proxy_s",
    "tracker_to_proxy_s",
    "tracker_to_tracker_s",
    "mms_delay_min_s",
    "popularity_window_min",
    "replan_interval_min",
    "zipf_skew",
)
_CAPACITY_KEYS = (
    "capacity_mms_tracker",
    "capacity_tracker_tracker",
    "capacity_tracker_proxy",
    "capacity_proxy_proxy",
    "capacity_proxy_user",
    "proxy_stream_slots",
)


def _field_types() -> dict[str, type]:
    out = {}
    for f in fields(SimConfig):
        default = f.default
        out[f.name] = int if f.name == "global_k" else type(default)
    return out


def validate(cfg: SimConfig) -> None:
    types = _field_types()
    for name, kind in types.items():
        value = getattr(cfg, name)
        if value is None and name == "global_k":
            continue
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigError("expected true/false", key=name)
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("expected an integer", key=name)
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("expected a number", key=name)
            if math.isnan(value):
                raise ConfigError("NaN is not allowed", key=name)
        elif kind is str and not isinstance(value, str):
            raise ConfigError("expected a string", key=name)

    for key in _COUNT_KEYS:
        if getattr(cfg, key) < 1:
            raise ConfigError("must be >= 1", key=key)
    for key in _POSITIVE_KEYS:
        value = getattr(cfg, key)
        if not (value > 0 and math.isfinite(value)):
            raise ConfigError("must be a positive finite number", key=key)
    for key in _CAPACITY_KEYS:
        value = getattr(cfg, key)
        if not value >= 1 or (math.isfinite(value) and value != int(value)):
            raise ConfigError("must be a whole number >= 1 or inf", key=key)
    if cfg.mms_delay_max_s < cfg.mms_delay_min_s or not math.isfinite(cfg.mms_delay_max_s):
        raise ConfigError("must be finite and >= mms_delay_min_s", key="mms_delay_max_s")
    if cfg.duration_min_min < 2:
        raise ConfigError("must be >= 2", key="duration_min_min")
    if cfg.duration_max_min < cfg.duration_min_min:
        raise ConfigError("must be >= duration_min_min", key="duration_max_min")
    if not (cfg.arrival_rate_per_hour >= 0 and math.isfinite(cfg.arrival_rate_per_hour)):
        raise ConfigError("must be >= 0", key="arrival_rate_per_hour")
    if not (cfg.horizon_h >= 0 and math.isfinite(cfg.horizon_h)):
        raise ConfigError("must be >= 0", key="horizon_h")
    if cfg.warmup_h < 0:
        raise ConfigError("must be >= 0", key="warmup_h")
    if cfg.warmup_h > 0 and cfg.warmup_h >= cfg.horizon_h:
        raise ConfigError("must be shorter than horizon_h", key="warmup_h")
    if cfg.seed < 0:
        raise ConfigError("must be >= 0", key="seed")
    if cfg.policy not in POLICIES:
        raise ConfigError(f"must be one of {', '.join(POLICIES)}", key="policy")
    if cfg.global_k is not None and not 0 <= cfg.global_k <= cfg.n_videos:
        raise ConfigError("must lie in [0, n_videos]", key="global_k")
    if cfg.l_replicas > cfg.proxies_per_tracker:
        raise ConfigError("must not exceed proxies_per_tracker", key="l_replicas")
    if not 0 < cfg.clamp_min <= cfg.clamp_max < 1:
        raise ConfigError("need 0 < clamp_min <= clamp_max < 1", key="clamp_min")
    if not (cfg.queue_patience_s >= 0 and math.isfinite(cfg.queue_patience_s)):
        raise ConfigError("must be a finite number >= 0", key="queue_patience_s")
    if cfg.enforce_ratio and not cfg.proxy_blocks <= cfg.tracker_blocks <= cfg.mms_blocks:
        raise ConfigError("need proxy_blocks <= tracker_blocks <= mms_blocks", key="enforce_ratio")


def config_from_dict(data: dict) -> SimConfig:
    types = _field_types()
    unknown = sorted(set(data) - set(types))
    if unknown:
        raise ConfigError("unknown key", key=unknown[0])
    clean = {}
    for key, value in data.items():
        # TOML writes 300.0 and 300 differently; accept integral floats for ints
        if types[key] is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        if types[key] is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        clean[key] = value
    return SimConfig(**clean)


def parse_config(source: str | Path | None = None, *, text: str | None = None) -> SimConfig:
    """Load a config from a file path or from inline ``text``."""
    if text is None:
        text = "" if source is None else Path(source).read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError("tables are not part of the schema", key=nested[0])
    return config_from_dict(data)


def dump_config(cfg: SimConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def seed_from_env(cfg: SimConfig, environ=os.environ) -> SimConfig:
    raw = environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return cfg
    try:
        return cfg.replace(seed=int(raw))
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from None
