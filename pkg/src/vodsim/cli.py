"""Command line entry point.

    vodsim run      [--config PATH] [--policy NAME] [--seed N] [--replications N] [--out DIR] [--trace]
    vodsim compare  [--policies rppcl,gwq,prls] ...
    vodsim sweep    --key KEY --values V1,V2,... [--policies ...] ...
    vodsim validate [--config PATH]

Without ``--out`` the JSON report goes to stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SEED_ENV_VAR, SimConfig, dump_config, parse_config, seed_from_env
from .errors import VodSimError
from .experiment import (
    COMPARISON_COLUMNS,
    LONG_COLUMNS,
    METRICS,
    SWEEP_LONG_COLUMNS,
    SWEEP_SERIES_COLUMNS,
    compare_policies,
    csv_text,
    dumps,
    experiment_json,
    parse_value,
    run_experiment,
    sweep,
)

log = logging.getLogger("vodsim")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML key/value config file")
    p.add_argument("--seed", type=int, help=f"root seed (overrides ${SEED_ENV_VAR} and the config)")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--out", type=Path, help="directory for JSON/CSV outputs")
    p.add_argument("--trace", action="store_true", help="write a per-event log for every run")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--debug", action="store_true", help="check cache/link invariants after every event")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vodsim", description="VoD proxy prefix caching simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one policy, optionally over several seeds")
    _common(p)
    p.add_argument("--policy", help="rppcl, gwq or prls")

    p = sub.add_parser("compare", help="paired comparison of several policies")
    _common(p)
    p.add_argument("--policies", default="rppcl,gwq,prls")
    p.add_argument("--policy", help=argparse.SUPPRESS)

    p = sub.add_parser("sweep", help="vary one config key over a list of values")
    _common(p)
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="comma-separated values in config syntax")
    p.add_argument("--policies", help="comma-separated; defaults to the configured policy")
    p.add_argument("--policy", help=argparse.SUPPRESS)

    p = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    p.add_argument("--config", type=Path)
    return parser


def load_config(args) -> SimConfig:
    cfg = parse_config(args.config)
    cfg = seed_from_env(cfg)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "policy", None):
        changes["policy"] = args.policy
    return cfg.replace(**changes) if changes else cfg


def _split(raw: str) -> list[str]:
    return [s.strip() for s in raw.split(",") if s.strip()]


def _emit(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8", newline="")


def _write_traces(out: Path | None, policy: str, traces: dict[int, list[str]]) -> None:
    header = "time_s\tkind\tvideo\torigin\ttier\twait_s\n"
    for seed, lines in traces.items():
        _emit(out, f"trace_{policy}_seed{seed}.tsv", header + "".join(line + "\n" for line in lines))


def cmd_run(args) -> int:
    cfg = load_config(args)
    rep = run_experiment(cfg, args.replications, cfg.policy, jobs=args.jobs, trace=args.trace, debug=args.debug)
    text = dumps(experiment_json(cfg, rep))
    if args.out is None:
        sys.stdout.write(text)
        return 0
    _emit(args.out, "report.json", text)
    rows = [{"metric": m, "mean": rep.mean[m], "std": rep.std[m]} for m in METRICS]
    _emit(args.out, "summary.csv", csv_text(("metric", "mean", "std"), rows))
    long = [{"policy": rep.policy, "metric": m, "value": rep.mean[m]} for m in METRICS]
    _emit(args.out, "long.csv", csv_text(LONG_COLUMNS, long))
    _write_traces(args.out, rep.policy, rep.traces)
    log.info("wrote %s", args.out)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args)
    cmp = compare_policies(cfg, _split(args.policies), args.replications, jobs=args.jobs, trace=args.trace, debug=args.debug)
    text = dumps(cmp.to_dict())
    if args.out is None:
        sys.stdout.write(text)
        return 0
    _emit(args.out, "report.json", text)
    _emit(args.out, "comparison.csv", csv_text(COMPARISON_COLUMNS, cmp.table()))
    _emit(args.out, "long.csv", csv_text(LONG_COLUMNS, cmp.long()))
    for name, rep in cmp.rows.items():
        _write_traces(args.out, name, rep.traces)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    values = [parse_value(v) for v in _split(args.values)]
    policies = _split(args.policies) if args.policies else None
    rep = sweep(cfg, args.key, values, policies, args.replications, jobs=args.jobs)
    text = dumps(rep.to_dict())
    if args.out is None:
        sys.stdout.write(text)
        return 0
    _emit(args.out, "report.json", text)
    _emit(args.out, "long.csv", csv_text(SWEEP_LONG_COLUMNS, rep.long()))
    for m in METRICS:
        _emit(args.out, f"sweep_{m}.csv", csv_text(SWEEP_SERIES_COLUMNS, rep.series(m)))
    return 0


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    sys.stdout.write(dump_config(cfg))
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except VodSimError as exc:
        print(f"vodsim: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"vodsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
