"""Command-line interface: ``dfsl run | sweep-k | ablate | report | replay | cache``."""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..evaluation import EvalReport
from ..generation import GenerationCache
from ..prompting import ABLATIONS
from .datasets import DatasetError
from .report import LAYOUTS, ReportError, report
from .runner import ConfigError, RunConfig, replay, run_benchmark

log = logging.getLogger("dfsl")

DEFAULT_KS = (1, 3, 5, 7)


def read_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    """Settings from the ``[run]`` section of an INI file, then ``key=value`` overrides."""
    values: dict[str, str] = {}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        if not parser.has_section("run"):
            raise ConfigError(f"{path}: missing [run] section")
        values.update(parser["run"])
        base = Path(path).resolve().parent
        for key in ("dataset", "storage", "graph", "transcript", "out_dir", "cache_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        values[key.strip()] = value
    if "cache_dir" not in values and os.environ.get("DFSL_CACHE_DIR"):
        values["cache_dir"] = os.environ["DFSL_CACHE_DIR"]
    return RunConfig.from_mapping(values)


def _with(config: RunConfig, sub: str, **changes) -> RunConfig:
    if config.out_dir:
        changes["out_dir"] = str(Path(config.out_dir) / sub)
    return dataclasses.replace(config, **changes)


def _emit(reports: list[EvalReport], args) -> int:
    print(report(reports, args.layout), end="" if args.layout == "table" else "\n")
    if args.save:
        Path(args.save).write_text(json.dumps([r.to_dict() for r in reports], indent=2), encoding="utf-8")
    for rep in reports:
        if rep.degraded_generation:
            print(f"warning: {rep.approach} used sampled completions in place of beams", file=sys.stderr)
    return 0 if reports and all(r.count > 0 for r in reports) else 1


def cmd_run(args) -> int:
    config = read_config(args.config, args.set)
    return _emit([run_benchmark(config)], args)


def cmd_sweep_k(args) -> int:
    config = read_config(args.config, args.set)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else list(DEFAULT_KS)
    reports = [run_benchmark(_with(config, f"k{k}", k=k, approach=f"{config.label} k={k}")) for k in ks]
    return _emit(reports, args)


def cmd_ablate(args) -> int:
    config = read_config(args.config, args.set)
    variants = [_with(config, name, ablation=name, approach=None) for name in ABLATIONS]
    if args.question_only:
        variants.append(_with(config, "question_only", ablation="full", embedding="question_only", approach=None))
    return _emit([run_benchmark(v) for v in variants], args)


def _load_reports(paths: Sequence[str]) -> list[EvalReport]:
    reports = []
    for path in paths:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        docs = doc if isinstance(doc, list) else [doc]
        reports.extend(EvalReport.from_dict(d) for d in docs)
    return reports


def cmd_report(args) -> int:
    reports = _load_reports(args.files)
    print(report(reports, args.layout, args.baseline), end="" if args.layout == "table" else "\n")
    return 0


def cmd_replay(args) -> int:
    rep = replay(args.directory)
    return _emit([rep], args)


def cmd_cache(args) -> int:
    directory = args.dir or os.environ.get("DFSL_CACHE_DIR")
    if not directory:
        raise ConfigError("give --dir or set DFSL_CACHE_DIR")
    cache = GenerationCache(directory)
    if args.action == "inspect":
        keys = cache.entries()
        print(f"{len(keys)} cached generation(s) in {directory}")
        for key in keys:
            print(key)
    else:
        print(f"removed {cache.clear()} cached generation(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfsl", description="KGQA benchmark runner with retrieved few-shot prompts")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("-c", "--config", help="INI file with a [run] section")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE", help="override a setting")
        p.add_argument("--layout", choices=LAYOUTS, default="table")
        p.add_argument("--save", metavar="PATH", help="write the full report(s) as JSON")

    p = sub.add_parser("run", help="evaluate one configuration")
    run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-k", help="repeat a run for several numbers of demonstrations")
    run_options(p)
    p.add_argument("--ks", help="comma-separated k values (default 1,3,5,7)")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("ablate", help="run the entity/relation ablations")
    run_options(p)
    p.add_argument("--question-only", action="store_true", help="also run the question-only embedding variant")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="tabulate saved reports")
    p.add_argument("files", nargs="+")
    p.add_argument("--layout", choices=LAYOUTS, default="table")
    p.add_argument("--baseline", help="approach name of the baseline row (default: first)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="recompute a report from a run's artifact directory")
    p.add_argument("directory")
    p.add_argument("--layout", choices=LAYOUTS, default="table")
    p.add_argument("--save", metavar="PATH")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("cache", help="inspect or clear the generation cache")
    p.add_argument("action", choices=("inspect", "clear"))
    p.add_argument("--dir", help="cache directory (default: $DFSL_CACHE_DIR)")
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ReportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
