"""Command-line entry point: ``wssci {patterns,ingest,run,report,simulate}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .aggregator import read_checkpoint_counts
from .geogrid import Coverage, GridLevel
from .ingest import IngestStats, format_tz, iter_location_log, iter_search_log, open_log, write_location_log, write_search_log
from .patterns import PatternError, dump_patterns, expand_default_patterns, load_pattern_file
from .pipeline import (
    STATS_FILE,
    RunConfig,
    StagedOutputs,
    StageError,
    metadata_lines,
    run_pipeline,
    stage,
    write_report_outputs,
)
from .synthgen import (
    LOCATION_FILE,
    SEARCH_FILE,
    ScenarioConfigError,
    evaluate_detection,
    generate_scenario,
    load_scenario_config,
    write_scenario,
)

log = logging.getLogger("wssci")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
SPANS = ("day", "evening", "night", "whole")


class UsageError(Exception):
    pass


def _common(with_config: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    p.add_argument("--tz", default=s, help="local UTC offset for dates and spans (default +09:00)")
    p.add_argument("--jobs", type=int, default=s, help="parallel counting partitions")
    p.add_argument("--seed", type=int, default=s, help="override the scenario seed (simulate)")
    p.add_argument("-v", "--verbose", action="count", default=s)
    if with_config:
        p.add_argument("--config", dest="run_config", default=s, help="JSON file of run settings")
    return p


def _ingest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--search", required=True, help="search log CSV (user_id,timestamp,query)")
    p.add_argument("--locations", required=True, help="location log CSV (user_id,timestamp,lat,lon,consent)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--salt-env", default="WSSCI_SALT", metavar="VAR", help="environment variable holding the salt")
    p.add_argument("--study-window", metavar="START..END")
    p.add_argument("--coverage", metavar="S,W,N,E")


def _report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--level", choices=[lvl.value for lvl in GridLevel])
    p.add_argument("--span", choices=SPANS)
    p.add_argument("--from", dest="date_from", metavar="YYYY-MM-DD")
    p.add_argument("--to", dest="date_to", metavar="YYYY-MM-DD")
    p.add_argument("--threshold", type=int, help="suppress blocks with totals below N (default 3)")
    p.add_argument("--top", type=int, help="number of hotspots to list (default 10)")
    p.add_argument("--format", choices=("csv", "geojson"))
    p.add_argument("--baseline", help="CSV block_code,value for baseline ratios")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wssci", description=__doc__, parents=[_common()])
    parser.set_defaults(tz=None, jobs=None, seed=None, verbose=0, run_config=None)
    parser.add_argument("--version", action="version", version=f"wssci {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pat = sub.add_parser("patterns", help="export or validate pattern files", parents=[_common()])
    psub = pat.add_subparsers(dest="action", required=True)
    exp = psub.add_parser("export", help="write the builtin 63-pattern set")
    exp.add_argument("--out", help="destination file (default stdout)")
    val = psub.add_parser("validate", help="load a pattern file and report errors")
    val.add_argument("file")

    ing = sub.add_parser("ingest", help="parse, consent-filter and pseudonymize logs", parents=[_common()])
    _ingest_flags(ing)

    run = sub.add_parser("run", help="run the full pipeline", parents=[_common()])
    _ingest_flags(run)
    run.add_argument("--patterns", help="pattern file (default: builtin set)")
    run.add_argument("--window-days", type=int, help="days a matching query keeps a user flagged")
    run.add_argument("--mode", dest="counter_mode", choices=("exact", "sketch"))
    run.add_argument("--precision", dest="sketch_precision", type=int, help="sketch precision (registers = 2**p)")
    run.add_argument("--merge-with", metavar="CHECKPOINT", help="merge a previous counter.csv into this run")
    _report_flags(run)

    rep = sub.add_parser("report", help="re-report from a counter checkpoint", parents=[_common()])
    rep.add_argument("--checkpoint", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--study-window", metavar="START..END")
    _report_flags(rep)

    sim = sub.add_parser("simulate", help="generate a synthetic scenario", parents=[_common(with_config=False)])
    sim.add_argument("--config", dest="scenario", required=True, help="scenario config JSON")
    sim.add_argument("--out", required=True)
    sim.add_argument("--then-run", action="store_true", help="run the pipeline on the scenario and print metrics")
    sim.add_argument("--salt-env", default="WSSCI_SALT", metavar="VAR")
    _report_flags(sim)
    return parser


def _salt(var: str) -> str:
    salt = os.environ.get(var, "")
    if not salt:
        raise UsageError(f"salt environment variable {var} is empty or unset; refusing to run unsalted")
    return salt


def _run_config(args, **extra) -> RunConfig:
    file_values = None
    if args.run_config:
        try:
            file_values = json.loads(Path(args.run_config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read run config {args.run_config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError(f"run config {args.run_config} must be a JSON object")
    flags = {
        "tz": args.tz,
        "jobs": args.jobs,
        "study_window": getattr(args, "study_window", None),
        "coverage": getattr(args, "coverage", None),
        "patterns": getattr(args, "patterns", None),
        "window_days": getattr(args, "window_days", None),
        "counter_mode": getattr(args, "counter_mode", None),
        "sketch_precision": getattr(args, "sketch_precision", None),
    }
    for name in ("level", "span", "date_from", "date_to", "threshold", "top", "format"):
        flags[name] = getattr(args, name, None)
    flags.update(extra)
    try:
        return RunConfig.resolve(file_values, **flags)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid run settings: {exc}") from None


def cmd_patterns(args) -> int:
    if args.action == "export":
        text = dump_patterns(expand_default_patterns())
        if args.out:
            staged = StagedOutputs(Path(args.out).parent)
            with staged:
                with staged.open(Path(args.out).name) as fh:
                    fh.write(text)
                staged.commit()
        else:
            sys.stdout.write(text)
        return EXIT_OK
    try:
        pats = load_pattern_file(args.file)
    except (OSError, PatternError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"{args.file}: ok, {len(pats)} patterns (mode {pats.mode})")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _run_config(args)
    salt = _salt(args.salt_env)
    for p in (args.search, args.locations):
        if not Path(p).is_file():
            raise StageError("inputs", FileNotFoundError(p))
    meta = metadata_lines(cfg, {"search": args.search, "locations": args.locations})
    s_stats, l_stats = IngestStats(), IngestStats()
    with StagedOutputs(args.out) as staged, stage("ingest"):
        with open_log(args.search) as src, staged.open(SEARCH_FILE) as dst:
            dst.write("".join(f"# {m}\n" for m in meta))
            write_search_log(iter_search_log(src, salt, s_stats, window=cfg.window, tz=cfg.tzinfo), dst)
        with open_log(args.locations) as src, staged.open(LOCATION_FILE) as dst:
            dst.write("".join(f"# {m}\n" for m in meta))
            fixes = iter_location_log(src, salt, l_stats, window=cfg.window, coverage=Coverage(*cfg.coverage), tz=cfg.tzinfo)
            write_location_log(fixes, dst)
        with staged.open(STATS_FILE) as fh:
            doc = {"metadata": meta, "search": s_stats.as_dict(), "locations": l_stats.as_dict()}
            fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        staged.commit()
    print(f"search: {s_stats.records_kept}/{s_stats.records_read} kept; locations: {l_stats.records_kept}/{l_stats.records_read} kept")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _run_config(args)
    salt = _salt(args.salt_env)
    result = run_pipeline(
        args.search, args.locations, args.out, cfg, salt, merge_with=args.merge_with, baseline=args.baseline
    )
    _print_report(result.report)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _run_config(args)
    if not Path(args.checkpoint).is_file():
        raise StageError("inputs", FileNotFoundError(args.checkpoint))
    inputs = {"checkpoint": args.checkpoint}
    if args.baseline:
        inputs["baseline"] = args.baseline
    meta = metadata_lines(cfg, inputs)
    with open(args.checkpoint, encoding="utf-8") as fh:
        try:
            _, counts = read_checkpoint_counts(fh)
        except ValueError as exc:
            raise StageError("checkpoint", exc) from exc
    with StagedOutputs(args.out) as staged:
        report = write_report_outputs(counts, cfg, staged, meta, args.baseline)
        staged.commit()
    _print_report(report)
    return EXIT_OK


def _print_report(report) -> None:
    for e in report.entries:
        print(f"{e.rank}\t{e.block_code}\t{e.total}")


def cmd_simulate(args) -> int:
    try:
        scen_cfg = load_scenario_config(args.scenario)
        if args.seed is not None:
            scen_cfg = scen_cfg.with_seed(args.seed)
    except OSError as exc:
        raise UsageError(f"cannot read scenario config: {exc}") from None
    except ScenarioConfigError as exc:
        raise UsageError(f"scenario config: {exc}") from None
    scenario = generate_scenario(scen_cfg)
    with StagedOutputs(args.out) as staged:
        for name in write_scenario(scenario, staged.dir):
            staged.register(name)
        staged.commit()
    out = Path(args.out)
    print(f"scenario written to {out} ({len(scenario.search_rows)} queries, {len(scenario.location_rows)} fixes)")
    if not args.then_run:
        return EXIT_OK
    salt = os.environ.get(args.salt_env, "")
    if not salt:
        # Synthetic ids only; a seed-derived salt keeps reruns reproducible.
        salt = hashlib.sha256(f"wssci-simulate-{scen_cfg.seed}".encode()).hexdigest()
        log.info("no salt in $%s; using a salt derived from the scenario seed", args.salt_env)
    cfg = _run_config(args, study_window=str(scen_cfg.study_window), tz=format_tz(scen_cfg.tz))
    result = run_pipeline(out / SEARCH_FILE, out / LOCATION_FILE, out / "run", cfg, salt, baseline=args.baseline)
    metrics = evaluate_detection(result.report, scenario.truth)
    rank = "not-present" if metrics.planted_rank is None else metrics.planted_rank
    print(f"planted_rank={rank} precision@{metrics.k}={metrics.precision_at_k:.3f}")
    return EXIT_OK


COMMANDS = {
    "patterns": cmd_patterns,
    "ingest": cmd_ingest,
    "run": cmd_run,
    "report": cmd_report,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        args.run_config = None
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"wssci: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"wssci: error in stage {exc.stage}: {exc.__cause__ or exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
