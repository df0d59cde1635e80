"""Command-line entry point.

Exit codes: 0 success, 1 parse/validation failure (or a failed table replay),
2 when no probed rate could be sustained.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, TextIO

from capplan.core import CapPlanError, Configuration, ResourceBudget, ResourceProfile
from capplan.estimator import NeverSucceeded, estimate_mst
from capplan.explorer import InsufficientObservations, MissingProfileMetrics, PlanResult, explore, plan
from capplan.formats import (
    Scenario,
    dump_json,
    load_model,
    load_scenario,
    measurements_csv,
    model_to_doc,
    plan_table,
    report_to_doc,
)
from capplan.model import DEFAULT_SLOTS_CAP, Unreachable, predict
from capplan.optimizer import SingleTaskCache, optimize
from capplan import tables

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NEVER_SUCCEEDED = 2


class UsageError(CapPlanError):
    pass


def _profile(mb: int) -> ResourceProfile:
    try:
        return ResourceProfile(mb)
    except ValueError as exc:
        raise UsageError(f"--profile: {exc}") from exc


def _parse_config(text: Optional[str], scenario: Scenario) -> Configuration:
    graph = scenario.graph
    if text is None:
        return Configuration.ones(graph)
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--config: expected comma-separated integers, got {text!r}") from None
    if len(values) != len(graph.operators):
        raise UsageError(
            f"--config: {len(values)} values for {len(graph.operators)} operators ({', '.join(graph.operators)})"
        )
    try:
        return Configuration(dict(zip(graph.operators, values)))
    except ValueError as exc:
        raise UsageError(f"--config: {exc}") from exc


def _fmt_config(config: Configuration, scenario: Scenario) -> str:
    return " ".join(f"{op}={config[op]}" for op in scenario.graph.operators)


def _seed(args, scenario: Scenario) -> int:
    return scenario.seed if args.seed is None else args.seed


def cmd_estimate(args, out: TextIO) -> int:
    scenario = load_scenario(args.scenario)
    config = _parse_config(args.config, scenario)
    profile = _profile(args.profile[0] if args.profile else scenario.search_space.memory_values[-1])
    result = estimate_mst(scenario.spec, config, profile, scenario.ce_params, seed=_seed(args, scenario))
    out.write(
        f"scenario: {scenario.name}\n"
        f"configuration: {_fmt_config(config, scenario)}\n"
        f"profile_mb: {profile.memory_mb}\n"
        f"mst: {result.mst:.6g}\n"
        f"achieved_ratio: {result.achieved_ratio:.4f} (stddev {result.ratio_stddev:.4f})\n"
        f"iterations: {result.iterations_used}\n"
        f"source_saturated: {'yes' if result.source_saturated else 'no'}\n"
    )
    return EXIT_OK


def cmd_optimize(args, out: TextIO) -> int:
    scenario = load_scenario(args.scenario)
    if args.slots is None:
        raise UsageError("--slots is required")
    profile = _profile(args.profile[0] if args.profile else scenario.search_space.memory_values[-1])
    budget = ResourceBudget(args.slots, profile)
    co = optimize(scenario.spec, scenario.graph, budget, scenario.ce_params, SingleTaskCache(), seed=_seed(args, scenario))
    width = max(len(op) for op in scenario.graph.operators)
    lines = [f"scenario: {scenario.name}", f"slots: {args.slots}  profile_mb: {profile.memory_mb}", ""]
    lines.append(f"{'operator':<{width}}  parallelism")
    for op in scenario.graph.operators:
        lines.append(f"{op:<{width}}  {co.configuration[op]:>11}")
    lines += [
        "",
        f"predicted: {co.predicted_rate:.6g}",
        f"mst: {co.mst.mst:.6g}",
        f"single_task_mst: {co.single_task.mst:.6g}",
        f"ce_calls: {co.ce_calls}",
    ]
    out.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_plan(args, out: TextIO) -> int:
    scenario = load_scenario(args.scenario)
    if args.rate is None or not args.rate > 0:
        raise UsageError("--rate must be a positive number of events per second")
    profiles = [_profile(m) for m in (args.profile or scenario.search_space.memory_values)]
    slots_cap = args.slots if args.slots is not None else DEFAULT_SLOTS_CAP
    if slots_cap < 1:
        raise UsageError("--slots must be >= 1")

    report = explore(
        scenario.spec, scenario.graph, scenario.search_space,
        scenario.explorer_params, scenario.ce_params, seed=_seed(args, scenario),
    )
    rows, entries = [], []
    for profile in profiles:
        try:
            result = plan(report, args.rate, [profile], slots_cap, scenario.explorer_params.overprovision)
        except (MissingProfileMetrics, Unreachable) as exc:
            rows.append((profile.memory_mb, None, str(exc)))
            continue
        entry = result.entries[0]
        rows.append((profile.memory_mb, entry, ""))
        entries.append(entry)

    plan_result = PlanResult(args.rate, scenario.explorer_params.overprovision, tuple(entries))
    table = plan_table(scenario.name, scenario.graph, args.rate, rows)
    summary = (
        f"model: {report.model.family} a={report.model.a!r} b={report.model.b!r} c={report.model.c!r}\n"
        f"measurements: {report.co_calls} CO calls, {report.ce_calls} CE calls, "
        f"{report.total_sim_seconds / 60:.0f} simulated minutes\n"
    )

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "model.json").write_text(dump_json(model_to_doc(report.model)), encoding="utf-8")
    (outdir / "measurements.csv").write_text(measurements_csv(report), encoding="utf-8")
    (outdir / "report.json").write_text(
        dump_json(report_to_doc(report, plan_result, scenario.name)), encoding="utf-8"
    )
    (outdir / "plan.txt").write_text(table, encoding="utf-8")
    out.write(summary + "\n" + table)
    return EXIT_OK if entries else EXIT_INVALID


def cmd_predict(args, out: TextIO) -> int:
    if args.model is None:
        raise UsageError("--model is required")
    if args.slots is None or args.slots < 1:
        raise UsageError("--slots must be >= 1")
    if not args.profile:
        raise UsageError("--profile is required")
    model = load_model(args.model)
    for mb in args.profile:
        profile = _profile(mb)
        out.write(f"{profile.memory_mb} MB, {args.slots} slots: {predict(model, profile.memory_mb, args.slots):.6g}\n")
    return EXIT_OK


def cmd_replay_tables(args, out: TextIO) -> int:
    text, ok = tables.render(tables.replay_all())
    out.write(text)
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {
    "estimate": cmd_estimate,
    "optimize": cmd_optimize,
    "plan": cmd_plan,
    "predict": cmd_predict,
    "replay-tables": cmd_replay_tables,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capplan", description="Capacity planning for stream-processing queries.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each exploration step to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, metavar="PATH", help="scenario JSON file or shipped scenario name")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--profile", type=int, action="append", metavar="MB", help="memory per slot (repeatable)")
        p.add_argument("--slots", type=int, metavar="N")

    p = sub.add_parser("estimate", help="MST of one configuration")
    common(p)
    p.add_argument("--config", metavar="P1,P2,...", help="parallelism per operator in graph order (default all ones)")

    p = sub.add_parser("optimize", help="best configuration for a slot budget, then its MST")
    common(p)

    p = sub.add_parser("plan", help="explore, fit a model and plan for a requested rate")
    common(p)
    p.add_argument("--rate", type=float, metavar="EVENTS_PER_SEC", required=True)
    p.add_argument("--out", default="capplan-out", metavar="DIR")

    p = sub.add_parser("predict", help="evaluate a saved model")
    common(p, scenario=False)
    p.add_argument("--model", metavar="PATH", required=True)

    p = sub.add_parser("replay-tables", help="replay the published model tables")
    return parser


def main(argv: Optional[Sequence[str]] = None, out: TextIO = None, err: TextIO = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, stream=err, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except (NeverSucceeded, InsufficientObservations) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_NEVER_SUCCEEDED
    except (CapPlanError, ValueError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
