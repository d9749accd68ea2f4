"""Command-line front end.

Subcommands: simulate (one policy, one day), optimize (train the policy
along the true trajectory), compare (side-by-side report of finished runs),
dump-policy (inspect a checkpoint), bench (kernel timing parity check).

Exit codes: 0 success, 2 bad configuration or arguments, 3 run finished but
reported infeasible stages.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .policy import PolicyTable, action_probabilities, greedy_action
from .scenario import ConfigError, Scenario, load_config
from .simulate import get_kernel


def _add_common(p, *, policy_opts: bool = True) -> None:
    p.add_argument("--config", required=True, help="scenario TOML file")
    p.add_argument("--seed", type=int, required=True, help="master scenario seed")
    p.add_argument("--out", required=True, help="output directory (created)")
    if policy_opts:
        p.add_argument("--kernel", default="auto", choices=("auto", "cython", "python"))
        p.add_argument("--workers", type=int, default=1, help="rollout threads")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evgrid")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="run one charging policy over the day")
    _add_common(p)
    p.add_argument("--mode", required=True, choices=("rule", "event", "ideal"))
    p.add_argument("--policy", help="checkpoint to deploy instead of training (event mode)")

    p = sub.add_parser("optimize", help="train the event policy on the true trajectory")
    _add_common(p)
    p.add_argument("--paths", type=int, help="rollout paths per gradient estimate")
    p.add_argument("--max-iter", type=int, help="gradient iterations per stage")
    p.add_argument("--eps", type=float, help="convergence threshold on the gradient norm")

    p = sub.add_parser("compare", help="compare finished runs on one scenario")
    p.add_argument("--runs", nargs="+", required=True, help="run output directories")
    p.add_argument("--out", help="optional directory for report.txt")

    p = sub.add_parser("dump-policy", help="print a checkpoint as a table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--building", type=int, help="restrict to one building (1-based)")
    p.add_argument("--stage", type=int, help="restrict to one stage")

    p = sub.add_parser("bench", help="time the python and compiled kernels")
    p.add_argument("--config", help="scenario TOML file (default: packaged scenario)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=int, default=50)
    p.add_argument("--stages", type=int, default=8, help="stages to roll out per kernel")
    return ap


def _write_run(outdir: Path, cfg, scn, report, table=None) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    harness.write_trace_csv(outdir / "trace.csv", cfg, report)
    harness.write_scenario_csv(outdir / "scenario.csv", cfg, scn)
    harness.write_run_json(outdir / "run.json", cfg, report)
    summary = report.summary(cfg)
    lines = [
        f"run: {report.label}",
        f"scenario seed: {report.scenario_seed}",
        f"scenario hash: {report.scenario_hash}",
        f"total cost: {report.total_cost:.2f} RMB",
        f"violation stages: {summary['violation_stages']}",
        f"infeasible stages: {summary['infeasible_stages']}",
        f"unmet demand: {report.unmet_kwh:.2f} kWh",
        f"wall clock: {report.wall_clock:.1f} s",
    ]
    if report.backend:
        lines.append(f"kernel: {report.backend}")
    if summary["iterations"]:
        it = summary["iterations"]
        lines.append(
            f"iterations: total {it['total']}, mean {it['mean']:.1f}/stage, max {it['max']}"
        )
    harness.write_report_txt(outdir / "report.txt", "\n".join(lines) + "\n")
    if report.iter_logs:
        harness.write_iters_csv(outdir / "iters.csv", report.iter_logs)
    if report.stage_summaries:
        harness.write_diagnostics_jsonl(outdir / "diagnostics.jsonl", report)
    if table is not None:
        table.save(outdir / "policy.ckpt")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    scn = Scenario(cfg, args.seed)
    table = None
    if args.mode == "rule":
        report = harness.run_rule_based(cfg, args.seed)
    elif args.mode == "ideal":
        report = harness.run_ideal(cfg, args.seed)
    elif args.policy:
        report = harness.run_fixed_policy(cfg, args.seed, PolicyTable.load(args.policy))
    else:
        kernel = get_kernel(args.kernel)
        report, table = harness.run_event_based(
            cfg, args.seed, kernel=kernel, workers=args.workers
        )
    _write_run(Path(args.out), cfg, scn, report, table)
    return 3 if report.infeasible_stages else 0


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.paths is not None:
        overrides["n_paths"] = args.paths
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    if args.eps is not None:
        overrides["eps_stop"] = args.eps
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
        cfg.validate()
    scn = Scenario(cfg, args.seed)
    kernel = get_kernel(args.kernel)
    report, table = harness.run_event_based(
        cfg, args.seed, kernel=kernel, workers=args.workers
    )
    _write_run(Path(args.out), cfg, scn, report, table)
    return 3 if report.infeasible_stages else 0


def cmd_compare(args) -> int:
    summaries = []
    for d in args.runs:
        path = Path(d) / "run.json"
        if not path.exists():
            print(f"error: {path} not found", file=sys.stderr)
            return 2
        summaries.append(harness.load_run_summary(path))
    try:
        text = harness.compare_report(summaries)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        harness.write_report_txt(out / "report.txt", text)
    return 0


def cmd_dump_policy(args) -> int:
    try:
        table = PolicyTable.load(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read checkpoint: {exc}", file=sys.stderr)
        return 2
    k_all, t_all, n_bins, m = table.weights.shape
    buildings = [args.building] if args.building else range(1, k_all + 1)
    stages = [args.stage] if args.stage is not None else range(t_all)
    print(f"checkpoint: {k_all} buildings x {t_all} stages x {n_bins} bins x {m} actions")
    print("alpha grid: " + " ".join(f"{a:.2f}" for a in table.alpha))
    for k in buildings:
        for t in stages:
            for b in range(n_bins):
                w = table.cell(k, t, b)
                probs = action_probabilities(w)
                g = greedy_action(w)
                if np.allclose(probs, probs[0]):
                    continue  # untouched uniform cell
                top = " ".join(f"{p:.3f}" for p in probs)
                print(f"k={k} t={t} bin={b} greedy=a{g} (alpha={table.alpha[g]:.2f}) p=[{top}]")
    return 0


def cmd_bench(args) -> int:
    from .benchmark import run_benchmark

    result = run_benchmark(
        config=args.config, seed=args.seed, n_paths=args.paths, n_stages=args.stages
    )
    print(result)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "optimize": cmd_optimize,
        "compare": cmd_compare,
        "dump-policy": cmd_dump_policy,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.cmd](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
