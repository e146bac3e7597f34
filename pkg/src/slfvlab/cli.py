"""Command-line front end for the experiment harness.

Every subcommand reads a JSON experiment spec, runs it deterministically,
prints a short text summary, and exits 0 on pass, 1 on fail, 2 on a bad
spec. With --out it also writes report.json and one CSV per table, which
`replay` can later rerun and compare byte for byte.
"""
from __future__ import annotations

import argparse
import os
import sys

from .core import load_json
from .harness import (
    EXPERIMENT_KINDS,
    ExperimentSpec,
    StatReport,
    run_experiment,
    write_csv,
)

_SUBCOMMAND_KIND = {
    "duality": "DualityTest",
    "coalescence": "CoalescenceScan",
    "forward-ladder": "ForwardLadder",
    "exp-martingale": "ExponentialMartingaleLadder",
    "oracle": "OracleCompare",
    "analytic": "AnalyticChecks",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", required=True, help="path to a JSON experiment spec")
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed recorded in the spec")
    p.add_argument("--out", default=None,
                   help="directory for report.json and per-table CSVs")
    p.add_argument("--workers", type=int, default=1,
                   help="process count for replicate fan-out")
    p.add_argument("--budget-events", type=int, default=None,
                   help="hard cap on events per simulated path")


def _load_spec(path: str, seed_override) -> ExperimentSpec:
    spec = ExperimentSpec.from_file(path)
    if seed_override is not None:
        spec = ExperimentSpec(name=spec.name, kind=spec.kind,
                              seed=seed_override, replicates=spec.replicates,
                              settings=spec.settings)
    return spec


def _print_report(report: StatReport) -> None:
    for table_name, rows in report.tables.items():
        for row in rows:
            keys = [k for k in row if k not in ("passed",)][:6]
            cells = " ".join(f"{k}={row[k]}" for k in keys)
            print(f"[{table_name}] {cells}")
    for msg in report.failures:
        print(f"FAIL: {msg}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{report.name} ({report.kind}): {verdict} "
          f"in {report.wall_time:.1f}s")


def _run_kind(args, kind: str) -> int:
    try:
        spec = _load_spec(args.spec, args.seed)
    except (ValueError, KeyError, OSError) as exc:
        print(f"bad spec: {exc}", file=sys.stderr)
        return 2
    if spec.kind != kind:
        print(f"spec kind {spec.kind!r} does not match subcommand "
              f"(expected {kind!r})", file=sys.stderr)
        return 2
    report = run_experiment(spec, out_dir=args.out, workers=args.workers,
                            budget_events=args.budget_events)
    _print_report(report)
    return 0 if report.passed else 1


def _cmd_validate(args) -> int:
    try:
        spec = ExperimentSpec.from_file(args.spec)
    except (ValueError, KeyError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {spec.name} ({spec.kind}), seed={spec.seed}, "
          f"replicates={spec.replicates}")
    return 0


def _cmd_replay(args) -> int:
    report_path = args.report
    if os.path.isdir(report_path):
        report_path = os.path.join(report_path, "report.json")
    stored = load_json(report_path)
    spec = ExperimentSpec.from_dict(stored["spec"])
    fresh = run_experiment(spec, workers=args.workers,
                           budget_events=args.budget_events)
    same = fresh.to_dict()["tables"] == stored["tables"]
    print(f"replay of {spec.name}: tables "
          f"{'identical' if same else 'DIFFER'}")
    if args.out:
        from .harness import write_artifacts
        write_artifacts(fresh, args.out)
    return 0 if same else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="slfvlab",
        description="Scaling-limit experiments for the interacting "
                    "frequency field and its lineage dual")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a spec file and exit")
    p_val.add_argument("--spec", required=True)
    p_val.set_defaults(fn=_cmd_validate)

    for name, kind in _SUBCOMMAND_KIND.items():
        p = sub.add_parser(name, help=f"run a {kind} experiment")
        _add_run_flags(p)
        p.set_defaults(fn=lambda a, k=kind: _run_kind(a, k))

    p_rep = sub.add_parser("replay",
                           help="rerun a saved report and compare tables")
    p_rep.add_argument("--report", required=True,
                       help="report.json or a directory containing it")
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--workers", type=int, default=1)
    p_rep.add_argument("--budget-events", type=int, default=None)
    p_rep.set_defaults(fn=_cmd_replay)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
