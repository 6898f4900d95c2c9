"""Command-line entry points: experiment grids, convergence studies and
trace audits. Exit code is nonzero whenever an audit or episode fails."""
from __future__ import annotations

import argparse
import json
import sys

from .bench import ExperimentSpec, audit_trace_file, run_convergence_study, run_experiment


def _cmd_run(args) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    if args.workers is not None:
        spec.workers = args.workers
    result = run_experiment(spec)
    failures = sum(r["failed"] for r in result["rows"])
    for cell in result["table"]:
        print(
            f"{cell['planner']:>10} budget={cell['budget']:<8} "
            f"succ={cell['success_rate']:.2f} "
            f"reward={cell['mean_total_reward']:.1f} +- {cell['ci95_half_width']:.1f}"
        )
    print(f"wrote {result['output_dir']}/results.csv ({failures} failed episodes)")
    return 1 if failures else 0


def _cmd_converge(args) -> int:
    rows = run_convergence_study(
        model_id=args.model,
        delta=args.delta,
        eta=args.eta,
        k_max=args.kmax,
        scheme=args.scheme,
        out_path=args.out,
        seed=args.seed,
        eval_every=args.eval_every,
    )
    last = rows[-1]
    print(
        f"{args.model} scheme={args.scheme} delta={args.delta} eta={args.eta}: "
        f"k={last['k']} error={last['error']:.6g} "
        f"thm1={last['thm1_bound']:.6g} thm2={last['thm2_bound']:.6g}"
    )
    if args.out:
        print(f"wrote {args.out}")
    violations = [r for r in rows if r["error"] > r["thm1_bound"] + r["projection_term"]]
    return 1 if violations else 0


def _cmd_audit(args) -> int:
    problems = audit_trace_file(args.trace, scenario_id=args.scenario)
    if problems:
        for p in problems:
            print(f"AUDIT FAIL: {p}")
        return 1
    print("trace audit clean")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="porpi-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid from a spec file")
    p_run.add_argument("--spec", required=True, help="JSON experiment spec")
    p_run.add_argument("--workers", type=int, default=None, help="parallel episode workers")
    p_run.set_defaults(func=_cmd_run)

    p_conv = sub.add_parser("converge", help="tabular scheme convergence study")
    p_conv.add_argument("--model", required=True, help="discrete-suite model id")
    p_conv.add_argument("--delta", type=float, required=True, help="covering radius")
    p_conv.add_argument("--eta", type=float, default=1.0, help="softmax temperature")
    p_conv.add_argument("--kmax", type=int, default=200)
    p_conv.add_argument("--scheme", choices=("exact", "sync"), default="exact")
    p_conv.add_argument("--seed", type=int, default=0)
    p_conv.add_argument("--eval-every", type=int, default=1)
    p_conv.add_argument("--out", default=None, help="CSV output path")
    p_conv.set_defaults(func=_cmd_converge)

    p_audit = sub.add_parser("audit", help="recompute and verify a trace file")
    p_audit.add_argument("--trace", required=True)
    p_audit.add_argument("--scenario", default=None, help="scenario id for NFZ checks")
    p_audit.set_defaults(func=_cmd_audit)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
