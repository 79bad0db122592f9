"""Command line entry point: ``run`` and ``sweep-c``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import ExperimentSpec, emit_outputs, run_experiment, sweep_C
from .policies import ALGORITHMS
from .presets import PRESETS


def _csv_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), default=None)
    src.add_argument("--spec", dest="sem_file", metavar="FILE", help="SEM description (JSON)")
    p.add_argument("--algo", default=",".join(ALGORITHMS),
                   help=f"comma separated subset of {', '.join(ALGORITHMS)}")
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--budget-c", type=float, default=100.0)
    p.add_argument("--adversary", choices=["none", "front-loaded", "file"], default="front-loaded")
    p.add_argument("--schedule", metavar="FILE", help="deviation schedule (JSON); implies --adversary file")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--delta-override", type=float, default=None, help="confidence level (default 1/(2NT))")
    p.add_argument("--actions", choices=["distinct", "power-set"], default="distinct")
    p.add_argument("--regret", choices=["nominal", "dynamic"], default="nominal")
    p.add_argument("--realized", action="store_true", help="account regret with sampled rewards")
    p.add_argument("--clip", choices=["min", "radial"], default="min")
    p.add_argument("--radius", choices=["normalized", "theory"], default="normalized")
    p.add_argument("--radius-scale", type=float, default=1.0)
    p.add_argument("--dump-every", type=int, default=None, metavar="K",
                   help="write estimator snapshots every K rounds (run only)")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-lcb", description="Causal bandits under model deviations.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="regret curves for one budget C")
    _common(run)
    sweep = sub.add_parser("sweep-c", help="final regret across budgets C")
    _common(sweep)
    sweep.add_argument("--c-values", type=_float_list, default=[0, 2, 15, 200, 2000])
    sweep.add_argument("--jobs", type=int, default=1)
    return parser


def spec_from_args(args) -> ExperimentSpec:
    adversary = "file" if args.schedule else args.adversary
    if adversary == "file" and not args.schedule:
        raise ValueError("--adversary file needs --schedule")
    return ExperimentSpec(
        preset=None if args.sem_file else (args.preset or "hierarchical"),
        sem_file=args.sem_file, adversary=adversary, budget_C=args.budget_c,
        schedule_file=args.schedule, policies=_csv_list(args.algo), horizon=args.horizon,
        reps=args.reps, seed=args.seed, actions=args.actions, delta=args.delta_override,
        clip=args.clip, radius=args.radius, radius_scale=args.radius_scale, regret=args.regret,
        realized=args.realized, dump_every=args.dump_every, out_dir=args.out,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        spec.validate()
        if args.command == "run":
            snapshots: dict[str, list] = {}
            summaries = run_experiment(spec, snapshots)
            files = emit_outputs(args.out, spec, summaries, plots=not args.no_plots, snapshots=snapshots)
            for name, s in summaries.items():
                print(f"{name}: R(T) = {s.final_mean:.2f} +- {s.final_stderr:.2f}")
        else:
            if spec.schedule_file:
                raise ValueError("sweep-c generates its own schedules; drop --schedule")
            rows = sweep_C(spec, args.c_values, args.jobs)
            files = emit_outputs(args.out, spec, sweep_rows=rows, plots=not args.no_plots)
            for r in rows:
                print(f"{r['policy']}: C = {r['C']:g}  R(T) = {r['final_regret']:.2f} +- {r['stderr']:.2f}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f"wrote {f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
