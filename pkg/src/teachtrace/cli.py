"""Command-line entry points: train, ablate, gradcheck, report."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .gradcheck import standard_suite
from .harness import (
    ExperimentConfig,
    apply_preset,
    emit_reports,
    load_config,
    load_metrics_csv,
    run_experiment,
    run_seed,
    summarize,
)

ABLATION_COMPONENTS = {
    "basic": {"knowledge_tracing": False, "gated_attention": False},
    "kt": {"knowledge_tracing": True, "gated_attention": False},
    "full": {"knowledge_tracing": True, "gated_attention": True},
}


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="TOML experiment file")
    parser.add_argument("--seed", type=int, action="append", default=None,
                        help="run this seed (repeatable; replaces the config's list)")
    parser.add_argument("--student", default=None, help="student kind for both phases")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--episodes", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--preset", choices=("desk", "paper"), default=None,
                        help="episode/step budget preset")


def _resolve_config(args: argparse.Namespace, teacher: str | None = None) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.preset:
        config = apply_preset(config, args.preset)
    overrides: dict = {}
    if teacher is not None:
        overrides["teacher"] = teacher
    elif getattr(args, "teacher", None):
        overrides["teacher"] = args.teacher
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.student:
        overrides["student_phase1"] = args.student
        overrides["student_phase2"] = args.student
    if args.out:
        overrides["out_dir"] = args.out
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.steps is not None:
        overrides["steps"] = args.steps
    return replace(config, **overrides) if overrides else config


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out = run_experiment(config)
    print(f"wrote artifacts for teacher={config.teacher} seeds={list(config.seeds)} to {out}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    base = _resolve_config(args)
    root = Path(base.out_dir)
    rows = []
    for variant, teacher in (("basic", "kadt_basic"), ("kt", "kadt_kt"), ("full", "kadt")):
        config = replace(base, teacher=teacher, out_dir=str(root / variant))
        all_logs = []
        for seed in config.seeds:
            all_logs.extend(run_seed(config, seed))
        emit_reports(config.out_dir, all_logs)
        stats = summarize(all_logs)["teachers"][teacher]["phase2_test_accuracy"]
        rows.append((variant, teacher, stats["mean"], stats["std"]))
    print(f"{'variant':<8} {'teacher':<12} {'kt':<5} {'attn':<5} {'test_acc':<10} std")
    for variant, teacher, mean, std in rows:
        flags = ABLATION_COMPONENTS[variant]
        print(f"{variant:<8} {teacher:<12} {str(flags['knowledge_tracing']):<5} "
              f"{str(flags['gated_attention']):<5} {mean:<10.4f} {std:.4f}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = standard_suite(args.seed, tol=args.tol)
    failed = False
    for name, report in reports:
        status = "ok" if report.passed else "FAIL"
        print(f"{name:<18} {status:<5} max_rel_err={report.max_rel_err:.3e} "
              f"tol={report.tol:.1e} worst={report.worst}")
        failed = failed or not report.passed
    return 1 if failed else 0


def cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.dir)
    files = sorted(out.glob("metrics_*.csv"))
    if not files:
        print(f"no metrics_<seed>.csv files under {out}", file=sys.stderr)
        return 1
    all_logs = []
    for path in files:
        all_logs.extend(load_metrics_csv(path))
    emit_reports(out, all_logs)
    print(f"re-aggregated {len(files)} metrics files into {out / 'curves.csv'} and {out / 'summary.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teachtrace", description="Adaptive data teaching experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one teacher across seeds, both phases")
    _add_override_flags(p_train)
    p_train.add_argument("--teacher", default=None,
                         help="kadt | kadt_kt | kadt_basic | l2t | spl | random")
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the basic/kt/full component ablation")
    _add_override_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_grad = sub.add_parser("gradcheck", help="finite-difference checks for every block")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--tol", type=float, default=1e-3)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_report = sub.add_parser("report", help="rebuild curves.csv and summary.json from metrics files")
    p_report.add_argument("dir", help="directory holding metrics_<seed>.csv files")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
