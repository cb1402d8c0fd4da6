"""Command-line entry point.

Subcommands:
  run        one strategy pair over one or more seeds
  matrix     a set of strategy pairs (default: the full comparison matrix)
  correlate  contribution vs copyright-loss scatter data for one seed

Every command writes its reports under --out (or COPYBUDGET_OUT). The exit
code is nonzero when any episode fails.
"""

from __future__ import annotations

import argparse
import sys

from .allocators import ALL_PAIR_NAMES, StrategyPair, parse_inner, parse_outer
from .config import ConfigError, load_or_default
from .harness import correlate, emit_correlation, emit_reports, run_matrix


def _parse_seeds(text: str | None, default_seed: int) -> list[int]:
    if not text:
        return [default_seed]
    try:
        return [int(chunk) for chunk in text.split(",") if chunk.strip() != ""]
    except ValueError:
        raise ConfigError(f"seeds must be comma-separated integers, got {text!r}") from None


def _parse_pairs(text: str) -> list[StrategyPair]:
    if text.strip().lower() == "all":
        return [StrategyPair.parse(name) for name in ALL_PAIR_NAMES]
    return [StrategyPair.parse(chunk) for chunk in text.split(",") if chunk.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copybudget",
        description="Copyright-aware budget allocation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one strategy pair")
    run.add_argument("--config", help="JSON config file (defaults used if omitted)")
    run.add_argument("--outer", default="RL", help="outer strategy: RL, G, L or R")
    run.add_argument("--inner", default="RL", help="inner strategy: RL, L, R, C or CL")
    run.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    run.add_argument("--out", help="output directory (default: config out_dir)")

    matrix = sub.add_parser("matrix", help="run a matrix of strategy pairs")
    matrix.add_argument("--config", help="JSON config file")
    matrix.add_argument(
        "--pairs",
        default="all",
        help='"all" or a comma-separated list like "RL+RL,G+L,R+R"',
    )
    matrix.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    matrix.add_argument("--out", help="output directory")

    corr = sub.add_parser("correlate", help="contribution vs copyright-loss analysis")
    corr.add_argument("--config", help="JSON config file")
    corr.add_argument("--seed", type=int, help="seed (default: config seed)")
    corr.add_argument("--out", help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_or_default(args.config)
        out_dir = args.out or cfg.out_dir

        if args.command == "run":
            pair = StrategyPair(outer=parse_outer(args.outer), inner=parse_inner(args.inner))
            seeds = _parse_seeds(args.seeds, cfg.seed)
            reports = run_matrix(cfg, [pair], seeds)
            paths = emit_reports(reports, out_dir)
            report = reports[0]
            print(
                f"{report.pair}: mean Q = {report.mean_q:.6f} (std {report.std_q:.6f}, "
                f"{len(seeds)} seed(s)) -> {paths['summary']}"
            )
        elif args.command == "matrix":
            pairs = _parse_pairs(args.pairs)
            seeds = _parse_seeds(args.seeds, cfg.seed)
            reports = run_matrix(cfg, pairs, seeds)
            paths = emit_reports(reports, out_dir)
            for report in reports:
                print(f"{report.pair}: mean Q = {report.mean_q:.6f} +- {report.std_q:.6f}")
            print(f"reports -> {paths['summary'].parent}")
        else:
            seed = args.seed if args.seed is not None else cfg.seed
            report = correlate(cfg, seed)
            path = emit_correlation(report, out_dir)
            print(
                f"spearman rho = {report.rho:.6f} over {len(report.sample_ids)} samples "
                f"(group A: {int(report.group_a.sum())}, group B: {int(report.group_b.sum())}) "
                f"-> {path}"
            )
        return 0
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
