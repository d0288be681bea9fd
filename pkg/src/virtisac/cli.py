"""Command line entry point: ``virtisac run|list-experiments|validate``."""
from __future__ import annotations

import argparse
import sys

from .scenario import FORMATS, RUNNERS, ConfigError, ScenarioConfig, run_experiment, write_outputs

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="virtisac", description="Virtual-aperture ISAC scenario runner")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a YAML config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="output directory (default: output.path or ./out)")
    run.add_argument("--format", choices=FORMATS, help="output format")
    run.add_argument("--trials", type=int, help="override mc_trials")
    run.add_argument("--quiet", action="store_true", help="suppress the summary")

    sub.add_parser("list-experiments", help="list experiment names")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for name, (_, desc) in RUNNERS.items():
            print(f"{name}  {desc}")
        return EXIT_OK
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({cfg.experiment})")
            return EXIT_OK
        cfg = cfg.with_overrides(args.seed, args.trials, args.out, args.format)
        report = run_experiment(cfg)
        fmt = cfg.output.get("format", "csv")
        paths = write_outputs(report, cfg.output.get("path", "out"), fmt)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        for m in report.metrics:
            print(f"{'PASS' if m.passed else 'FAIL'}  {m.name} = {m.value:.6g}  ({m.tolerance})")
        print(f"{report.experiment}: {'PASS' if report.passed else 'FAIL'}  "
              f"seed={report.seed} trials={report.mc_trials} version={report.version} "
              f"wall={report.wall_time:.2f}s")
        for p in paths:
            print(f"wrote {p}")
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
