"""Command-line entry points.

    overlaplab run <config> [--seed N] [--out-dir DIR] [--jobs N]
                            [--budget-scale X]
    overlaplab summarize <manifest> [--out-dir DIR]

Exit codes: 0 all asserted tests pass, 1 test failure or missing reports,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .runner import run_experiment, summarize


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overlaplab",
        description="Overlap-structure identity tests on reference random "
                    "measures and finite spin models.")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute all suites of a config")
    runp.add_argument("config", help="TOML (or JSON) experiment file")
    runp.add_argument("--seed", type=int, default=None,
                      help="override the config's master_seed")
    runp.add_argument("--out-dir", default=None,
                      help="directory for reports and the manifest")
    runp.add_argument("--jobs", type=int, default=None,
                      help="parallel suite workers")
    runp.add_argument("--budget-scale", type=float, default=1.0,
                      help="multiply all sampling budgets (e.g. 0.1 for a "
                           "quick pass, 10 for a thorough one)")

    summ = sub.add_parser("summarize", help="tabulate a finished run")
    summ.add_argument("manifest", help="manifest.json (or its directory)")
    summ.add_argument("--out-dir", default=None,
                      help="where to write the CSV and plot data files "
                           "(default: next to the manifest)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            result = run_experiment(config, seed=args.seed,
                                    out_dir=args.out_dir, jobs=args.jobs,
                                    budget_scale=args.budget_scale)
            text, _code = summarize(result.out_dir / "manifest.json")
            print(text)
            if result.exit_code != 0:
                failing = [
                    f"suite {entry['suite']} ({entry['kind']})"
                    for entry in result.manifest["suite_statuses"]
                    if "fail" in entry["statuses"]]
                print("failing: " + ", ".join(failing), file=sys.stderr)
            return result.exit_code
        text, code = summarize(args.manifest, out_dir=args.out_dir)
        print(text)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
