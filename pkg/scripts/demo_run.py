"""Run the bundled default experiment through the Python API.

Equivalent to `overlaplab run configs/default.toml` but shows the
programmatic entry points: load_config -> run_experiment -> summarize.

Usage:
    python3 scripts/demo_run.py [--out-dir DIR] [--jobs J] [--budget-scale S]
"""
import argparse
import sys
from pathlib import Path

from overlaplab.config import load_config
from overlaplab.runner import run_experiment, summarize

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.toml"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out-dir", default="overlaplab_out")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--budget-scale", type=float, default=1.0)
    args = parser.parse_args()

    config = load_config(args.config)
    result = run_experiment(config, seed=None, out_dir=args.out_dir,
                            jobs=args.jobs, budget_scale=args.budget_scale)
    text, code = summarize(result.out_dir / "manifest.json")
    print(text)
    print(f"artifacts in {result.out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
