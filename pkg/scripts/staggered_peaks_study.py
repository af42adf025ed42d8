"""Coordination study on the staggered-peaks scenario.

Two subscribers with anti-phase diurnal usage share a 32-machine fleet.
Their peaks never overlap, so a learner that mixes both tenants on each
machine can oversubscribe far harder than any per-subscriber peak rule.
This script trains the constrained learner at a 0.95 safety preference,
then builds the method-comparison table against the grid, moving-average,
and peak-predictor baselines.

Usage:
    python3 scripts/staggered_peaks_study.py [--out runs/staggered] \
        [--seeds 0,1,2] [--episodes 600] [--alpha 0.95] [--plots]

Outputs land in --out: checkpoints, training curves, per-seed summaries,
comparison.csv, and a manifest that reproduces the run bit-for-bit.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from oversub.cli import main as cli_main


def build_config(args: argparse.Namespace) -> dict:
    return {
        "trace": {"preset": "staggered_peaks"},
        "cluster": {"num_pms": 32, "cpu_capacity": 96.0,
                    "mem_capacity": 448.0, "net_capacity": 100000.0},
        "alpha": args.alpha,
        "seeds": [int(s) for s in args.seeds.split(",")],
        "train_episodes": args.episodes,
        "eval_episodes": args.eval_episodes,
        "out_dir": args.out,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/staggered")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--episodes", type=int, default=600)
    parser.add_argument("--eval-episodes", type=int, default=100)
    parser.add_argument("--alpha", type=float, default=0.95)
    parser.add_argument("--plots", action="store_true")
    args = parser.parse_args(argv)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "study_config.json"
    config_path.write_text(json.dumps(build_config(args), indent=2) + "\n")

    train_argv = ["train", "--config", str(config_path)]
    if args.plots:
        train_argv.append("--plots")
    rc = cli_main(train_argv)
    if rc != 0:
        return rc

    first_seed = args.seeds.split(",")[0]
    checkpoint = out_dir / f"checkpoint_seed{first_seed}.json"
    compare_argv = ["compare", "--config", str(config_path)]
    for spec in ("grid:0.4", "grid:0.6", "ma:24", "sl", f"c2marl:{checkpoint}"):
        compare_argv += ["--policy", spec]
    if args.plots:
        compare_argv.append("--plots")
    rc = cli_main(compare_argv)
    print(f"\ncomparison table: {out_dir / 'comparison.csv'}")
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
