"""Safety-preference sweep: hot hours versus the alpha knob.

Trains the constrained learner at alpha in {0.75, 0.85, 0.95} on a fixed
near-saturated synthetic trace and reports the mean hot-cluster count over
the final 100 training episodes, averaged across seeds. A stricter safety
preference shrinks the tolerated violation budget, so the multiplier
settles higher and the end-of-training hot counts should fall as alpha
rises.

The learner settings here keep the dual controller responsive enough to
settle inside the run: a multiplier cap just above the active region, a
warm multiplier start, a faster target-network rate, and a trailing
constraint window. They are the same values the acceptance suite freezes.

Usage:
    python3 scripts/safety_preference_sweep.py [--out runs/sweep] \
        [--seeds 0,1,2] [--episodes 800] [--alphas 0.75,0.85,0.95]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from oversub.cli import main as cli_main


def build_config(alpha: float, args: argparse.Namespace, out_dir: Path) -> dict:
    return {
        "trace": {"generator": {
            "horizon_hours": 120,
            "rng_seed": 7,
            "profiles": [{
                "arrival_rate": 6.0,
                "vm_sizes": [[8.0, 16.0, 100.0]],
                "lifetime_mean": 4.0,
                "lifetime_jitter": 1.0,
                "usage_shape": "constant",
                "mean_usage": 0.28,
                "usage_noise": 0.06,
            }],
        }},
        "cluster": {"num_pms": 3, "cpu_capacity": 96.0,
                    "mem_capacity": 1024.0, "net_capacity": 10000.0},
        "learner": {
            "alpha": alpha,
            "dual_learning_rate": 0.3,
            "lambda_init": 2.0,
            "lambda_max": 3.0,
            "tau": 0.05,
            "eps_end": 0.01,
            "eps_decay_fraction": 0.3,
            "constraint_window": 360,
        },
        "seeds": [int(s) for s in args.seeds.split(",")],
        "train_episodes": args.episodes,
        "out_dir": str(out_dir),
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/sweep")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--episodes", type=int, default=800)
    parser.add_argument("--alphas", default="0.75,0.85,0.95")
    args = parser.parse_args(argv)

    alphas = [float(a) for a in args.alphas.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    root = Path(args.out)
    results = {}
    for alpha in alphas:
        out_dir = root / f"alpha_{alpha:g}"
        out_dir.mkdir(parents=True, exist_ok=True)
        config_path = out_dir / "sweep_config.json"
        config_path.write_text(
            json.dumps(build_config(alpha, args, out_dir), indent=2) + "\n")
        rc = cli_main(["train", "--config", str(config_path)])
        if rc != 0:
            return rc
        finals = []
        for seed in seeds:
            summary = json.loads(
                (out_dir / f"summary_seed{seed}.json").read_text())
            finals.append(summary["mean_final_hot_cluster_count"])
        results[alpha] = sum(finals) / len(finals)

    print("\nalpha  mean final-100 hot-cluster count (across seeds)")
    for alpha in alphas:
        print(f"{alpha:<6g} {results[alpha]:.3f}")
    ordered = all(results[a] >= results[b]
                  for a, b in zip(alphas, alphas[1:]))
    print(f"non-increasing in alpha: {ordered}")
    (root / "sweep_summary.json").write_text(json.dumps(
        {"episodes": args.episodes, "seeds": seeds,
         "mean_final_hot_by_alpha": {f"{a:g}": results[a] for a in alphas},
         "non_increasing": ordered}, indent=2, sort_keys=True) + "\n")
    return 0 if ordered else 1


if __name__ == "__main__":
    raise SystemExit(main())
