"""Command line entry points: generate traces, train the learner, evaluate
policies, and compare methods side by side.

Every command takes a JSON run config (--config), writes its outputs plus a
manifest.json capturing the fully resolved configuration into the output
directory, and exits 0 only when it ran cleanly with zero placement drops.
Log verbosity comes from the OVERSUB_LOG environment variable.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GridPolicy, MovingAveragePolicy, PeakPredictorPolicy
from .config import ConfigError, RunConfig, config_digest, config_to_dict, load_config
from .evaluation import (EvaluationError, EvalReport, evaluate, report_to_json,
                         write_raw_csv)
from .learner import (CheckpointVersionMismatch, LearnerError, policy_from_checkpoint,
                      save_checkpoint, train, write_curves)
from .env import OversubEnv
from .traces import TraceError, write_traces

log = logging.getLogger("oversub.cli")


def _setup_logging() -> None:
    level_name = os.environ.get("OVERSUB_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": config_to_dict(cfg),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace,
                     episodes_field: str | None) -> RunConfig:
    updates: dict = {}
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.seed is not None:
        try:
            updates["seeds"] = tuple(int(s) for s in args.seed.split(","))
        except ValueError:
            raise ConfigError(f"--seed expects integers, got {args.seed!r}")
    if getattr(args, "alpha", None) is not None:
        updates["alpha"] = args.alpha
    if episodes_field and getattr(args, "episodes", None) is not None:
        updates[episodes_field] = args.episodes
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _build_policy(spec: str, cfg: RunConfig, trace) -> object:
    kind, _, arg = spec.partition(":")
    if kind == "grid":
        try:
            return GridPolicy(float(arg))
        except ValueError:
            raise ConfigError(f"grid rate must be a number, got {arg!r}")
    if kind == "ma":
        window = cfg.baselines.ma_window
        if arg:
            try:
                window = int(arg)
            except ValueError:
                raise ConfigError(f"ma window must be an integer, got {arg!r}")
        return MovingAveragePolicy(window)
    if kind == "sl":
        if arg:
            raise ConfigError("sl takes no argument")
        return PeakPredictorPolicy.fit(trace, margin=cfg.baselines.sl_margin,
                                       min_rate=min(cfg.env.action_set))
    if kind == "c2marl":
        if not arg:
            raise ConfigError("c2marl needs a checkpoint path: c2marl:<path>")
        return policy_from_checkpoint(arg)
    raise ConfigError(f"unknown policy spec {spec!r} "
                      "(expected grid:<rate>, ma:<window>, sl, or c2marl:<ckpt>)")


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args, None)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = cfg.trace.load()
    write_traces(trace, out_dir / "vms.csv", out_dir / "usage.csv")
    _write_manifest(out_dir, "generate", cfg)
    print(f"wrote {len(trace.vms)} VMs over {trace.horizon} hours for "
          f"{trace.num_subscribers} subscribers to {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args, "train_episodes")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = cfg.trace.load()
    env_config = cfg.env_config(trace)
    learner_cfg = cfg.resolved_learner()
    digest = config_digest(cfg)
    total_drops = 0
    for seed in cfg.seeds:
        env = OversubEnv(env_config)
        state, curves = train(env, learner_cfg, cfg.train_episodes, seed=seed)
        save_checkpoint(state, out_dir / f"checkpoint_seed{seed}.json",
                        env_config.action_set)
        write_curves(curves, out_dir / f"curves_seed{seed}.csv")
        tail = curves[-min(100, len(curves)):]
        summary = {
            "seed": seed,
            "episodes": cfg.train_episodes,
            "alpha": learner_cfg.alpha,
            "config_digest": digest,
            "final_lambda": state.lam,
            "mean_final_reward": float(np.mean([c.cum_reward for c in tail])),
            "mean_final_hot_cluster_count": float(
                np.mean([c.hot_cluster_count for c in tail])),
        }
        (out_dir / f"summary_seed{seed}.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
        total_drops += env.total_drops
        print(f"seed {seed}: lambda {state.lam:.4f}, "
              f"final-100 hot {summary['mean_final_hot_cluster_count']:.2f}")
    _write_manifest(out_dir, "train", cfg)
    if args.plots:
        _plot_curves(out_dir, cfg.seeds)
    return 0 if total_drops == 0 else 1


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args, "eval_episodes")
    if not args.policy:
        raise ConfigError("evaluate needs at least one --policy")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = cfg.trace.load()
    env_config = cfg.env_config(trace)
    digest = config_digest(cfg)
    total_drops = 0
    for spec in args.policy:
        policy = _build_policy(spec, cfg, trace)
        tag = spec.replace(":", "_").replace("/", "_")
        reports = []
        for seed in cfg.seeds:
            report = evaluate(policy, env_config, cfg.eval_episodes, seed,
                              config_digest=digest)
            reports.append(report)
            (out_dir / f"eval_{tag}_seed{seed}.json").write_text(
                json.dumps(report_to_json(report), sort_keys=True, indent=2) + "\n")
            write_raw_csv(report, out_dir / f"eval_{tag}_seed{seed}.csv")
            total_drops += report.drops
        agg = _aggregate(reports)
        (out_dir / f"eval_{tag}_summary.json").write_text(
            json.dumps(agg, sort_keys=True, indent=2) + "\n")
        print(f"{spec}: s_cores {agg['s_cores_mean']:.2f} +- "
              f"{agg['s_cores_std']:.2f}, pm_hot_r {agg['pm_hot_r_mean']:.2f}, "
              f"drops {agg['drops']}")
    _write_manifest(out_dir, "evaluate", cfg)
    return 0 if total_drops == 0 else 1


def _aggregate(reports: list[EvalReport]) -> dict:
    s = np.array([r.s_cores_mean for r in reports])
    pm = np.array([r.pm_hot_r for r in reports])
    ch = np.array([r.c_hot_r for r in reports])
    from .evaluation import SAFETY_ALPHAS, safety_indicator
    return {
        "policy": reports[0].policy,
        "config_digest": reports[0].config_digest,
        "seeds": len(reports),
        "episodes_per_seed": reports[0].episodes,
        "s_cores_mean": float(s.mean()),
        "s_cores_std": float(s.std()),
        "pm_hot_r_mean": float(pm.mean()),
        "pm_hot_r_std": float(pm.std()),
        "c_hot_r_mean": float(ch.mean()),
        "safety": {f"{a:.2f}": safety_indicator(float(pm.mean()), a)
                   for a in SAFETY_ALPHAS},
        "drops": int(sum(r.drops for r in reports)),
    }


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args, "eval_episodes")
    if not args.policy:
        raise ConfigError("compare needs at least one --policy")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = cfg.trace.load()
    env_config = cfg.env_config(trace)
    digest = config_digest(cfg)
    rows = []
    total_drops = 0
    for spec in args.policy:
        policy = _build_policy(spec, cfg, trace)
        reports = [evaluate(policy, env_config, cfg.eval_episodes, seed,
                            config_digest=digest) for seed in cfg.seeds]
        agg = _aggregate(reports)
        total_drops += agg["drops"]
        rows.append((spec, agg))
    header = ("method,s_cores_mean,s_cores_std,pm_hot_r_mean,pm_hot_r_std,"
              "c_hot_r_mean,safe_0.75,safe_0.85,safe_0.95,drops")
    lines = [header]
    for spec, agg in rows:
        lines.append(",".join([
            spec,
            repr(agg["s_cores_mean"]), repr(agg["s_cores_std"]),
            repr(agg["pm_hot_r_mean"]), repr(agg["pm_hot_r_std"]),
            repr(agg["c_hot_r_mean"]),
            str(agg["safety"]["0.75"]), str(agg["safety"]["0.85"]),
            str(agg["safety"]["0.95"]), str(agg["drops"]),
        ]))
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out_dir, "compare", cfg)
    for spec, agg in rows:
        print(f"{spec:30s} s_cores {agg['s_cores_mean']:7.2f} "
              f"pm_hot_r {agg['pm_hot_r_mean']:6.2f} "
              f"safe@0.95 {agg['safety']['0.95']}")
    if args.plots:
        _plot_comparison(out_dir, rows)
    return 0 if total_drops == 0 else 1


def _plot_curves(out_dir: Path, seeds) -> None:
    import csv as _csv
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    for seed in seeds:
        path = out_dir / f"curves_seed{seed}.csv"
        with open(path, newline="") as fh:
            rows = list(_csv.DictReader(fh))
        xs = [int(r["episode"]) for r in rows]
        axes[0].plot(xs, [float(r["cum_reward"]) for r in rows], label=f"s{seed}")
        axes[1].plot(xs, [int(r["hot_cluster_count"]) for r in rows])
        axes[2].plot(xs, [float(r["lambda"]) for r in rows])
    for ax, title in zip(axes, ("episode reward", "hot hours", "multiplier")):
        ax.set_title(title)
        ax.set_xlabel("episode")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out_dir / "curves.svg")
    plt.close(fig)


def _plot_comparison(out_dir: Path, rows) -> None:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    names = [spec for spec, _ in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.2))
    axes[0].bar(names, [agg["s_cores_mean"] for _, agg in rows])
    axes[0].set_ylabel("saved cores (%)")
    axes[1].bar(names, [agg["pm_hot_r_mean"] for _, agg in rows])
    axes[1].set_ylabel("worst-machine violation rate (%)")
    for ax in axes:
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_dir / "comparison.svg")
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oversub",
        description="Trace-driven CPU oversubscription laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, episodes_help: str | None = None):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", help="comma-separated seeds (overrides config)")
        if episodes_help:
            p.add_argument("--episodes", type=int, help=episodes_help)

    p_gen = sub.add_parser("generate", help="write a synthetic trace to CSV")
    common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train the constrained learner")
    common(p_train, "training episodes per seed")
    p_train.add_argument("--alpha", type=float, help="safety probability target")
    p_train.add_argument("--plots", action="store_true", help="write SVG curves")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate policies on resampled traces")
    common(p_eval, "evaluation episodes per seed")
    p_eval.add_argument("--alpha", type=float, help="safety probability target")
    p_eval.add_argument("--policy", action="append", default=[],
                        help="grid:<rate> | ma:<window> | sl | c2marl:<checkpoint>")
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="tabulate several policies")
    common(p_cmp, "evaluation episodes per seed")
    p_cmp.add_argument("--alpha", type=float, help="safety probability target")
    p_cmp.add_argument("--policy", action="append", default=[],
                       help="repeatable policy spec")
    p_cmp.add_argument("--plots", action="store_true", help="write SVG charts")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceError, LearnerError,
            CheckpointVersionMismatch, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
