"""Run configuration: strict JSON loading and resolution to typed configs.

A run config bundles the trace source, fleet and environment settings,
learner hyperparameters, baseline settings, and bookkeeping (seeds, output
directory, episode counts). Unknown keys anywhere are rejected so typos
cannot silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cluster import ClusterConfig
from .env import DEFAULT_ACTION_SET, EnvConfig
from .learner import LearnerConfig
from .traces import (GeneratorConfig, SubscriberProfile, TraceSet,
                     generate_synthetic, load_traces, scenario_preset)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TraceSource:
    """Exactly one of: a named preset, CSV files, or a generator config."""

    preset: str | None = None
    preset_seed: int = 0
    vms_csv: str | None = None
    usage_csv: str | None = None
    generator: GeneratorConfig | None = None

    def __post_init__(self):
        modes = [self.preset is not None,
                 self.vms_csv is not None or self.usage_csv is not None,
                 self.generator is not None]
        if sum(modes) != 1:
            raise ConfigError("trace must name exactly one source: "
                              "preset, files, or generator")
        if (self.vms_csv is None) != (self.usage_csv is None):
            raise ConfigError("trace files need both vms and usage paths")

    def load(self) -> TraceSet:
        if self.preset is not None:
            return generate_synthetic(scenario_preset(self.preset, self.preset_seed))
        if self.generator is not None:
            return generate_synthetic(self.generator)
        return load_traces(self.vms_csv, self.usage_csv)


@dataclass(frozen=True)
class BaselineSettings:
    ma_window: int = 24
    sl_margin: float = 1.05


@dataclass(frozen=True)
class EnvSettings:
    start_mode: str = "cold"
    horizon: int | None = None
    delta: float = 1.0 / 40.0
    action_set: tuple[float, ...] = DEFAULT_ACTION_SET
    reward_scale: float | None = None


@dataclass(frozen=True)
class RunConfig:
    trace: TraceSource
    cluster: ClusterConfig = ClusterConfig()
    env: EnvSettings = EnvSettings()
    learner: LearnerConfig = LearnerConfig()
    baselines: BaselineSettings = BaselineSettings()
    alpha: float | None = None
    seeds: tuple[int, ...] = (0,)
    train_episodes: int = 600
    eval_episodes: int = 100
    out_dir: str = "runs/out"

    def resolved_learner(self) -> LearnerConfig:
        cfg = self.learner
        if self.alpha is not None:
            cfg = dataclasses.replace(cfg, alpha=self.alpha)
        return dataclasses.replace(cfg, delta=self.env.delta)

    def env_config(self, trace: TraceSet) -> EnvConfig:
        return EnvConfig(cluster=self.cluster, trace=trace,
                         start_mode=self.env.start_mode,
                         horizon=self.env.horizon, delta=self.env.delta,
                         action_set=self.env.action_set,
                         reward_scale=self.env.reward_scale)


def _take(section: dict, allowed: dict[str, object], where: str) -> dict:
    """Return kwargs from a JSON object, rejecting unknown keys."""
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return dict(section)


_CLUSTER_KEYS = ("num_pms", "cpu_capacity", "mem_capacity", "net_capacity",
                 "hot_fraction")
_ENV_KEYS = ("start_mode", "horizon", "delta", "action_set", "reward_scale")
_LEARNER_KEYS = ("alpha", "delta", "gamma", "batch_size", "memory_capacity",
                 "tau", "learning_rate", "dual_learning_rate",
                 "opt_iters_per_episode", "agent_hidden", "cluster_hidden",
                 "eps_start", "eps_end", "eps_decay_fraction", "lambda_init",
                 "lambda_max", "constraint_window")
_PROFILE_KEYS = ("arrival_rate", "vm_sizes", "vm_size_weights", "lifetime_mean",
                 "lifetime_jitter", "usage_shape", "mean_usage", "usage_noise",
                 "phase", "amplitude", "burst_prob", "burst_gain")
_BASELINE_KEYS = ("ma_window", "sl_margin")
_TOP_KEYS = ("trace", "cluster", "env", "learner", "baselines", "alpha",
             "seeds", "train_episodes", "eval_episodes", "out_dir")


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _parse_trace(section: dict) -> TraceSource:
    keys = _take(section, dict.fromkeys(("preset", "seed", "files", "generator")),
                 "trace")
    preset = keys.get("preset")
    files = keys.get("files")
    generator = keys.get("generator")
    vms_csv = usage_csv = None
    if files is not None:
        fkeys = _take(files, dict.fromkeys(("vms", "usage")), "trace.files")
        vms_csv, usage_csv = fkeys.get("vms"), fkeys.get("usage")
    gen_cfg = None
    if generator is not None:
        gkeys = _take(generator,
                      dict.fromkeys(("profiles", "horizon_hours", "rng_seed",
                                     "warm_hours")), "trace.generator")
        profiles = []
        for i, prof in enumerate(gkeys.get("profiles", [])):
            pkeys = _take(prof, dict.fromkeys(_PROFILE_KEYS),
                          f"trace.generator.profiles[{i}]")
            profiles.append(SubscriberProfile(
                **{k: _tuplify(v) for k, v in pkeys.items()}))
        gen_cfg = GeneratorConfig(
            profiles=tuple(profiles),
            horizon_hours=gkeys.get("horizon_hours", 120),
            rng_seed=gkeys.get("rng_seed", 0),
            warm_hours=gkeys.get("warm_hours", 0))
    return TraceSource(preset=preset, preset_seed=keys.get("seed", 0),
                       vms_csv=vms_csv, usage_csv=usage_csv, generator=gen_cfg)


def parse_config(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    if set(doc) >= {"command", "config"}:  # a manifest; unwrap the inner config
        doc = doc["config"]
    top = _take(doc, dict.fromkeys(_TOP_KEYS), "config")
    if "trace" not in top:
        raise ConfigError("config needs a 'trace' section")
    try:
        cluster = ClusterConfig(**_take(top.get("cluster", {}),
                                        dict.fromkeys(_CLUSTER_KEYS), "cluster"))
        env_kwargs = _take(top.get("env", {}), dict.fromkeys(_ENV_KEYS), "env")
        if "action_set" in env_kwargs:
            env_kwargs["action_set"] = tuple(env_kwargs["action_set"])
        env = EnvSettings(**env_kwargs)
        learner_kwargs = _take(top.get("learner", {}),
                               dict.fromkeys(_LEARNER_KEYS), "learner")
        for k in ("agent_hidden", "cluster_hidden"):
            if k in learner_kwargs:
                learner_kwargs[k] = tuple(learner_kwargs[k])
        learner = LearnerConfig(**learner_kwargs)
        baselines = BaselineSettings(**_take(top.get("baselines", {}),
                                             dict.fromkeys(_BASELINE_KEYS),
                                             "baselines"))
        seeds = tuple(int(s) for s in top.get("seeds", [0]))
        if not seeds:
            raise ConfigError("seeds must be non-empty")
        return RunConfig(
            trace=_parse_trace(top["trace"]),
            cluster=cluster, env=env, learner=learner, baselines=baselines,
            alpha=top.get("alpha"),
            seeds=seeds,
            train_episodes=int(top.get("train_episodes", 600)),
            eval_episodes=int(top.get("eval_episodes", 100)),
            out_dir=top.get("out_dir", "runs/out"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    """Fully resolved config as a JSON-ready dict (defaults materialized)."""
    trace: dict = {}
    if cfg.trace.preset is not None:
        trace = {"preset": cfg.trace.preset, "seed": cfg.trace.preset_seed}
    elif cfg.trace.generator is not None:
        gen = cfg.trace.generator
        trace = {"generator": {
            "horizon_hours": gen.horizon_hours,
            "rng_seed": gen.rng_seed,
            "warm_hours": gen.warm_hours,
            "profiles": [dataclasses.asdict(p) for p in gen.profiles],
        }}
    else:
        trace = {"files": {"vms": cfg.trace.vms_csv, "usage": cfg.trace.usage_csv}}
    return {
        "trace": trace,
        "cluster": dataclasses.asdict(cfg.cluster),
        "env": dataclasses.asdict(cfg.env),
        "learner": dataclasses.asdict(cfg.learner),
        "baselines": dataclasses.asdict(cfg.baselines),
        "alpha": cfg.alpha,
        "seeds": list(cfg.seeds),
        "train_episodes": cfg.train_episodes,
        "eval_episodes": cfg.eval_episodes,
        "out_dir": cfg.out_dir,
    }


def config_digest(cfg: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
