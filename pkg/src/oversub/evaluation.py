"""Evaluation harness: run a policy over freshly resampled traces and report
saved-cores and hot-machine risk metrics.

Per episode the trace's usage rates are redrawn from per-subscriber
hour-of-day Gaussians while the VM records stay fixed, so placement patterns
are stable and only the load realization varies. An episode violates the
machine-level constraint when some machine is hot in at least a ``delta``
fraction of its hours, and the cluster-level constraint when any-machine-hot
hours reach that fraction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .env import EnvConfig, Observation, OversubEnv
from .traces import resample_for_eval

log = logging.getLogger("oversub.evaluation")

SAFETY_ALPHAS = (0.75, 0.85, 0.95)


class EvaluationError(Exception):
    pass


class NoPlacements(EvaluationError):
    """No VM was placed over the whole evaluation; saved-cores is undefined."""


class Policy(Protocol):
    name: str

    def rates(self, env: OversubEnv, obs: Observation) -> np.ndarray: ...


@dataclass(frozen=True)
class EpisodeMetrics:
    pm_hot_counts: np.ndarray
    hot_cluster_count: int
    requested_total: float
    assigned_total: float
    drops: int


@dataclass(frozen=True)
class EvalReport:
    policy: str
    config_digest: str
    episodes: int
    s_cores_mean: float
    s_cores_std: float
    pm_hot_r: float
    c_hot_r: float
    safety: dict[float, bool]
    drops: int
    delta: float
    horizon: int
    per_episode: tuple[EpisodeMetrics, ...]


def run_episode(env: OversubEnv, policy: Policy) -> EpisodeMetrics:
    """One full rollout; totals cover only VMs placed by the policy's steps."""
    obs = env.reset()
    k = env.config.cluster.num_pms
    pm_hot = np.zeros(k, dtype=np.int64)
    hot_cluster = 0
    requested = 0.0
    assigned = 0.0
    drops = 0
    while not env.done:
        rates = policy.rates(env, obs)
        result = env.step_rates(rates)
        pm_hot += result.info.hot_pms
        hot_cluster += result.constraint_cost
        requested += result.info.requested_now
        assigned += result.info.assigned_now
        drops += result.info.drops
        obs = result.observation
    return EpisodeMetrics(pm_hot_counts=pm_hot, hot_cluster_count=hot_cluster,
                          requested_total=requested, assigned_total=assigned,
                          drops=drops)


def s_cores(metrics: Sequence[EpisodeMetrics]) -> float:
    """Saved cores as a percentage of requested cores, pooled over episodes."""
    requested = sum(m.requested_total for m in metrics)
    assigned = sum(m.assigned_total for m in metrics)
    if requested <= 0:
        raise NoPlacements("no cores were requested across the evaluation")
    return float(100.0 * (1.0 - assigned / requested))


def s_cores_per_episode(metrics: Sequence[EpisodeMetrics]) -> np.ndarray:
    out = []
    for m in metrics:
        if m.requested_total <= 0:
            raise NoPlacements("an episode placed no VMs")
        out.append(100.0 * (1.0 - m.assigned_total / m.requested_total))
    return np.array(out)


def pm_hot_r(metrics: Sequence[EpisodeMetrics], delta: float,
             horizon: int) -> float:
    """Worst machine's violation frequency, in percent: the max over machines
    of the fraction of episodes where that machine was hot in at least a
    delta fraction of hours."""
    if not metrics:
        raise EvaluationError("no episodes")
    counts = np.stack([m.pm_hot_counts for m in metrics])
    violations = counts / horizon >= delta
    return 100.0 * float(violations.mean(axis=0).max())


def c_hot_r(metrics: Sequence[EpisodeMetrics], delta: float,
            horizon: int) -> float:
    """Fraction of episodes (percent) whose any-machine-hot hours reach the
    delta fraction."""
    if not metrics:
        raise EvaluationError("no episodes")
    flags = [m.hot_cluster_count / horizon >= delta for m in metrics]
    return 100.0 * float(np.mean(flags))


def safety_indicator(pm_hot_rate: float, alpha: float) -> bool:
    """True when the worst machine violates rarely enough for level alpha."""
    return (100.0 - pm_hot_rate) / 100.0 >= alpha


def evaluate(policy: Policy, env_config: EnvConfig, episodes: int,
             rng_seed: int, config_digest: str = "",
             alphas: Sequence[float] = SAFETY_ALPHAS) -> EvalReport:
    """Run ``episodes`` independently resampled rollouts of ``policy``."""
    if episodes < 1:
        raise EvaluationError("episodes must be >= 1")
    per_episode: list[EpisodeMetrics] = []
    for e in range(episodes):
        child = np.random.SeedSequence([rng_seed, e])
        trace = resample_for_eval(env_config.trace, child)
        env = OversubEnv(replace(env_config, trace=trace))
        per_episode.append(run_episode(env, policy))

    delta = env_config.delta
    horizon = env_config.episode_length
    pooled = s_cores(per_episode)
    by_episode = s_cores_per_episode(per_episode)
    pm_rate = pm_hot_r(per_episode, delta, horizon)
    return EvalReport(
        policy=policy.name,
        config_digest=config_digest,
        episodes=episodes,
        s_cores_mean=pooled,
        s_cores_std=float(by_episode.std()),
        pm_hot_r=pm_rate,
        c_hot_r=c_hot_r(per_episode, delta, horizon),
        safety={float(a): safety_indicator(pm_rate, a) for a in alphas},
        drops=sum(m.drops for m in per_episode),
        delta=delta,
        horizon=horizon,
        per_episode=tuple(per_episode),
    )


def report_to_json(report: EvalReport) -> dict:
    return {
        "policy": report.policy,
        "config_digest": report.config_digest,
        "episodes": report.episodes,
        "s_cores_mean": report.s_cores_mean,
        "s_cores_std": report.s_cores_std,
        "pm_hot_r": report.pm_hot_r,
        "c_hot_r": report.c_hot_r,
        "safety": {f"{a:.2f}": v for a, v in sorted(report.safety.items())},
        "drops": report.drops,
        "delta": report.delta,
        "horizon": report.horizon,
    }


def write_raw_csv(report: EvalReport, path: str | Path) -> None:
    lines = ["episode,s_cores,max_pm_hot_count,hot_cluster_count,drops"]
    for e, m in enumerate(report.per_episode):
        sc = float(100.0 * (1.0 - m.assigned_total / m.requested_total))
        lines.append(f"{e},{sc!r},{int(m.pm_hot_counts.max(initial=0))},"
                     f"{m.hot_cluster_count},{m.drops}")
    Path(path).write_text("\n".join(lines) + "\n")
