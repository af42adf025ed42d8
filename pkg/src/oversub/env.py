"""Hourly decision environment over a trace and a machine fleet.

Each step covers one hour: expired VMs leave, each subscriber's arriving VMs
are placed best-fit at the rate that subscriber chose, machine usage and hot
flags are measured, and the team earns the cores saved by oversubscribing.
One agent per subscriber; an agent only "acts" on hours where it has
arrivals, which the observation mask records.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cluster import Cluster, ClusterConfig, NoFeasiblePm, hot_indicators
from .traces import TraceSet

log = logging.getLogger("oversub.env")

DEFAULT_ACTION_SET = (0.2, 0.3, 0.4, 0.5, 0.6, 1.0)

AGENT_OBS_DIM = 9  # 7 resource components + hour sin/cos


class EnvError(Exception):
    pass


class ResetError(EnvError):
    """Warm start could not place a pre-existing VM."""


@dataclass(frozen=True)
class EnvConfig:
    cluster: ClusterConfig
    trace: TraceSet
    start_mode: str = "cold"
    horizon: int | None = None          # default: trace horizon
    delta: float = 1.0 / 40.0           # tolerated hot-hour frequency
    action_set: tuple[float, ...] = DEFAULT_ACTION_SET
    reward_scale: float | None = None   # default: fleet CPU capacity

    def __post_init__(self):
        if self.start_mode not in ("cold", "warm"):
            raise ValueError(f"start_mode must be cold or warm, got {self.start_mode!r}")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must be in (0, 1]")
        if not self.action_set:
            raise ValueError("action_set must be non-empty")
        rates = self.action_set
        if any(not (0.0 < r <= 1.0) for r in rates):
            raise ValueError("action_set rates must lie in (0, 1]")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("action_set must be strictly increasing")
        if rates[-1] != 1.0:
            raise ValueError("action_set must contain the no-oversubscription rate 1.0")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def episode_length(self) -> int:
        return self.horizon if self.horizon is not None else self.trace.horizon

    @property
    def reward_denominator(self) -> float:
        if self.reward_scale is not None:
            return self.reward_scale
        return self.cluster.num_pms * self.cluster.cpu_capacity


@dataclass(frozen=True)
class Observation:
    """Per-agent views plus the shared cluster-level vector.

    ``agent_obs[i]`` holds subscriber i's live assigned cores, live requested
    cores, reserved mem, reserved net, and this hour's arriving requests
    (cores, mem, net), all as fractions of fleet capacity, followed by the
    hour-of-day encoding. ``cluster_vec`` concatenates every agent's seven
    resource components and appends the hour encoding once. ``masks[i]`` is
    1 when subscriber i has arrivals to decide on this hour.
    """

    agent_obs: np.ndarray
    cluster_vec: np.ndarray
    masks: np.ndarray


@dataclass(frozen=True)
class StepInfo:
    hot_pms: np.ndarray
    usage: np.ndarray
    requested_now: float
    assigned_now: float
    drops: int


@dataclass(frozen=True)
class StepResult:
    reward: float
    constraint_cost: int
    observation: Observation
    done: bool
    info: StepInfo


def hour_encoding(t: int) -> tuple[float, float]:
    """(sin, cos) encoding of the hour of day for hour index ``t``."""
    angle = 2.0 * math.pi * (t % 24) / 24.0
    return math.sin(angle), math.cos(angle)


def constraint_cost_cluster(hot: np.ndarray) -> int:
    """Cluster-level hot cost: 1 iff any machine is hot this hour."""
    return int(np.max(hot, initial=0))


class OversubEnv:
    """Deterministic simulator: same config and action sequence, same run."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.trace = config.trace
        self.num_agents = config.trace.num_subscribers
        self._norm = np.array([
            config.cluster.num_pms * config.cluster.cpu_capacity,
            config.cluster.num_pms * config.cluster.mem_capacity,
            config.cluster.num_pms * config.cluster.net_capacity,
        ])
        self.cluster: Cluster | None = None
        self._t = 0
        self._done = True
        self._drops = 0
        self._total_drops = 0

    @property
    def t(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    @property
    def drops(self) -> int:
        """Placement failures since the last reset."""
        return self._drops

    @property
    def total_drops(self) -> int:
        """Placement failures over the environment's whole lifetime."""
        return self._total_drops

    def reset(self, rng_seed: int | None = None) -> Observation:
        """Empty the fleet (cold) or replay pre-existing VMs at rate 1 (warm).

        The environment itself is deterministic; ``rng_seed`` is accepted for
        interface stability and ignored.
        """
        del rng_seed
        self.cluster = Cluster(self.config.cluster)
        self._t = 0
        self._done = False
        self._drops = 0
        n = self.num_agents
        self._live_assigned = np.zeros(n)
        self._live_requested = np.zeros(n)
        self._live_mem = np.zeros(n)
        self._live_net = np.zeros(n)
        if self.config.start_mode == "warm":
            for vm in self.trace.warm_vms:
                try:
                    self.cluster.best_fit_place(vm, 1.0)
                except NoFeasiblePm as exc:
                    raise ResetError(f"warm start failed: {exc}") from exc
                self._account_place(vm.subscriber_id, 1.0 * vm.requested_cores, vm)
        return self._observe()

    def _account_place(self, sub: int, assigned: float, vm) -> None:
        self._live_assigned[sub] += assigned
        self._live_requested[sub] += vm.requested_cores
        self._live_mem[sub] += vm.requested_mem
        self._live_net[sub] += vm.requested_net

    def step(self, joint_action: Sequence[int]) -> StepResult:
        """Advance one hour with per-agent indexes into the action set."""
        action_set = self.config.action_set
        rates = []
        for i, a in enumerate(joint_action):
            a = int(a)
            if not (0 <= a < len(action_set)):
                raise EnvError(f"agent {i}: action index {a} out of range")
            rates.append(action_set[a])
        return self.step_rates(rates)

    def step_rates(self, rates: Sequence[float]) -> StepResult:
        """Advance one hour with explicit per-agent rates in (0, 1]."""
        if self._done or self.cluster is None:
            raise EnvError("episode is finished; call reset()")
        if len(rates) != self.num_agents:
            raise EnvError(f"need {self.num_agents} rates, got {len(rates)}")
        for i, rate in enumerate(rates):
            if not (0.0 < rate <= 1.0):
                raise EnvError(f"agent {i}: rate {rate!r} outside (0, 1]")

        t = self._t
        for vm_id in self.trace.deletions_at(t):
            if vm_id in self.cluster.placements:
                placement = self.cluster.delete_vm(vm_id)
                vm = self.trace.record(vm_id)
                self._live_assigned[vm.subscriber_id] -= placement.assigned_cores
                self._live_requested[vm.subscriber_id] -= vm.requested_cores
                self._live_mem[vm.subscriber_id] -= placement.reserved_mem
                self._live_net[vm.subscriber_id] -= placement.reserved_net

        requested_now = 0.0
        assigned_now = 0.0
        drops = 0
        for vm in self.trace.arrivals_at(t):
            rate = rates[vm.subscriber_id]
            try:
                self.cluster.best_fit_place(vm, rate)
            except NoFeasiblePm:
                drops += 1
                log.warning("t=%d: dropped %s (%.1f cores at rate %.2f)",
                            t, vm.vm_id, vm.requested_cores, rate)
                continue
            assigned = rate * vm.requested_cores
            requested_now += vm.requested_cores
            assigned_now += assigned
            self._account_place(vm.subscriber_id, assigned, vm)
        self._drops += drops
        self._total_drops += drops

        usage = self.cluster.actual_usage_per_pm(self.trace, t)
        hot = hot_indicators(usage, self.config.cluster)
        cost = constraint_cost_cluster(hot)
        reward = (requested_now - assigned_now) / self.config.reward_denominator

        self._t = t + 1
        self._done = self._t >= self.config.episode_length
        return StepResult(
            reward=reward,
            constraint_cost=cost,
            observation=self._observe(),
            done=self._done,
            info=StepInfo(hot_pms=hot, usage=usage, requested_now=requested_now,
                          assigned_now=assigned_now, drops=drops),
        )

    def _observe(self) -> Observation:
        n = self.num_agents
        t = self._t
        req_cores = np.zeros(n)
        req_mem = np.zeros(n)
        req_net = np.zeros(n)
        if t < self.config.episode_length:
            for vm in self.trace.arrivals_at(t):
                req_cores[vm.subscriber_id] += vm.requested_cores
                req_mem[vm.subscriber_id] += vm.requested_mem
                req_net[vm.subscriber_id] += vm.requested_net
        cpu_n, mem_n, net_n = self._norm
        resources = np.stack([
            self._live_assigned / cpu_n,
            self._live_requested / cpu_n,
            self._live_mem / mem_n,
            self._live_net / net_n,
            req_cores / cpu_n,
            req_mem / mem_n,
            req_net / net_n,
        ], axis=1)
        sin_t, cos_t = hour_encoding(t)
        hour = np.full((n, 2), (sin_t, cos_t))
        agent_obs = np.concatenate([resources, hour], axis=1)
        cluster_vec = np.concatenate([resources.reshape(-1), [sin_t, cos_t]])
        masks = (req_cores > 0).astype(np.float64)
        return Observation(agent_obs=agent_obs, cluster_vec=cluster_vec, masks=masks)
