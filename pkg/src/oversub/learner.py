"""Chance-constrained multi-agent Q-learner with value decomposition.

One Q network per subscriber scores that agent's local observation; a shared
cluster network scores the joint state. The team value is the cluster score
plus the masked sum of per-agent scores, so the greedy joint action
decomposes into independent per-agent argmaxes. Safety enters through a
Lagrange multiplier on the hot-hour frequency: the shaped reward is
``r + lam * (budget - cost)`` and the multiplier climbs whenever the measured
hot frequency overshoots the budget ``(1 - alpha) * delta``.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import Observation, OversubEnv
from .nets import (AdamState, MlpParams, adam_step, clone_params,
                   flatten_params, mlp_backward, mlp_forward,
                   mlp_forward_cached, unflatten_params, zeros_like_params)

log = logging.getLogger("oversub.learner")

CHECKPOINT_VERSION = 1


class LearnerError(Exception):
    pass


class NonFiniteLoss(LearnerError):
    """Loss or gradient blew up; carries the offending value."""


class CheckpointVersionMismatch(LearnerError):
    """Checkpoint file missing, malformed, or from an incompatible version."""


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters. ``alpha`` is the target safety probability and
    ``delta`` the tolerated hot-hour frequency; together they fix the
    per-step cost budget ``(1 - alpha) * delta``."""

    alpha: float = 0.95
    delta: float = 1.0 / 40.0
    gamma: float = 0.9
    batch_size: int = 10
    memory_capacity: int = 360
    tau: float = 0.001
    learning_rate: float = 1e-3
    dual_learning_rate: float = 0.05
    opt_iters_per_episode: int = 10
    agent_hidden: tuple[int, ...] = (64, 64)
    cluster_hidden: tuple[int, ...] = (128, 128)
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.6
    lambda_init: float = 0.0
    lambda_max: float | None = None
    constraint_window: int | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must be in (0, 1]")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must be in [0, 1)")
        if self.batch_size < 1 or self.memory_capacity < self.batch_size:
            raise ValueError("memory_capacity must be >= batch_size >= 1")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")

    @property
    def cost_budget(self) -> float:
        return (1.0 - self.alpha) * self.delta


@dataclass
class QNetworks:
    """Online or target parameter set: one shared state-value network over the
    cluster vector plus one per-agent network mapping a local observation to
    action values."""

    cluster: MlpParams
    agents: list[MlpParams]

    @classmethod
    def init(cls, num_agents: int, obs_dim: int, cluster_dim: int,
             num_actions: int, agent_hidden: Sequence[int],
             cluster_hidden: Sequence[int], rng: np.random.Generator) -> "QNetworks":
        from .nets import mlp_init
        cluster_sizes = [cluster_dim, *cluster_hidden, 1]
        agent_sizes = [obs_dim, *agent_hidden, num_actions]
        return cls(cluster=mlp_init(cluster_sizes, rng),
                   agents=[mlp_init(agent_sizes, rng) for _ in range(num_agents)])

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_actions(self) -> int:
        return self.agents[0][-1][1].shape[0]

    def as_list(self) -> list[MlpParams]:
        return [self.cluster, *self.agents]

    def clone(self) -> "QNetworks":
        return QNetworks(cluster=clone_params(self.cluster),
                         agents=[clone_params(p) for p in self.agents])


@dataclass(frozen=True)
class Transition:
    """One stored step: state, joint action, raw reward, hot cost, next state."""

    cluster_vec: np.ndarray
    agent_obs: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    reward: float
    cost: int
    next_cluster_vec: np.ndarray
    next_agent_obs: np.ndarray
    next_masks: np.ndarray
    done: bool


@dataclass
class LearnerState:
    config: LearnerConfig
    nets: QNetworks
    targets: QNetworks
    adam: AdamState
    lam: float
    memory: deque
    rng: np.random.Generator
    episodes_done: int = 0
    updates_done: int = 0

    @classmethod
    def init(cls, config: LearnerConfig, num_agents: int, obs_dim: int,
             cluster_dim: int, num_actions: int, seed: int) -> "LearnerState":
        rng = np.random.default_rng(seed)
        nets = QNetworks.init(num_agents, obs_dim, cluster_dim, num_actions,
                              config.agent_hidden, config.cluster_hidden, rng)
        return cls(config=config, nets=nets, targets=nets.clone(),
                   adam=AdamState.for_networks(nets.as_list()),
                   lam=config.lambda_init,
                   memory=deque(maxlen=config.memory_capacity), rng=rng)


# -- core operations ---------------------------------------------------------


def select_actions(nets: QNetworks, obs: Observation, epsilon: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Independent epsilon-greedy action per agent (ties to lowest index)."""
    n = nets.num_agents
    actions = np.empty(n, dtype=np.int64)
    for i in range(n):
        if rng.random() < epsilon:
            actions[i] = rng.integers(nets.num_actions)
        else:
            q = mlp_forward(nets.agents[i], obs.agent_obs[i:i + 1])[0]
            actions[i] = int(np.argmax(q))
    return actions


def lagrangian_reward(reward: float, cost: float, lam: float, budget: float) -> float:
    """Shaped reward: raw reward plus lam times the cost slack."""
    return reward + lam * (budget - cost)


def joint_q(nets: QNetworks, cluster_vec: np.ndarray, agent_obs: np.ndarray,
            masks: np.ndarray, actions: np.ndarray) -> float:
    """Team value: cluster score plus the masked sum of chosen action values."""
    total = float(mlp_forward(nets.cluster, cluster_vec[None, :])[0, 0])
    for i in range(nets.num_agents):
        if masks[i]:
            q = mlp_forward(nets.agents[i], agent_obs[i:i + 1])[0]
            total += float(q[actions[i]])
    return total


def greedy_actions(nets: QNetworks, agent_obs: np.ndarray) -> np.ndarray:
    """Per-agent argmax actions; by separability this is the joint greedy."""
    return np.array([int(np.argmax(mlp_forward(nets.agents[i], agent_obs[i:i + 1])[0]))
                     for i in range(nets.num_agents)], dtype=np.int64)


def td_target(nets: QNetworks, targets: QNetworks, transition: Transition,
              lam: float, budget: float, gamma: float) -> float:
    """Shaped reward plus the discounted double-Q bootstrap.

    Next-state actions are chosen by the online per-agent networks and
    evaluated by the target networks; terminal transitions bootstrap zero.
    """
    r = lagrangian_reward(transition.reward, transition.cost, lam, budget)
    if transition.done:
        return r
    boot = float(mlp_forward(targets.cluster,
                             transition.next_cluster_vec[None, :])[0, 0])
    for i in range(nets.num_agents):
        if transition.next_masks[i]:
            obs_row = transition.next_agent_obs[i:i + 1]
            best = int(np.argmax(mlp_forward(nets.agents[i], obs_row)[0]))
            boot += float(mlp_forward(targets.agents[i], obs_row)[0, best])
    return r + gamma * boot


def td_targets_batch(nets: QNetworks, targets: QNetworks,
                     batch: Sequence[Transition], lam: float, budget: float,
                     gamma: float) -> np.ndarray:
    return np.array([td_target(nets, targets, tr, lam, budget, gamma)
                     for tr in batch])


def loss_and_gradients(nets: QNetworks, targets: QNetworks,
                       batch: Sequence[Transition], lam: float, budget: float,
                       gamma: float) -> tuple[float, list[MlpParams]]:
    """Mean squared TD error and its exact gradients in the online parameters.

    Targets are treated as constants: no gradient flows through the target
    networks or through the online argmax that picks next-state actions.
    Returns gradients ordered as [cluster, agent 0, agent 1, ...].
    """
    y = td_targets_batch(nets, targets, batch, lam, budget, gamma)
    b = len(batch)
    cluster_in = np.stack([tr.cluster_vec for tr in batch])
    qc, cache_c = mlp_forward_cached(nets.cluster, cluster_in)
    pred = qc[:, 0].copy()

    agent_caches = []
    for i in range(nets.num_agents):
        obs_in = np.stack([tr.agent_obs[i] for tr in batch])
        qa, cache_a = mlp_forward_cached(nets.agents[i], obs_in)
        mask = np.array([tr.masks[i] for tr in batch])
        acts = np.array([tr.actions[i] for tr in batch], dtype=np.int64)
        pred += mask * qa[np.arange(b), acts]
        agent_caches.append((qa, cache_a, mask, acts))

    err = pred - y
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss={loss!r}, lam={lam!r}")

    dpred = (2.0 / b) * err
    grads: list[MlpParams] = [mlp_backward(nets.cluster, cache_c, dpred[:, None])]
    for i in range(nets.num_agents):
        qa, cache_a, mask, acts = agent_caches[i]
        dq = np.zeros_like(qa)
        dq[np.arange(b), acts] = dpred * mask
        grads.append(mlp_backward(nets.agents[i], cache_a, dq))

    for gparams in grads:
        for gw, gb in gparams:
            if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
                raise NonFiniteLoss(f"non-finite gradient at loss={loss!r}")
    return loss, grads


def apply_gradients(state: LearnerState, grads: list[MlpParams]) -> None:
    """One Adam step on the online networks."""
    adam_step(state.nets.as_list(), grads, state.adam,
              lr=state.config.learning_rate)
    state.updates_done += 1


def soft_update(nets: QNetworks, targets: QNetworks, tau: float) -> None:
    """Polyak-average the online parameters into the targets in place."""
    for online, target in zip(nets.as_list(), targets.as_list()):
        for (w, b), (tw, tb) in zip(online, target):
            tw *= 1.0 - tau
            tw += tau * w
            tb *= 1.0 - tau
            tb += tau * b


def estimate_constraint_level(batch: Sequence[Transition]) -> float:
    """Mean stored hot cost of a mini-batch."""
    return float(np.mean([tr.cost for tr in batch]))


def dual_update(lam: float, eta: float, budget: float, level: float,
                lam_max: float | None = None) -> float:
    """Projected multiplier step: rises when the measured constraint level
    exceeds the budget, decays toward zero otherwise, never negative."""
    lam = max(0.0, lam - eta * (budget - level))
    if lam_max is not None:
        lam = min(lam, lam_max)
    return lam


def epsilon_at(config: LearnerConfig, episode: int, total_episodes: int) -> float:
    """Linear decay from eps_start to eps_end over the first
    eps_decay_fraction of episodes, then flat."""
    decay_span = max(1, int(round(config.eps_decay_fraction * total_episodes)))
    frac = min(1.0, episode / decay_span)
    return config.eps_start + frac * (config.eps_end - config.eps_start)


# -- training loop -----------------------------------------------------------


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    cum_reward: float
    remaining_cores: float
    hot_cluster_count: int
    lam: float
    epsilon: float


def train(env: OversubEnv, config: LearnerConfig, episodes: int,
          seed: int = 0) -> tuple[LearnerState, list[EpisodeRecord]]:
    """Run the full training loop and return the learner plus per-episode curves.

    Each episode rolls the environment once with epsilon-greedy actions,
    storing raw rewards and hot costs. Afterwards come
    ``opt_iters_per_episode`` optimization iterations, each sampling one
    mini-batch, taking one Adam step on the TD loss, Polyak-updating the
    targets, and moving the multiplier against the measured constraint level.
    """
    obs0 = env.reset()
    state = LearnerState.init(
        config, num_agents=env.num_agents, obs_dim=obs0.agent_obs.shape[1],
        cluster_dim=obs0.cluster_vec.shape[0],
        num_actions=len(env.config.action_set), seed=seed)
    curves: list[EpisodeRecord] = []

    for episode in range(episodes):
        eps = epsilon_at(config, episode, episodes)
        obs = env.reset()
        cum_reward = 0.0
        hot_count = 0
        remaining_sum = 0.0
        while not env.done:
            actions = select_actions(state.nets, obs, eps, state.rng)
            result = env.step(actions)
            state.memory.append(Transition(
                cluster_vec=obs.cluster_vec, agent_obs=obs.agent_obs,
                masks=obs.masks, actions=actions, reward=result.reward,
                cost=result.constraint_cost,
                next_cluster_vec=result.observation.cluster_vec,
                next_agent_obs=result.observation.agent_obs,
                next_masks=result.observation.masks, done=result.done))
            cum_reward += result.reward
            hot_count += result.constraint_cost
            remaining_sum += env.cluster.totals()[1]
            obs = result.observation

        for _ in range(config.opt_iters_per_episode):
            if len(state.memory) < config.batch_size:
                break
            idx = state.rng.choice(len(state.memory), size=config.batch_size,
                                   replace=False)
            batch = [state.memory[int(j)] for j in idx]
            _, grads = loss_and_gradients(state.nets, state.targets, batch,
                                          state.lam, config.cost_budget,
                                          config.gamma)
            apply_gradients(state, grads)
            soft_update(state.nets, state.targets, config.tau)
            if config.constraint_window is not None:
                window = list(state.memory)[-config.constraint_window:]
                level = estimate_constraint_level(window)
            else:
                level = estimate_constraint_level(batch)
            state.lam = dual_update(state.lam, config.dual_learning_rate,
                                    config.cost_budget, level,
                                    config.lambda_max)

        state.episodes_done += 1
        steps = env.config.episode_length
        curves.append(EpisodeRecord(
            episode=episode, cum_reward=cum_reward,
            remaining_cores=remaining_sum / steps,
            hot_cluster_count=hot_count, lam=state.lam, epsilon=eps))
        if episode % 50 == 0:
            log.info("episode %d: reward %.4f, hot %d, lam %.4f, eps %.3f",
                     episode, cum_reward, hot_count, state.lam, eps)
    return state, curves


def write_curves(curves: Sequence[EpisodeRecord], path: str | Path) -> None:
    lines = ["episode,cum_reward,remaining_cores,hot_cluster_count,lambda,epsilon"]
    for rec in curves:
        lines.append(f"{rec.episode},{rec.cum_reward!r},{rec.remaining_cores!r},"
                     f"{rec.hot_cluster_count},{rec.lam!r},{rec.epsilon!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- greedy policy over trained networks --------------------------------------


class LearnedPolicy:
    """Greedy rates from trained per-agent networks."""

    def __init__(self, nets: QNetworks, action_set: Sequence[float],
                 name: str = "c2marl"):
        if len(action_set) != nets.num_actions:
            raise LearnerError(
                f"networks emit {nets.num_actions} action values but the "
                f"action set has {len(action_set)} rates")
        self.nets = nets
        self.action_set = tuple(action_set)
        self.name = name

    def rates(self, env: OversubEnv, obs: Observation) -> np.ndarray:
        actions = greedy_actions(self.nets, obs.agent_obs)
        return np.array([self.action_set[a] for a in actions])


# -- checkpointing -------------------------------------------------------------


def _params_to_json(params: MlpParams) -> list[dict]:
    return [{"shape": list(w.shape), "w": w.ravel().tolist(), "b": b.tolist()}
            for w, b in params]


def _params_from_json(layers: list[dict]) -> MlpParams:
    params: MlpParams = []
    for layer in layers:
        shape = tuple(layer["shape"])
        w = np.array(layer["w"], dtype=np.float64).reshape(shape)
        b = np.array(layer["b"], dtype=np.float64)
        params.append((w, b))
    return params


def save_checkpoint(state: LearnerState, path: str | Path,
                    action_set: Sequence[float]) -> None:
    hyper = asdict(state.config)
    hyper["action_set"] = list(action_set)
    payload = {
        "version": CHECKPOINT_VERSION,
        "hyperparameters": hyper,
        "lambda": state.lam,
        "episodes_done": state.episodes_done,
        "networks": {
            "cluster": _params_to_json(state.nets.cluster),
            "agents": [_params_to_json(p) for p in state.nets.agents],
        },
        "target_networks": {
            "cluster": _params_to_json(state.targets.cluster),
            "agents": [_params_to_json(p) for p in state.targets.agents],
        },
        "rng_state": state.rng.bit_generator.state,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> dict:
    """Parse and version-check a checkpoint; returns the payload dict with
    network parameters decoded to numpy arrays."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointVersionMismatch(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(
            f"{path}: expected version {CHECKPOINT_VERSION}, "
            f"got {payload.get('version') if isinstance(payload, dict) else payload!r}")
    try:
        payload["networks"] = {
            "cluster": _params_from_json(payload["networks"]["cluster"]),
            "agents": [_params_from_json(p) for p in payload["networks"]["agents"]],
        }
        if "target_networks" in payload:
            payload["target_networks"] = {
                "cluster": _params_from_json(payload["target_networks"]["cluster"]),
                "agents": [_params_from_json(p)
                           for p in payload["target_networks"]["agents"]],
            }
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointVersionMismatch(f"{path}: malformed networks: {exc}") from exc
    return payload


def policy_from_checkpoint(path: str | Path) -> LearnedPolicy:
    payload = load_checkpoint(path)
    nets = QNetworks(cluster=payload["networks"]["cluster"],
                     agents=payload["networks"]["agents"])
    action_set = payload["hyperparameters"].get("action_set")
    if not action_set:
        raise CheckpointVersionMismatch(f"{path}: checkpoint lacks an action set")
    return LearnedPolicy(nets, tuple(float(a) for a in action_set))
