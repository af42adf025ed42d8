import os

import numpy as np
import pytest
from hypothesis import settings

from oversub.cluster import ClusterConfig
from oversub.env import EnvConfig
from oversub.traces import TraceSet, UsageSeries, VmRecord

settings.register_profile("default", max_examples=50)
settings.register_profile("fast", max_examples=10)
settings.register_profile("thorough", max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_trace(vm_rows, usage_rows, horizon=None):
    """vm_rows: (vm_id, sub, created, deleted, cores[, mem, net]);
    usage_rows: (vm_id, ((hour, rate), ...))."""
    vms = []
    for row in vm_rows:
        vm_id, sub, created, deleted, cores = row[:5]
        mem = row[5] if len(row) > 5 else 0.0
        net = row[6] if len(row) > 6 else 0.0
        vms.append(VmRecord(vm_id, sub, created, deleted, cores, mem, net))
    usage = [UsageSeries(vm_id, tuple(points)) for vm_id, points in usage_rows]
    return TraceSet(vms, usage, horizon=horizon)


@pytest.fixture
def tiny_trace():
    """Two subscribers, three VMs, four hours, fully deterministic usage."""
    return make_trace(
        vm_rows=[
            ("a0", 0, 0, 3, 10.0, 16.0, 100.0),
            ("a1", 0, 1, 4, 4.0, 8.0, 50.0),
            ("b0", 1, 0, 4, 8.0, 16.0, 100.0),
        ],
        usage_rows=[
            ("a0", ((0, 0.5), (1, 0.6), (2, 0.4))),
            ("a1", ((1, 0.2), (2, 0.3), (3, 0.1))),
            ("b0", ((0, 0.25), (1, 0.5), (2, 0.75), (3, 1.0))),
        ],
        horizon=4,
    )


@pytest.fixture
def small_cluster_config():
    return ClusterConfig(num_pms=4, cpu_capacity=32.0, mem_capacity=128.0,
                         net_capacity=1000.0, hot_fraction=0.6)


@pytest.fixture
def tiny_env_config(tiny_trace, small_cluster_config):
    return EnvConfig(cluster=small_cluster_config, trace=tiny_trace)


def rollout_constant(env, rate):
    """Run one episode at a fixed rate; returns (rewards, costs, hot_matrix)."""
    env.reset()
    rewards, costs, hots = [], [], []
    while not env.done:
        res = env.step_rates([rate] * env.num_agents)
        rewards.append(res.reward)
        costs.append(res.constraint_cost)
        hots.append(res.info.hot_pms)
    return np.array(rewards), np.array(costs), np.stack(hots)
