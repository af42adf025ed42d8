import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oversub.cluster import (Cluster, ClusterConfig, ClusterError,
                             NoFeasiblePm, UnknownVm, hot_indicators)
from oversub.traces import VmRecord

from conftest import make_trace


def _vm(vm_id, cores=8.0, mem=16.0, net=100.0):
    return VmRecord(vm_id, 0, 0, 10, cores, mem, net)


# -- config ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ClusterConfig(num_pms=0)
    with pytest.raises(ValueError):
        ClusterConfig(hot_fraction=0.0)
    with pytest.raises(ValueError):
        ClusterConfig(hot_fraction=1.5)
    with pytest.raises(ValueError):
        ClusterConfig(cpu_capacity=-1.0)


# -- best-fit choice -----------------------------------------------------------


def test_best_fit_picks_tightest_feasible(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    # load pm0 heavily, pm1 medium, leave pm2/pm3 empty
    cluster.best_fit_place(_vm("fill0", cores=29.0, mem=8.0), 1.0)   # pm0 <- 29
    cluster.best_fit_place(_vm("fill1", cores=24.0, mem=8.0), 1.0)   # pm1 <- 24
    # 8-core VM at rate 1.0 does not fit pm0 (29+8>32) but exactly fills pm1
    assert cluster.best_fit_place(_vm("probe"), 1.0) == 1
    assert cluster.placements["probe"].assigned_cores == pytest.approx(8.0)


def test_best_fit_oracle_remaining_example(small_cluster_config):
    # assigned totals [22, 29, 27, 0] -> remaining [10, 3, 5, 32];
    # a 3-core request fits everywhere, tightest is pm1
    cluster = Cluster(small_cluster_config)
    cluster.best_fit_place(_vm("a", cores=22.0, mem=4.0), 1.0)
    cluster.best_fit_place(_vm("b", cores=29.0, mem=4.0), 1.0)
    cluster.best_fit_place(_vm("c", cores=27.0, mem=4.0), 1.0)
    assert cluster.best_fit_place(_vm("probe", cores=3.0, mem=4.0), 1.0) == 1


def test_best_fit_ties_break_to_lowest_index(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    assert cluster.best_fit_place(_vm("first"), 0.5) == 0
    # pm0 now strictly fuller than the rest, so it stays tightest
    assert cluster.best_fit_place(_vm("second"), 0.25) == 0


def test_assigned_cores_scale_with_rate(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    pm = cluster.best_fit_place(_vm("v", cores=10.0), 0.3)
    assert cluster.placements["v"].assigned_cores == pytest.approx(3.0)
    assert cluster.assigned_cpu[pm] == pytest.approx(3.0)


def test_memory_and_net_reserved_at_face_value(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    cluster.best_fit_place(_vm("v", cores=4.0, mem=100.0, net=900.0), 0.2)
    assert cluster.reserved_mem[0] == pytest.approx(100.0)
    assert cluster.reserved_net[0] == pytest.approx(900.0)
    # second VM: CPU fits anywhere, memory only fits pm1..3
    assert cluster.best_fit_place(_vm("w", cores=4.0, mem=100.0, net=50.0), 0.2) == 1


def test_infeasible_raises(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    for k in range(4):
        cluster.best_fit_place(_vm(f"big{k}", cores=30.0), 1.0)
    with pytest.raises(NoFeasiblePm):
        cluster.best_fit_place(_vm("extra", cores=4.0), 1.0)
    # net exhaustion alone also blocks placement
    fresh = Cluster(small_cluster_config)
    for k in range(4):
        fresh.best_fit_place(_vm(f"n{k}", cores=1.0, net=1000.0), 0.5)
    with pytest.raises(NoFeasiblePm):
        fresh.best_fit_place(_vm("n4", cores=1.0, net=1.0), 0.5)


def test_rate_validation(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    with pytest.raises(ValueError):
        cluster.best_fit_place(_vm("v"), 0.0)
    with pytest.raises(ValueError):
        cluster.best_fit_place(_vm("v"), 1.0001)


def test_duplicate_placement_rejected(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    cluster.best_fit_place(_vm("v"), 0.5)
    with pytest.raises(ClusterError):
        cluster.best_fit_place(_vm("v"), 0.5)


def test_delete_returns_placement_and_frees(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    pm = cluster.best_fit_place(_vm("v", cores=10.0, mem=64.0), 0.4)
    got = cluster.delete_vm("v")
    assert got.pm_index == pm
    assert got.assigned_cores == pytest.approx(4.0)
    assert cluster.assigned_cpu[pm] == 0.0
    assert cluster.reserved_mem[pm] == 0.0
    with pytest.raises(UnknownVm):
        cluster.delete_vm("v")


def test_place_delete_bit_identical(small_cluster_config):
    # rates whose contributions would not cancel under naive += / -=
    cluster = Cluster(small_cluster_config)
    rates = [0.1, 0.3, 0.7, 0.9, 0.2]
    cluster.best_fit_place(_vm("keep", cores=7.7, mem=3.0), 0.3)
    before = cluster.assigned_cpu.copy()
    for i, r in enumerate(rates):
        cluster.best_fit_place(_vm(f"tmp{i}", cores=5.3, mem=2.0), r)
    for i in range(len(rates)):
        cluster.delete_vm(f"tmp{i}")
    assert np.array_equal(cluster.assigned_cpu, before)
    assert cluster.audit()


# -- exhaustive best-fit oracle -------------------------------------------------


def test_best_fit_matches_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(300):
        k = int(rng.integers(1, 9))
        config = ClusterConfig(num_pms=k, cpu_capacity=32.0, mem_capacity=64.0,
                               net_capacity=400.0)
        cluster = Cluster(config)
        for j in range(int(rng.integers(0, 3 * k))):
            vm = _vm(f"pre{trial}-{j}", cores=float(rng.uniform(1, 12)),
                     mem=float(rng.uniform(1, 20)), net=float(rng.uniform(1, 80)))
            try:
                cluster.best_fit_place(vm, float(rng.uniform(0.1, 1.0)))
            except NoFeasiblePm:
                pass
        probe = _vm(f"probe{trial}", cores=float(rng.uniform(1, 16)),
                    mem=float(rng.uniform(1, 30)), net=float(rng.uniform(1, 120)))
        rate = float(rng.uniform(0.1, 1.0))
        need = probe.requested_cores * rate
        feasible = [
            pm for pm in range(k)
            if cluster.assigned_cpu[pm] + need <= config.cpu_capacity
            and cluster.reserved_mem[pm] + probe.requested_mem <= config.mem_capacity
            and cluster.reserved_net[pm] + probe.requested_net <= config.net_capacity
        ]
        if not feasible:
            with pytest.raises(NoFeasiblePm):
                cluster.best_fit_place(probe, rate)
            continue
        best = max(feasible, key=lambda pm: (cluster.assigned_cpu[pm], -pm))
        assert cluster.best_fit_place(probe, rate) == best


# -- usage and hot accounting ----------------------------------------------------


def test_actual_usage_oracle(small_cluster_config):
    # 0.5*10 + 0.25*8 = 7.0 on one machine
    trace = make_trace(
        [("u", 0, 0, 4, 10.0, 1.0), ("w", 0, 0, 4, 8.0, 1.0)],
        [("u", ((0, 0.5),)), ("w", ((0, 0.25),))])
    cluster = Cluster(small_cluster_config)
    cluster.best_fit_place(trace.record("u"), 0.5)
    cluster.best_fit_place(trace.record("w"), 0.5)
    usage = cluster.actual_usage_per_pm(trace, 0)
    assert usage[0] == pytest.approx(7.0)
    assert usage[1:].sum() == 0.0


def test_usage_ignores_unplaced_vms(small_cluster_config, tiny_trace):
    cluster = Cluster(small_cluster_config)
    cluster.best_fit_place(tiny_trace.record("a0"), 0.5)
    usage = cluster.actual_usage_per_pm(tiny_trace, 0)
    assert usage.sum() == pytest.approx(0.5 * 10.0)


def test_hot_indicator_boundary():
    config = ClusterConfig(num_pms=3, cpu_capacity=96.0, hot_fraction=0.6)
    usage = np.array([57.5999, 57.6, 60.0])
    assert hot_indicators(usage, config).tolist() == [0, 1, 1]


def test_hot_threshold_small_config(small_cluster_config):
    usage = np.array([19.1, 19.2, 19.3, 0.0])
    assert hot_indicators(usage, small_cluster_config).tolist() == [0, 1, 1, 0]


def test_totals(small_cluster_config):
    cluster = Cluster(small_cluster_config)
    cluster.best_fit_place(_vm("v", cores=10.0), 0.5)
    assigned, remaining = cluster.totals()
    assert assigned == pytest.approx(5.0)
    assert remaining == pytest.approx(4 * 32 - 5.0)


# -- conservation property --------------------------------------------------------


@settings(deadline=None)
@given(st.lists(
    st.tuples(st.floats(0.5, 12.0), st.floats(0.05, 1.0), st.booleans()),
    min_size=1, max_size=40))
def test_conservation_under_random_churn(ops):
    config = ClusterConfig(num_pms=3, cpu_capacity=64.0, mem_capacity=256.0,
                           net_capacity=2000.0)
    cluster = Cluster(config)
    live = []
    for i, (cores, rate, delete_first) in enumerate(ops):
        if delete_first and live:
            cluster.delete_vm(live.pop(0))
        vm = _vm(f"vm{i}", cores=cores, mem=1.0, net=1.0)
        try:
            cluster.best_fit_place(vm, rate)
            live.append(vm.vm_id)
        except NoFeasiblePm:
            pass
        assert cluster.audit()
    for vm_id in live:
        cluster.delete_vm(vm_id)
    assert np.array_equal(cluster.assigned_cpu, np.zeros(3))
    assert np.array_equal(cluster.reserved_mem, np.zeros(3))
    assert np.array_equal(cluster.reserved_net, np.zeros(3))
