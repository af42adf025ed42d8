"""Physical machines: capacity bookkeeping, tightest-fit placement, hot detection.

CPU is the only oversubscribed resource: a VM placed at rate ``a`` consumes
``a * requested_cores`` of assigned capacity but may burn up to its full
request. Memory and network are reserved in full at placement time and act
purely as feasibility filters.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .traces import TraceSet, VmRecord

log = logging.getLogger("oversub.cluster")


class ClusterError(Exception):
    pass


class NoFeasiblePm(ClusterError):
    """No machine can hold the VM at the chosen rate."""


class UnknownVm(ClusterError):
    """Deletion of a VM that is not placed."""


@dataclass(frozen=True)
class ClusterConfig:
    """Homogeneous machine fleet. ``hot_fraction`` is the usage share of
    CPU capacity at or above which a machine counts as hot."""

    num_pms: int = 500
    cpu_capacity: float = 96.0
    mem_capacity: float = 1024.0
    net_capacity: float = 10000.0
    hot_fraction: float = 0.6

    def __post_init__(self):
        if self.num_pms < 1:
            raise ValueError("num_pms must be >= 1")
        for value, name in ((self.cpu_capacity, "cpu_capacity"),
                            (self.mem_capacity, "mem_capacity"),
                            (self.net_capacity, "net_capacity")):
            if value <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0.0 < self.hot_fraction <= 1.0):
            raise ValueError("hot_fraction must be in (0, 1]")


@dataclass(frozen=True)
class Placement:
    vm_id: str
    pm_index: int
    assigned_cores: float
    reserved_mem: float
    reserved_net: float


def hot_indicators(usage: np.ndarray, config: ClusterConfig) -> np.ndarray:
    """0/1 vector: machine k is hot iff its used cores reach
    hot_fraction * cpu_capacity."""
    threshold = config.hot_fraction * config.cpu_capacity
    return (np.asarray(usage) >= threshold).astype(np.int64)


class Cluster:
    """Mutable placement state over a fixed fleet of machines.

    Per-machine totals are recomputed from the surviving placements on every
    mutation, so placing and then deleting a VM restores the exact previous
    totals and the bookkeeping always matches the placement map.
    """

    def __init__(self, config: ClusterConfig):
        self.config = config
        k = config.num_pms
        self.assigned_cpu = np.zeros(k)
        self.reserved_mem = np.zeros(k)
        self.reserved_net = np.zeros(k)
        self.placements: dict[str, Placement] = {}
        self._by_pm: list[dict[str, Placement]] = [dict() for _ in range(k)]

    def __len__(self) -> int:
        return len(self.placements)

    def _resum(self, pm: int) -> None:
        rows = self._by_pm[pm].values()
        self.assigned_cpu[pm] = sum(p.assigned_cores for p in rows)
        self.reserved_mem[pm] = sum(p.reserved_mem for p in rows)
        self.reserved_net[pm] = sum(p.reserved_net for p in rows)

    def best_fit_place(self, vm: VmRecord, rate: float) -> int:
        """Place ``vm`` at oversubscription ``rate`` on the feasible machine
        with the least remaining CPU after placement (lowest index on ties).
        Returns the machine index; raises NoFeasiblePm if nothing fits."""
        if not (0.0 < rate <= 1.0):
            raise ValueError(f"rate must be in (0, 1], got {rate!r}")
        if vm.vm_id in self.placements:
            raise ClusterError(f"{vm.vm_id} is already placed")
        cfg = self.config
        need = rate * vm.requested_cores
        feasible = (
            (self.assigned_cpu + need <= cfg.cpu_capacity)
            & (self.reserved_mem + vm.requested_mem <= cfg.mem_capacity)
            & (self.reserved_net + vm.requested_net <= cfg.net_capacity)
        )
        if not feasible.any():
            raise NoFeasiblePm(f"{vm.vm_id}: no machine fits {need:.3f} cores")
        # least remaining CPU post-placement == most assigned pre-placement
        pm = int(np.argmax(np.where(feasible, self.assigned_cpu, -np.inf)))
        placement = Placement(vm.vm_id, pm, need, vm.requested_mem, vm.requested_net)
        self.placements[vm.vm_id] = placement
        self._by_pm[pm][vm.vm_id] = placement
        self._resum(pm)
        return pm

    def delete_vm(self, vm_id: str) -> Placement:
        """Remove a placed VM, releasing its assignment and reservations."""
        placement = self.placements.pop(vm_id, None)
        if placement is None:
            raise UnknownVm(f"{vm_id} is not placed")
        del self._by_pm[placement.pm_index][vm_id]
        self._resum(placement.pm_index)
        return placement

    def actual_usage_per_pm(self, trace: TraceSet, t: int) -> np.ndarray:
        """Used cores per machine at hour ``t``: sum of usage_rate *
        requested_cores over the VMs currently placed there."""
        usage = np.zeros(self.config.num_pms)
        for vm_id, cores in trace.used_cores_at(t):
            placement = self.placements.get(vm_id)
            if placement is not None:
                usage[placement.pm_index] += cores
        return usage

    def totals(self) -> tuple[float, float]:
        """(total assigned cores, total remaining cores) across the fleet."""
        assigned = float(self.assigned_cpu.sum())
        return assigned, self.config.num_pms * self.config.cpu_capacity - assigned

    def audit(self) -> bool:
        """True iff every per-machine total equals the sum over its placements."""
        for pm in range(self.config.num_pms):
            rows = self._by_pm[pm].values()
            if self.assigned_cpu[pm] != sum(p.assigned_cores for p in rows):
                return False
            if self.reserved_mem[pm] != sum(p.reserved_mem for p in rows):
                return False
            if self.reserved_net[pm] != sum(p.reserved_net for p in rows):
                return False
        return len(self.placements) == sum(len(d) for d in self._by_pm)
