"""Early-binding placement of replica sets onto nodes.

EES places a job in three greedy passes: nodes already running at the job's
frequency (fullest first), then empty nodes retuned to that frequency, then
any node with free cores ordered by the extra power the placement would
cost. Baseline strategies spread replicas round-robin and pin every node to a
fixed governor frequency.

Planning functions never mutate the cluster; ``apply_plan`` and the removal
helpers are the only writers.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .profiles import DEFAULT_FREQ_SET, FunctionProfile
from .scaling import ScalingDecision

_EPS = 1e-9


class Strategy(str, Enum):
    EES = "EES"
    BP = "BP"
    BPS = "BPS"
    BP_CPU = "BP_CPU"

    @classmethod
    def parse(cls, name: str) -> Strategy:
        key = name.strip().upper().replace("+", "_").replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown strategy {name!r}; expected one of "
                             f"{', '.join(s.value for s in cls)}") from None

    @property
    def exclusive_cores(self) -> bool:
        return self in (Strategy.EES, Strategy.BP_CPU)


class SchedulerError(Exception):
    pass


class UnknownJobError(SchedulerError, KeyError):
    def __str__(self):
        return self.args[0]


class MissingPowerPointError(SchedulerError, KeyError):
    def __str__(self):
        return self.args[0]


@dataclass
class HostedJob:
    job_id: str
    replicas: int
    desired_freq_mhz: int
    per_replica_power_by_freq: dict[int, float]
    cores_per_replica: float

    def power_at(self, freq_mhz: int) -> float:
        try:
            return self.per_replica_power_by_freq[freq_mhz]
        except KeyError:
            raise MissingPowerPointError(
                f"job {self.job_id} has no power point at {freq_mhz} MHz") from None


@dataclass
class NodeView:
    node_id: str
    total_cores: int
    current_freq_mhz: int
    hosted: list[HostedJob] = field(default_factory=list)

    @property
    def used_cores(self) -> float:
        return sum(h.replicas * h.cores_per_replica for h in self.hosted)

    @property
    def free_cores(self) -> float:
        return max(0.0, self.total_cores - self.used_cores)

    @property
    def free_whole_cores(self) -> int:
        # a core partly used by fractional (BP) replicas is not free for pinning
        return self.total_cores - math.ceil(self.used_cores - _EPS)

    @property
    def is_empty(self) -> bool:
        return not self.hosted

    def job(self, job_id: str) -> Optional[HostedJob]:
        return next((h for h in self.hosted if h.job_id == job_id), None)


@dataclass
class PlacementPlan:
    assignments: list[tuple[str, int]] = field(default_factory=list)
    freq_updates: list[tuple[str, int]] = field(default_factory=list)
    unscheduled: bool = False
    reason: str = ""

    @property
    def placed_replicas(self) -> int:
        return sum(n for _, n in self.assignments)


@dataclass
class Cluster:
    """Scheduler-side view of all worker nodes.

    ``governor_freq_mhz`` pins every node to one frequency (baselines); when
    it is None, node frequencies follow hosted jobs (EES).
    """
    nodes: dict[str, NodeView]
    freq_set: tuple[int, ...] = DEFAULT_FREQ_SET
    governor_freq_mhz: Optional[int] = None
    events: list[dict] = field(default_factory=list, compare=False, repr=False)
    clock: float = field(default=0.0, compare=False, repr=False)

    @classmethod
    def build(cls, node_count: int, cores_per_node: int,
              freq_set: Sequence[int] = DEFAULT_FREQ_SET,
              governor_freq_mhz: Optional[int] = None) -> Cluster:
        freq_set = tuple(sorted(freq_set))
        start = governor_freq_mhz if governor_freq_mhz is not None else freq_set[0]
        width = len(str(node_count))
        nodes = {}
        for i in range(1, node_count + 1):
            nid = f"n{i:0{width}d}"
            nodes[nid] = NodeView(nid, cores_per_node, start)
        return cls(nodes, freq_set, governor_freq_mhz)

    @classmethod
    def for_strategy(cls, strategy: Strategy, node_count: int, cores_per_node: int,
                     freq_set: Sequence[int] = DEFAULT_FREQ_SET) -> Cluster:
        return cls.build(node_count, cores_per_node, freq_set,
                         governor_frequency(strategy, freq_set))

    def sorted_nodes(self) -> list[NodeView]:
        return [self.nodes[k] for k in sorted(self.nodes)]

    def snapshot(self) -> Cluster:
        return copy.deepcopy(self)

    def log(self, kind: str, node_id: str, job_id: Optional[str] = None,
            freq_mhz: Optional[int] = None, replicas: Optional[int] = None) -> None:
        self.events.append({"t": self.clock, "kind": kind, "node": node_id,
                            "job": job_id, "freq": freq_mhz, "replicas": replicas})

    def dump_events(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


def governor_frequency(strategy: Strategy, freq_set: Sequence[int]) -> Optional[int]:
    if strategy is Strategy.EES:
        return None
    if strategy is Strategy.BPS:
        return min(freq_set)
    return max(freq_set)


def cores_needed(profile: FunctionProfile) -> int:
    return math.ceil(profile.cpu_cores - _EPS)


def _power_map(profile: FunctionProfile) -> dict[int, float]:
    return {p.freq_mhz: p.per_replica_power_w for p in profile.curve}


def impact(node: NodeView, decision: ScalingDecision, profile: FunctionProfile,
           replicas: Optional[int] = None) -> float:
    """Extra watts incurred by putting this job on ``node``.

    A hotter node makes the new replicas run above their target; a cooler
    node must be raised, which makes the hosted jobs run above theirs.
    """
    target = decision.freq_mhz
    if node.current_freq_mhz == target:
        return 0.0
    if node.current_freq_mhz > target:
        if replicas is None:
            replicas = min(decision.replicas, node.free_whole_cores // cores_needed(profile))
        power = _power_map(profile)
        for f in (node.current_freq_mhz, target):
            if f not in power:
                raise MissingPowerPointError(
                    f"profile {profile.function_id} has no power point at {f} MHz")
        return max(0.0, replicas * (power[node.current_freq_mhz] - power[target]))
    total = sum(h.replicas * (h.power_at(target) - h.power_at(h.desired_freq_mhz))
                for h in node.hosted)
    return max(0.0, total)


def _fill(free: dict[str, int], node_id: str, need: int, remaining: int) -> int:
    k = min(remaining, free[node_id] // need)
    free[node_id] -= k * need
    return k


def schedule_ees(cluster: Cluster, job_id: str, decision: ScalingDecision,
                 profile: FunctionProfile) -> PlacementPlan:
    need = cores_needed(profile)
    target = decision.freq_mhz
    nodes = cluster.sorted_nodes()
    free = {n.node_id: n.free_whole_cores for n in nodes}
    placed: dict[str, int] = {}
    updates: dict[str, int] = {}
    remaining = decision.replicas

    def put(node: NodeView) -> None:
        nonlocal remaining
        k = _fill(free, node.node_id, need, remaining)
        if k:
            placed[node.node_id] = placed.get(node.node_id, 0) + k
            remaining -= k

    # low load: nodes already at the target frequency, fewest free cores first
    matching = sorted((n for n in nodes
                       if n.current_freq_mhz == target and free[n.node_id] >= need),
                      key=lambda n: (free[n.node_id], n.node_id))
    for node in matching:
        if remaining == 0:
            break
        put(node)

    # low load: empty nodes, retuned to the target frequency
    for node in nodes:
        if remaining == 0:
            break
        if node.is_empty and node.node_id not in placed and free[node.node_id] >= need:
            put(node)
            if node.current_freq_mhz != target:
                updates[node.node_id] = target

    # high load: whatever has room, cheapest extra power first
    if remaining:
        candidates = [n for n in nodes if free[n.node_id] >= need]
        ranked = sorted(
            candidates,
            key=lambda n: (impact(n, decision, profile,
                                  min(remaining, free[n.node_id] // need)), n.node_id))
        for node in ranked:
            if remaining == 0:
                break
            put(node)
            if node.node_id in placed and node.current_freq_mhz < target:
                updates[node.node_id] = target

    if remaining:
        return PlacementPlan(unscheduled=True,
                             reason=f"{remaining} of {decision.replicas} replicas do not fit")
    return PlacementPlan(assignments=list(placed.items()), freq_updates=list(updates.items()))


def schedule_baseline(cluster: Cluster, job_id: str, replicas: int,
                      profile: FunctionProfile, strategy: Strategy) -> PlacementPlan:
    """Round-robin spread over nodes in id order, a stand-in for the orchestrator default."""
    strategy = Strategy(strategy)
    governor = governor_frequency(strategy, cluster.freq_set)
    nodes = cluster.sorted_nodes()
    if strategy.exclusive_cores:
        need: float = cores_needed(profile)
        free = {n.node_id: float(n.free_whole_cores) for n in nodes}
    else:
        need = profile.cpu_cores
        free = {n.node_id: n.free_cores for n in nodes}
    placed: dict[str, int] = {}
    cursor = 0
    for _ in range(replicas):
        for step in range(len(nodes)):
            node = nodes[(cursor + step) % len(nodes)]
            if free[node.node_id] + _EPS >= need:
                free[node.node_id] -= need
                placed[node.node_id] = placed.get(node.node_id, 0) + 1
                cursor = (cursor + step + 1) % len(nodes)
                break
        else:
            return PlacementPlan(unscheduled=True,
                                 reason=f"only {sum(placed.values())} of {replicas} replicas fit")
    updates = [(nid, governor) for nid in placed if cluster.nodes[nid].current_freq_mhz != governor]
    return PlacementPlan(assignments=list(placed.items()), freq_updates=updates)


def apply_plan(cluster: Cluster, plan: PlacementPlan, job_id: str,
               profile: FunctionProfile, desired_freq_mhz: int, exclusive: bool) -> None:
    if plan.unscheduled:
        return
    per_replica = float(cores_needed(profile)) if exclusive else profile.cpu_cores
    power = _power_map(profile)
    for node_id, count in plan.assignments:
        node = cluster.nodes[node_id]
        hosted = node.job(job_id)
        if hosted is None:
            node.hosted.append(HostedJob(job_id, count, desired_freq_mhz, power, per_replica))
        else:
            hosted.replicas += count
        cluster.log("place", node_id, job_id, desired_freq_mhz, count)
    for node_id, freq in plan.freq_updates:
        cluster.nodes[node_id].current_freq_mhz = freq
        cluster.log("freq", node_id, job_id, freq)


def _retune_after_removal(cluster: Cluster, node: NodeView) -> Optional[int]:
    if cluster.governor_freq_mhz is not None:
        return None
    if node.hosted:
        new = max(h.desired_freq_mhz for h in node.hosted)
    else:
        new = min(cluster.freq_set)
    if new == node.current_freq_mhz:
        return None
    node.current_freq_mhz = new
    cluster.log("freq", node.node_id, None, new)
    return new


def remove_replicas(cluster: Cluster, node_id: str, job_id: str, count: int) -> Optional[int]:
    """Drop ``count`` replicas of a job from a node; returns the node's new frequency if it changed."""
    node = cluster.nodes[node_id]
    hosted = node.job(job_id)
    if hosted is None:
        raise UnknownJobError(f"job {job_id} is not hosted on {node_id}")
    if count > hosted.replicas:
        raise SchedulerError(f"cannot remove {count} replicas of {job_id} from {node_id}; "
                             f"only {hosted.replicas} hosted")
    hosted.replicas -= count
    cluster.log("remove", node_id, job_id, None, count)
    if hosted.replicas:
        return None
    node.hosted.remove(hosted)
    return _retune_after_removal(cluster, node)


def on_job_complete(cluster: Cluster, node_id: str, job_id: str) -> Optional[int]:
    hosted = cluster.nodes[node_id].job(job_id)
    if hosted is None:
        raise UnknownJobError(f"job {job_id} is not hosted on {node_id}")
    return remove_replicas(cluster, node_id, job_id, hosted.replicas)


def complete_job(cluster: Cluster, job_id: str) -> list[tuple[str, int]]:
    updates = []
    for node in cluster.sorted_nodes():
        if node.job(job_id) is not None:
            f = on_job_complete(cluster, node.node_id, job_id)
            if f is not None:
                updates.append((node.node_id, f))
    return updates


def autoscale_rps(ready_replicas: int, mean_load_per_replica: float,
                  target_load_per_replica: float) -> int:
    if ready_replicas < 1 or target_load_per_replica <= 0:
        raise ValueError("need at least one ready replica and a positive target load")
    wanted = ready_replicas * (mean_load_per_replica / target_load_per_replica)
    # guard against 3.0000000000000004-style overshoot from the division
    return max(1, math.ceil(round(wanted, 9)))


def check_invariants(cluster: Cluster, exclusive: bool) -> list[str]:
    """Return violated cluster invariants (empty list when consistent)."""
    problems = []
    for node in cluster.sorted_nodes():
        if node.current_freq_mhz not in cluster.freq_set:
            problems.append(f"{node.node_id}: frequency {node.current_freq_mhz} not in P")
        if node.used_cores > node.total_cores + _EPS:
            problems.append(f"{node.node_id}: {node.used_cores} cores used of {node.total_cores}")
        ids = [h.job_id for h in node.hosted]
        if len(ids) != len(set(ids)):
            problems.append(f"{node.node_id}: duplicate hosted entries")
        if exclusive:
            for h in node.hosted:
                if h.cores_per_replica != int(h.cores_per_replica) or h.cores_per_replica < 1:
                    problems.append(f"{node.node_id}: {h.job_id} shares a core")
        if cluster.governor_freq_mhz is not None:
            if node.current_freq_mhz != cluster.governor_freq_mhz:
                problems.append(f"{node.node_id}: off governor frequency")
        elif node.hosted:
            top = max(h.desired_freq_mhz for h in node.hosted)
            if node.current_freq_mhz != top:
                problems.append(f"{node.node_id}: runs {node.current_freq_mhz}, max desired {top}")
        elif node.current_freq_mhz != min(cluster.freq_set):
            problems.append(f"{node.node_id}: empty node not at min(P)")
    return problems


def total_free_whole_cores(nodes: Iterable[NodeView]) -> int:
    return sum(n.free_whole_cores for n in nodes)
