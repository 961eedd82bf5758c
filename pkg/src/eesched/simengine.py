"""Deterministic discrete-event simulation of a serverless cluster.

Workloads are submitted at Poisson-spaced instants, each generating Poisson
request arrivals. Requests are sent to the replica with the shortest queue
and served at a speed set by the hosting node's current frequency. Node
power (idle draw plus busy replicas) is integrated exactly between events.

Every request carries a unit-mean amount of work drawn from a per-workload
stream, so two runs that differ only in strategy see the same requests with
the same work; a replica finishes a request after ``work * exec_time(freq)``.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import scaling
from .node_agent import NodeAgent
from .profiles import (
    DEFAULT_FREQ_SET,
    FunctionProfile,
    ObservedSample,
    load_store,
    lookup,
    match_closest,
    predict_profile,
    validate_profile,
)
from .scaling import JobRequest, NeedsProfileRun, ScalingDecision
from .scheduler import (
    Cluster,
    Strategy,
    apply_plan,
    autoscale_rps,
    complete_job,
    cores_needed,
    remove_replicas,
    schedule_baseline,
    schedule_ees,
)

log = logging.getLogger(__name__)

# equal-time ordering: completion < frequency change < arrival (others slot around them);
# DRAIN runs after every replica that comes up at the same instant is marked ready
(COMPLETION, FREQ_CHANGE, READY, DRAIN, ARRIVAL, SUBMIT, PROFILE_END, AUTOSCALE,
 ROTATE) = range(9)


class ConfigError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    workload_id: str
    function_id: str
    kind: str = "stream"
    rate_rps: Optional[float] = None
    requests: Optional[int] = None
    duration_s: Optional[float] = None
    bs: Optional[int] = None
    deadline_s: Optional[float] = None
    burst: bool = False
    slo_response_s: Optional[float] = None
    profiled: bool = True
    replicas: Optional[int] = None
    freq_mhz: Optional[int] = None
    target_rps_per_replica: Optional[float] = None
    initial_replicas: int = 1
    submit_at_s: Optional[float] = None

    @property
    def lambda_rps(self) -> float:
        if self.kind == "batch":
            return self.bs / self.deadline_s
        return self.rate_rps

    @property
    def total_requests(self) -> Optional[int]:
        return self.bs if self.kind == "batch" else self.requests

    def job_request(self) -> JobRequest:
        if self.kind == "batch":
            return JobRequest(self.workload_id, self.function_id, "batch",
                              bs=self.bs, d=self.deadline_s)
        return JobRequest(self.workload_id, self.function_id, "stream",
                          min_throughput_rps=self.rate_rps)

    @classmethod
    def from_dict(cls, d: dict) -> WorkloadSpec:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown workload field(s): {', '.join(sorted(extra))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SimConfig:
    profiles: list[FunctionProfile]
    workloads: list[WorkloadSpec]
    freq_set: tuple[int, ...] = DEFAULT_FREQ_SET
    rho_max: float = scaling.DEFAULT_RHO_MAX
    node_count: int = 7
    cores_per_node: int = 4
    idle_power_w: dict[int, float] = field(default_factory=dict)
    node_max_power_w: float = 65.0
    workload_interarrival_rate: float = 0.05
    first_submit_s: float = 0.0
    cold_start_s: dict[str, dict[int, float]] = field(default_factory=dict)
    duration_s: float = 3600.0
    stop_when_idle: bool = False
    seed: int = 42
    service: str = "exponential"
    autoscaler_interval_s: float = 10.0
    rotation_period_s: float = 60.0
    profile_run_s: float = 10.0
    sample_interval_s: float = 1.0
    dvfs_latency_s: float = 0.0
    record_requests: bool = False

    def __post_init__(self):
        self.freq_set = tuple(int(f) for f in self.freq_set)
        self.idle_power_w = {int(k): float(v) for k, v in self.idle_power_w.items()}
        self.cold_start_s = {fid: {int(k): float(v) for k, v in table.items()}
                             for fid, table in self.cold_start_s.items()}

    def profile(self, function_id: str) -> FunctionProfile:
        for p in self.profiles:
            if p.function_id == function_id:
                return p
        raise ConfigError(f"unknown profile for function_id {function_id!r}")

    def validate(self) -> None:
        if list(self.freq_set) != sorted(set(self.freq_set)) or not self.freq_set:
            raise ConfigError("freq_set must be non-empty, sorted ascending, without duplicates")
        missing = [f for f in self.freq_set if f not in self.idle_power_w]
        if missing:
            raise ConfigError(f"idle_power_w lacks frequencies {missing}")
        if not 0 < self.rho_max <= 1:
            raise ConfigError("rho_max must be in (0, 1]")
        if self.node_count < 1 or self.cores_per_node < 1:
            raise ConfigError("need at least one node with at least one core")
        if self.service not in ("exponential", "deterministic"):
            raise ConfigError(f"unknown service mode {self.service!r}")
        for name in ("workload_interarrival_rate", "duration_s", "sample_interval_s",
                     "autoscaler_interval_s", "profile_run_s", "node_max_power_w"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for p in self.profiles:
            problems = validate_profile(p, self.freq_set)
            if problems:
                raise ConfigError(f"profile {p.function_id}: {'; '.join(problems)}")
        seen = set()
        for w in self.workloads:
            if w.workload_id in seen:
                raise ConfigError(f"duplicate workload_id {w.workload_id!r}")
            seen.add(w.workload_id)
            self.profile(w.function_id)
            if w.kind == "stream":
                if not (w.rate_rps and w.rate_rps > 0):
                    raise ConfigError(f"{w.workload_id}: stream needs rate_rps > 0")
                if not ((w.requests and w.requests > 0) or (w.duration_s and w.duration_s > 0)):
                    raise ConfigError(f"{w.workload_id}: stream needs requests or duration_s")
            elif w.kind == "batch":
                if not (w.bs and w.bs > 0 and w.deadline_s and w.deadline_s > 0):
                    raise ConfigError(f"{w.workload_id}: batch needs bs > 0 and deadline_s > 0")
            else:
                raise ConfigError(f"{w.workload_id}: unknown kind {w.kind!r}")
            if w.freq_mhz is not None and w.freq_mhz not in self.freq_set:
                raise ConfigError(f"{w.workload_id}: freq_mhz {w.freq_mhz} not in P")
            if w.replicas is not None and w.replicas < 1:
                raise ConfigError(f"{w.workload_id}: replicas must be >= 1")

    def to_dict(self) -> dict:
        return {
            "profiles": [p.to_dict() for p in self.profiles],
            "workloads": [w.to_dict() for w in self.workloads],
            "freq_set": list(self.freq_set),
            "rho_max": self.rho_max,
            "node_count": self.node_count,
            "cores_per_node": self.cores_per_node,
            "idle_power_w": {str(k): v for k, v in self.idle_power_w.items()},
            "node_max_power_w": self.node_max_power_w,
            "workload_interarrival_rate": self.workload_interarrival_rate,
            "first_submit_s": self.first_submit_s,
            "cold_start_s": {fid: {str(k): v for k, v in t.items()}
                             for fid, t in self.cold_start_s.items()},
            "duration_s": self.duration_s,
            "stop_when_idle": self.stop_when_idle,
            "seed": self.seed,
            "service": self.service,
            "autoscaler_interval_s": self.autoscaler_interval_s,
            "rotation_period_s": self.rotation_period_s,
            "profile_run_s": self.profile_run_s,
            "sample_interval_s": self.sample_interval_s,
            "dvfs_latency_s": self.dvfs_latency_s,
            "record_requests": self.record_requests,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> SimConfig:
        data = dict(data)
        if "profile_store" in data:
            path = Path(data.pop("profile_store"))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            profiles = load_store(path)
        else:
            profiles = [FunctionProfile.from_dict(p) for p in data.pop("profiles", [])]
        workloads = [WorkloadSpec.from_dict(w) for w in data.pop("workloads", [])]
        known = set(cls.__dataclass_fields__) - {"profiles", "workloads"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(extra))}")
        return cls(profiles=profiles, workloads=workloads, **data)

    @classmethod
    def load(cls, path: str | Path) -> SimConfig:
        path = Path(path)
        with open(path) as f:
            return cls.from_dict(json.load(f), base_dir=path.parent)


def node_power(freq_mhz: int, busy_replicas: Iterable[tuple[FunctionProfile, float]],
               idle_power_w: Mapping[int, float]) -> float:
    """Idle draw at ``freq_mhz`` plus each replica's busy power times its busy fraction."""
    if freq_mhz not in idle_power_w:
        raise KeyError(f"no idle power at {freq_mhz} MHz")
    total = idle_power_w[freq_mhz]
    for profile, busy in busy_replicas:
        total += lookup(profile, freq_mhz).per_replica_power_w * busy
    return total


# -- simulation state --------------------------------------------------------

class _Request:
    __slots__ = ("index", "arrival", "work", "drawn", "started", "exec_s", "served")

    def __init__(self, index: int, arrival: float, work: float):
        self.index = index
        self.arrival = arrival
        self.work = work
        self.drawn = work
        self.started = 0.0
        self.exec_s = 0.0
        self.served = 0.0


class _Replica:
    __slots__ = ("rid", "seq", "wl", "job_id", "node", "ready", "ready_at", "queue",
                 "current", "version", "busy_time", "completed", "removed")

    def __init__(self, rid: str, seq: int, wl: "_Workload", job_id: str, node: "_Node"):
        self.rid = rid
        self.seq = seq
        self.wl = wl
        self.job_id = job_id
        self.node = node
        self.ready = False
        self.ready_at = 0.0
        self.queue: deque[_Request] = deque()
        self.current: Optional[_Request] = None
        self.version = 0
        self.busy_time = 0.0
        self.completed = 0
        self.removed = False

    @property
    def load(self) -> int:
        return len(self.queue) + (self.current is not None)


class _Node:
    __slots__ = ("node_id", "freq", "replicas", "power", "agent", "energy", "ever_used",
                 "freq_trace")

    def __init__(self, node_id: str, freq: int, agent: NodeAgent):
        self.node_id = node_id
        self.freq = freq
        self.replicas: list[_Replica] = []
        self.power = 0.0
        self.agent = agent
        self.energy = 0.0
        self.ever_used = False
        self.freq_trace: list[list[float]] = []


class _Workload:
    def __init__(self, spec: WorkloadSpec, profile: FunctionProfile):
        self.spec = spec
        self.profile = profile
        self.exec_by_freq = {p.freq_mhz: p.avg_exec_time_s for p in profile.curve}
        self.power_by_freq = {p.freq_mhz: p.per_replica_power_w for p in profile.curve}
        self.submitted_at: Optional[float] = None
        self.done_at: Optional[float] = None
        self.replicas: list[_Replica] = []
        self.pending: deque[_Request] = deque()
        self.generated = 0
        self.completed = 0
        self.rejected = 0
        self.violations = 0
        self.generation_done = False
        self.rejected_reason: Optional[str] = None
        self.response_times: list[float] = []
        self.records: list[list[float]] = []
        self.last_completion: Optional[float] = None
        self.replica_seq = 0
        self.replica_trace: list[list[float]] = []
        self.window_arrivals = 0
        self.decision: Optional[ScalingDecision] = None
        self.profile_run: Optional[dict] = None
        self.profile_replica: Optional[_Replica] = None
        self.deployment_profile: Optional[FunctionProfile] = None
        self.busy_time_closed = 0.0
        self.ready_time_closed = 0.0
        self.arrival_rng: random.Random
        self.work_rng: random.Random

    @property
    def finished(self) -> bool:
        return self.done_at is not None

    def live_replicas(self) -> list[_Replica]:
        return [r for r in self.replicas if not r.removed]


class Simulation:
    def __init__(self, config: SimConfig, strategy: Strategy | str, seed: Optional[int] = None):
        config.validate()
        self.config = config
        self.strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
        self.seed = config.seed if seed is None else seed
        self.freq_set = config.freq_set
        self.cluster = Cluster.for_strategy(self.strategy, config.node_count,
                                            config.cores_per_node, config.freq_set)
        self.nodes: dict[str, _Node] = {}
        for nid, view in self.cluster.nodes.items():
            agent = NodeAgent(nid, config.cores_per_node, config.freq_set,
                              config.node_max_power_w, freq_mhz=view.current_freq_mhz)
            node = _Node(nid, view.current_freq_mhz, agent)
            node.power = config.idle_power_w[node.freq]
            agent.power_w = node.power
            node.freq_trace.append([0.0, node.freq])
            self.nodes[nid] = node
        self.cluster_power = sum(n.power for n in self.nodes.values())
        unknown = {w.function_id for w in config.workloads if not w.profiled}
        self.store = [p for p in config.profiles if p.function_id not in unknown]
        self.workloads: dict[str, _Workload] = {}
        for spec in config.workloads:
            wl = _Workload(spec, config.profile(spec.function_id))
            wl.arrival_rng = random.Random(f"{self.seed}:arrivals:{spec.workload_id}")
            wl.work_rng = random.Random(f"{self.seed}:work:{spec.workload_id}")
            self.workloads[spec.workload_id] = wl
        self.now = 0.0
        self.energy = 0.0
        self.bins: list[float] = []
        self.heap: list = []
        self.seq = 0
        self.notes: list[str] = []

    # -- event plumbing ------------------------------------------------------

    def push(self, t: float, prio: int, payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, prio, self.seq, payload))

    def advance(self, t: float) -> None:
        dt = t - self.now
        if dt <= 0:
            return
        p = self.cluster_power
        self.energy += p * dt
        for node in self.nodes.values():
            node.energy += node.power * dt
        width = self.config.sample_interval_s
        start = self.now
        while start < t:
            b = int(start // width)
            edge = min(t, (b + 1) * width)
            if edge <= start:  # float guard at bin edges
                b += 1
                edge = min(t, (b + 1) * width)
            while len(self.bins) <= b:
                self.bins.append(0.0)
            self.bins[b] += p * (edge - start)
            start = edge
        self.now = t

    def _refresh_node_power(self, node: _Node) -> None:
        busy = node.power
        new = self.config.idle_power_w[node.freq]
        for r in node.replicas:
            if r.current is not None:
                new += r.wl.power_by_freq[node.freq]
        node.power = new
        node.agent.power_w = new
        self.cluster_power += new - busy

    # -- replica lifecycle ---------------------------------------------------

    def _cold_start(self, wl: _Workload, freq: int) -> float:
        return self.config.cold_start_s.get(wl.spec.function_id, {}).get(freq, 0.0)

    def _place_replicas(self, wl: _Workload, job_id: str, plan, profile: FunctionProfile,
                        desired_freq: int) -> list[_Replica]:
        self.cluster.clock = self.now
        apply_plan(self.cluster, plan, job_id, profile, desired_freq,
                   self.strategy.exclusive_cores)
        for node_id, freq in plan.freq_updates:
            self.push(self.now + self.config.dvfs_latency_s, FREQ_CHANGE, ("freq", node_id, freq))
        created = []
        for node_id, count in plan.assignments:
            node = self.nodes[node_id]
            node.ever_used = True
            freq = self.cluster.nodes[node_id].current_freq_mhz
            for _ in range(count):
                wl.replica_seq += 1
                rep = _Replica(f"{wl.spec.workload_id}/r{wl.replica_seq}", wl.replica_seq,
                               wl, job_id, node)
                if self.strategy.exclusive_cores:
                    node.agent.pin(rep.rid, cores_needed(profile))
                node.replicas.append(rep)
                wl.replicas.append(rep)
                created.append(rep)
                self.push(self.now + self._cold_start(wl, freq), READY, ("ready", rep))
        self._trace_replicas(wl)
        return created

    def _trace_replicas(self, wl: _Workload) -> None:
        count = len(wl.live_replicas())
        if wl.replica_trace and wl.replica_trace[-1][0] == self.now:
            wl.replica_trace[-1][1] = count
        else:
            wl.replica_trace.append([self.now, count])

    def _retire(self, rep: _Replica) -> list[_Request]:
        """Take a replica out of service; returns its unfinished requests in order."""
        orphans = []
        if rep.current is not None:
            req = rep.current
            elapsed = self.now - req.started
            rep.busy_time += elapsed
            req.served += elapsed
            req.work = max(0.0, req.work - elapsed / req.exec_s)
            rep.current = None
            rep.version += 1
            orphans.append(req)
        orphans.extend(rep.queue)
        rep.queue.clear()
        rep.removed = True
        wl = rep.wl
        wl.busy_time_closed += rep.busy_time
        if rep.ready:
            wl.ready_time_closed += self.now - rep.ready_at
        rep.node.replicas.remove(rep)
        rep.node.agent.unpin(rep.rid)
        self._refresh_node_power(rep.node)
        return orphans

    def _remove_replicas(self, wl: _Workload, victims: Sequence[_Replica]) -> None:
        self.cluster.clock = self.now
        orphans: list[_Request] = []
        for rep in victims:
            orphans.extend(self._retire(rep))
            freq = remove_replicas(self.cluster, rep.node.node_id, rep.job_id, 1)
            if freq is not None:
                self.push(self.now + self.config.dvfs_latency_s, FREQ_CHANGE,
                          ("freq", rep.node.node_id, freq))
        self._trace_replicas(wl)
        # orphans go back to the head of the line, oldest first
        for req in sorted(orphans, key=lambda r: r.index, reverse=True):
            wl.pending.appendleft(req)
        self._drain_pending(wl)

    def _release_job(self, wl: _Workload, job_id: str) -> None:
        reps = [r for r in wl.live_replicas() if r.job_id == job_id]
        orphans = []
        for rep in reps:
            orphans.extend(self._retire(rep))
        self.cluster.clock = self.now
        for node_id, freq in complete_job(self.cluster, job_id):
            self.push(self.now + self.config.dvfs_latency_s, FREQ_CHANGE, ("freq", node_id, freq))
        self._trace_replicas(wl)
        for req in sorted(orphans, key=lambda r: r.index, reverse=True):
            wl.pending.appendleft(req)
        self._drain_pending(wl)

    # -- request flow --------------------------------------------------------

    def _start_service(self, rep: _Replica, req: _Request) -> None:
        rep.current = req
        req.started = self.now
        req.exec_s = rep.wl.exec_by_freq[rep.node.freq]
        rep.version += 1
        self.push(self.now + req.work * req.exec_s, COMPLETION, ("done", rep, rep.version))
        self._refresh_node_power(rep.node)

    def _pick_replica(self, wl: _Workload) -> Optional[_Replica]:
        best = None
        for rep in wl.replicas:
            if rep.ready and not rep.removed:
                if best is None or (rep.load, rep.seq) < (best.load, best.seq):
                    best = rep
        return best

    def _dispatch(self, wl: _Workload, req: _Request) -> None:
        rep = self._pick_replica(wl)
        if rep is None:
            wl.pending.append(req)
        elif rep.current is None:
            self._start_service(rep, req)
        else:
            rep.queue.append(req)

    def _drain_pending(self, wl: _Workload) -> None:
        while wl.pending:
            rep = self._pick_replica(wl)
            if rep is None:
                return
            req = wl.pending.popleft()
            if rep.current is None:
                self._start_service(rep, req)
            else:
                rep.queue.append(req)

    def _draw_work(self, wl: _Workload) -> float:
        if self.config.service == "deterministic":
            return 1.0
        return wl.work_rng.expovariate(1.0)

    def _schedule_next_arrival(self, wl: _Workload) -> None:
        spec = wl.spec
        total = spec.total_requests
        if total is not None and wl.generated >= total:
            wl.generation_done = True
            return
        t = self.now + wl.arrival_rng.expovariate(spec.lambda_rps)
        if spec.kind == "stream" and spec.duration_s is not None \
                and t > wl.submitted_at + spec.duration_s:
            wl.generation_done = True
            return
        self.push(t, ARRIVAL, ("arrival", wl))

    def _arrive(self, wl: _Workload) -> None:
        req = _Request(wl.generated, self.now, self._draw_work(wl))
        wl.generated += 1
        wl.window_arrivals += 1
        if wl.rejected_reason is not None:
            wl.rejected += 1
            wl.violations += 1
        else:
            self._dispatch(wl, req)

    def _complete(self, rep: _Replica) -> None:
        req = rep.current
        elapsed = self.now - req.started
        rep.busy_time += elapsed
        req.served += elapsed
        rep.completed += 1
        rep.current = None
        wl = rep.wl
        wl.completed += 1
        response = self.now - req.arrival
        wl.response_times.append(response)
        if self.config.record_requests:
            wl.records.append([req.index, req.arrival, self.now, req.served, req.drawn])
        wl.last_completion = self.now
        spec = wl.spec
        late = spec.slo_response_s is not None and response > spec.slo_response_s
        if spec.kind == "batch" and self.now > wl.submitted_at + spec.deadline_s:
            late = True
        wl.violations += late
        if rep.queue:
            self._start_service(rep, rep.queue.popleft())
        else:
            self._refresh_node_power(rep.node)

    def _maybe_finish(self, wl: _Workload) -> None:
        if wl.finished or not wl.generation_done:
            return
        if wl.completed + wl.rejected < wl.generated:
            return
        wl.done_at = self.now
        for job_id in sorted({r.job_id for r in wl.live_replicas()}):
            self._release_job(wl, job_id)

    # -- strategy hooks ------------------------------------------------------

    def _submit(self, wl: _Workload) -> None:
        wl.submitted_at = self.now
        spec = wl.spec
        if self.strategy is Strategy.EES:
            self._deploy_ees(wl)
        else:
            self._deploy_baseline(wl)
        if spec.kind == "batch" and spec.burst:
            for _ in range(spec.bs):
                self._arrive(wl)
            wl.generation_done = True
        else:
            self._schedule_next_arrival(wl)
        self._maybe_finish(wl)

    def _reject(self, wl: _Workload, reason: str) -> None:
        wl.rejected_reason = reason
        self.notes.append(f"{wl.spec.workload_id} not scheduled: {reason}")
        log.info("workload %s not scheduled: %s", wl.spec.workload_id, reason)

    def _ees_decision(self, wl: _Workload):
        spec = wl.spec
        lam = spec.lambda_rps
        if spec.freq_mhz is not None:
            pt = lookup(wl.profile, spec.freq_mhz)
            c = spec.replicas or scaling.min_replicas(lam, pt.avg_exec_time_s, self.config.rho_max)
            rho = scaling.utilization(lam, scaling.service_rate(c, pt.avg_exec_time_s))
            return ScalingDecision(spec.freq_mhz, c, rho, pt.per_replica_power_w * c, lam)
        return scaling.plan_job(spec.job_request(), self.store, None, freq_set=self.freq_set,
                                rho_max=self.config.rho_max, seed=self.seed)

    def _deploy_ees(self, wl: _Workload) -> None:
        decision = self._ees_decision(wl)
        if isinstance(decision, NeedsProfileRun):
            run = ScalingDecision(decision.freq_mhz, decision.replicas, 0.0,
                                  lookup(wl.profile, decision.freq_mhz).per_replica_power_w,
                                  wl.spec.lambda_rps)
            plan = schedule_ees(self.cluster, self._profile_job(wl), run, wl.profile)
            if plan.unscheduled:
                self._reject(wl, plan.reason)
                return
            wl.profile_run = {"freq_mhz": decision.freq_mhz, "replicas": decision.replicas}
            reps = self._place_replicas(wl, self._profile_job(wl), plan, wl.profile,
                                        decision.freq_mhz)
            wl.profile_replica = reps[0]
            return
        failure = self._deploy_decision(wl, decision, wl.profile)
        if failure:
            self._reject(wl, failure)

    def _deploy_decision(self, wl: _Workload, decision: ScalingDecision,
                         planned_profile: FunctionProfile) -> Optional[str]:
        """Place the deployment; returns the reason when it does not fit."""
        plan = schedule_ees(self.cluster, wl.spec.workload_id, decision, wl.profile)
        if plan.unscheduled:
            return plan.reason
        wl.decision = decision
        wl.deployment_profile = planned_profile
        # the cluster records the planner's view of power, placement uses real core needs
        self._place_replicas(wl, wl.spec.workload_id, plan, planned_profile, decision.freq_mhz)
        return None

    @staticmethod
    def _profile_job(wl: _Workload) -> str:
        return f"{wl.spec.workload_id}#profile"

    def _end_profile_run(self, wl: _Workload) -> None:
        rep = wl.profile_replica
        if wl.finished or rep is None or rep.removed:
            return
        busy = rep.busy_time
        if rep.current is not None:
            busy += self.now - rep.current.started
        if rep.completed == 0 or busy <= 0:
            self.push(self.now + self.config.profile_run_s, PROFILE_END, ("profile_end", wl))
            return
        freq = wl.profile_run["freq_mhz"]
        sample = ObservedSample(
            function_id=wl.spec.function_id,
            freq_mhz=freq,
            measured_throughput_rps=rep.completed / busy,
            measured_cpu_utilization=lookup(wl.profile, freq).cpu_utilization,
        )
        decision = scaling.plan_job(wl.spec.job_request(), self.store, sample,
                                    freq_set=self.freq_set, rho_max=self.config.rho_max,
                                    seed=self.seed, cpu_cores=wl.profile.cpu_cores)
        matched = match_closest([p for p in self.store if freq in p.frequencies], sample)
        predicted = predict_profile(matched, sample, cpu_cores=wl.profile.cpu_cores,
                                    memory_mb=wl.profile.memory_mb)
        wl.profile_run.update({
            "measured_throughput_rps": sample.measured_throughput_rps,
            "measured_cpu_utilization": sample.measured_cpu_utilization,
            "matched_function": matched.function_id,
            "ended_at_s": self.now,
        })
        if self._deploy_decision(wl, decision, predicted) is None:
            return
        # no room while the profiling replica holds its core: free it and retry
        self._release_job(wl, self._profile_job(wl))
        wl.profile_replica = None
        failure = self._deploy_decision(wl, decision, predicted)
        if failure:
            self._reject(wl, f"deployment after profile run: {failure}")
            wl.rejected += len(wl.pending)
            wl.violations += len(wl.pending)
            wl.pending.clear()
            self._maybe_finish(wl)

    def _on_ready(self, rep: _Replica) -> None:
        if rep.removed:
            return
        rep.ready = True
        rep.ready_at = self.now
        wl = rep.wl
        if rep is wl.profile_replica and wl.decision is None:
            self.push(self.now + self.config.profile_run_s, PROFILE_END, ("profile_end", wl))
        elif wl.profile_replica is not None and rep.job_id == wl.spec.workload_id:
            # first replica of the real deployment is up: hand over from the profiling one
            wl.profile_replica = None
            self._release_job(wl, self._profile_job(wl))
        if wl.pending:
            self.push(self.now, DRAIN, ("drain", wl))

    def _deploy_baseline(self, wl: _Workload) -> None:
        count = wl.spec.replicas or wl.spec.initial_replicas
        if not self._add_baseline_replicas(wl, count):
            self._reject(wl, "no node has room for a single replica")
            return
        if wl.spec.replicas is None:
            self.push(self.now + self.config.autoscaler_interval_s, AUTOSCALE, ("autoscale", wl))

    def _add_baseline_replicas(self, wl: _Workload, count: int) -> int:
        for k in range(count, 0, -1):
            plan = schedule_baseline(self.cluster, wl.spec.workload_id, k, wl.profile,
                                     self.strategy)
            if not plan.unscheduled:
                self._place_replicas(wl, wl.spec.workload_id, plan, wl.profile,
                                     self.cluster.governor_freq_mhz)
                return k
        return 0

    def _target_load(self, wl: _Workload) -> float:
        if wl.spec.target_rps_per_replica:
            return wl.spec.target_rps_per_replica
        top = lookup(wl.profile, max(self.freq_set))
        return self.config.rho_max * top.throughput_rps

    def _autoscale(self, wl: _Workload) -> None:
        if wl.finished or wl.rejected_reason is not None:
            return
        interval = self.config.autoscaler_interval_s
        live = wl.live_replicas()
        ready = [r for r in live if r.ready]
        if ready:
            mean_load = wl.window_arrivals / interval / len(ready)
            desired = autoscale_rps(len(ready), mean_load, self._target_load(wl))
            if desired > len(live):
                self._add_baseline_replicas(wl, desired - len(live))
            elif desired < len(live):
                # prefer dropping replicas still cold-starting, then the newest
                victims = sorted(live, key=lambda r: (not r.ready, r.seq),
                                 reverse=True)[:len(live) - desired]
                self._remove_replicas(wl, victims)
        wl.window_arrivals = 0
        self.push(self.now + interval, AUTOSCALE, ("autoscale", wl))

    # -- frequency / rotation ------------------------------------------------

    def _change_freq(self, node_id: str, freq: int) -> None:
        node = self.nodes[node_id]
        node.agent.set_frequency(freq)
        if freq == node.freq:
            return
        node.freq = freq
        node.freq_trace.append([self.now, freq])
        for rep in node.replicas:
            req = rep.current
            if req is None:
                continue
            # keep the work done so far, finish the rest at the new speed
            elapsed = self.now - req.started
            rep.busy_time += elapsed
            req.served += elapsed
            req.work = max(0.0, req.work - elapsed / req.exec_s)
            req.started = self.now
            req.exec_s = rep.wl.exec_by_freq[freq]
            rep.version += 1
            self.push(self.now + req.work * req.exec_s, COMPLETION, ("done", rep, rep.version))
        self._refresh_node_power(node)

    def _rotate(self) -> None:
        for node in self.nodes.values():
            if node.agent.core_map:
                node.agent.rotate()
        if self.config.rotation_period_s > 0:
            self.push(self.now + self.config.rotation_period_s, ROTATE, ("rotate",))

    # -- main loop -----------------------------------------------------------

    def _all_done(self) -> bool:
        return all(wl.finished for wl in self.workloads.values())

    def run(self) -> dict:
        cfg = self.config
        submit_rng = random.Random(f"{self.seed}:submit")
        t = cfg.first_submit_s
        for i, wl in enumerate(self.workloads.values()):
            if i:
                t += submit_rng.expovariate(cfg.workload_interarrival_rate)
            at = t if wl.spec.submit_at_s is None else wl.spec.submit_at_s
            self.push(at, SUBMIT, ("submit", wl))
        if cfg.rotation_period_s > 0:
            self.push(cfg.rotation_period_s, ROTATE, ("rotate",))
        horizon = cfg.duration_s
        end = horizon
        while self.heap:
            t, _, _, payload = self.heap[0]
            # finish same-instant bookkeeping (e.g. the final demotion) before stopping
            if cfg.stop_when_idle and t > self.now and self.workloads and self._all_done():
                end = self.now
                break
            if t > horizon:
                break
            heapq.heappop(self.heap)
            self.advance(t)
            kind = payload[0]
            if kind == "done":
                _, rep, version = payload
                if rep.removed or version != rep.version:
                    continue
                self._complete(rep)
                self._maybe_finish(rep.wl)
            elif kind == "freq":
                self._change_freq(payload[1], payload[2])
            elif kind == "ready":
                self._on_ready(payload[1])
            elif kind == "drain":
                self._drain_pending(payload[1])
            elif kind == "arrival":
                wl = payload[1]
                self._arrive(wl)
                self._schedule_next_arrival(wl)
                self._maybe_finish(wl)
            elif kind == "submit":
                self._submit(payload[1])
            elif kind == "profile_end":
                self._end_profile_run(payload[1])
            elif kind == "autoscale":
                self._autoscale(payload[1])
            elif kind == "rotate":
                self._rotate()
        else:
            if cfg.stop_when_idle and self.workloads and self._all_done():
                end = self.now
        self.advance(end)
        return self._report(end)

    # -- reporting -----------------------------------------------------------

    def _report(self, end: float) -> dict:
        width = self.config.sample_interval_s
        series = []
        for b, energy in enumerate(self.bins):
            start = b * width
            span = min(end, start + width) - start
            if span > 0:
                series.append([start, energy / span])
        workloads = {}
        total_violations = 0
        for wid, wl in self.workloads.items():
            in_flight = len(wl.pending)
            busy = wl.busy_time_closed
            ready_time = wl.ready_time_closed
            for rep in wl.live_replicas():
                in_flight += len(rep.queue) + (rep.current is not None)
                busy += rep.busy_time
                if rep.current is not None:
                    busy += end - rep.current.started
                if rep.ready:
                    ready_time += end - rep.ready_at
            unfinished = in_flight
            violations = wl.violations
            if wl.spec.kind == "batch":
                violations += unfinished
            total_violations += violations
            done_at = wl.done_at
            duration = None
            if wl.submitted_at is not None:
                duration = (done_at if done_at is not None else end) - wl.submitted_at
            workloads[wid] = {
                "function_id": wl.spec.function_id,
                "kind": wl.spec.kind,
                "submitted_at_s": wl.submitted_at,
                "completed_at_s": done_at,
                "duration_s": duration,
                "generated": wl.generated,
                "completed": wl.completed,
                "in_flight": in_flight,
                "rejected": wl.rejected,
                "slo_violations": violations,
                "response_time_s": _summary(wl.response_times),
                "achieved_throughput_rps": (wl.completed / duration) if duration else 0.0,
                "busy_fraction": (busy / ready_time) if ready_time > 0 else None,
                "replica_trace": wl.replica_trace,
                "decision": None if wl.decision is None else {
                    "freq_mhz": wl.decision.freq_mhz,
                    "replicas": wl.decision.replicas,
                    "predicted_rho": wl.decision.predicted_rho,
                    "predicted_power_w": wl.decision.predicted_power_w,
                    "lambda_rps": wl.decision.lambda_rps,
                },
                "profile_run": wl.profile_run,
                "unscheduled_reason": wl.rejected_reason,
            }
            if self.config.record_requests:
                # index, arrival, completion, time in service, work drawn (unit mean)
                workloads[wid]["requests"] = wl.records
        notes = list(self.notes)
        if self.strategy is not Strategy.EES:
            notes.append("baseline placement is a round-robin stand-in for the orchestrator "
                         "default")
        if self.strategy is Strategy.BPS:
            notes.append("BPS modeled as an ideal min-frequency governor; hardware that "
                         "overrides the powersave setting is not modeled")
        return {
            "strategy": self.strategy.value,
            "seed": self.seed,
            "horizon_s": end,
            "total_energy_j": self.energy,
            "mean_power_w": self.energy / end if end > 0 else 0.0,
            "sample_interval_s": width,
            "power_timeseries": series,
            "node_energy_j": {nid: n.energy for nid, n in self.nodes.items()},
            "node_frequency_trace": {nid: n.freq_trace for nid, n in self.nodes.items()},
            "idle_nodes": sorted(nid for nid, n in self.nodes.items() if not n.ever_used),
            "slo_violations_total": total_violations,
            "workloads": workloads,
            "notes": notes,
        }


def _summary(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "p50": None, "p95": None, "p99": None, "max": None}
    ordered = sorted(values)
    n = len(ordered)

    def pct(q: float) -> float:
        return ordered[min(n - 1, max(0, math.ceil(q * n) - 1))]

    return {"count": n, "mean": sum(ordered) / n, "p50": pct(0.5), "p95": pct(0.95),
            "p99": pct(0.99), "max": ordered[-1]}


def run(config: SimConfig, strategy: Strategy | str, seed: Optional[int] = None) -> dict:
    return Simulation(config, strategy, seed).run()


def compare(config: SimConfig, strategies: Sequence[Strategy | str],
            seed: Optional[int] = None) -> dict:
    if len(strategies) < 2:
        raise ValueError("compare needs at least two strategies")
    parsed = [Strategy.parse(s) if isinstance(s, str) else s for s in strategies]
    reports = {s.value: run(config, s, seed) for s in parsed}
    bp = reports.get(Strategy.BP.value)
    rows = []
    for name, rep in reports.items():
        savings = None
        if bp is not None and bp["total_energy_j"] > 0:
            savings = 100.0 * (1.0 - rep["total_energy_j"] / bp["total_energy_j"])
        rows.append({
            "strategy": name,
            "total_energy_j": rep["total_energy_j"],
            "savings_vs_bp_pct": savings,
            "slo_violations": rep["slo_violations_total"],
            "idle_nodes": len(rep["idle_nodes"]),
            "workload_duration_s": {w: v["duration_s"] for w, v in rep["workloads"].items()},
            "workload_slo_violations": {w: v["slo_violations"]
                                        for w, v in rep["workloads"].items()},
        })
    return {"seed": config.seed if seed is None else seed, "summary": rows, "reports": reports}


def energy_integral(report: dict) -> float:
    """Integral of the binned power series; should equal ``total_energy_j``."""
    width = report["sample_interval_s"]
    end = report["horizon_s"]
    return sum(w * (min(end, t + width) - t) for t, w in report["power_timeseries"])


def write_report(report: dict, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def write_csvs(report: dict, out_dir: str | Path, prefix: str = "") -> list[Path]:
    out_dir = Path(out_dir)
    written = []

    def emit(name: str, id_col: str, rows: Iterable[tuple]) -> None:
        path = out_dir / f"{prefix}{name}.csv"
        with open(path, "w") as f:
            f.write(f"t_s,{id_col},value\n")
            for t, key, value in rows:
                f.write(f"{t!r},{key},{value!r}\n")
        written.append(path)

    emit("power", "node_id", ((t, "cluster", w) for t, w in report["power_timeseries"]))
    emit("frequency", "node_id",
         ((t, nid, f) for nid, trace in sorted(report["node_frequency_trace"].items())
          for t, f in trace))
    emit("replicas", "workload_id",
         ((t, wid, c) for wid, wl in sorted(report["workloads"].items())
          for t, c in wl["replica_trace"]))
    return written
