"""Replica and frequency sizing from an M/M/c stability rule.

For each frequency in a function's profile the smallest replica count that
keeps the utilization factor strictly below ``rho_max`` is found, and the
frequency/replica pair with the lowest aggregate busy power wins.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

from .profiles import (
    DEFAULT_FREQ_SET,
    FunctionProfile,
    ObservedSample,
    match_closest,
    predict_profile,
)

DEFAULT_RHO_MAX = 0.8


@dataclass(frozen=True)
class JobRequest:
    job_id: str
    function_id: str
    kind: Literal["batch", "stream"]
    bs: Optional[int] = None
    d: Optional[float] = None
    min_throughput_rps: Optional[float] = None
    profile: Optional[FunctionProfile] = None

    def __post_init__(self):
        if self.kind == "batch":
            if not (self.bs and self.bs > 0 and self.d and self.d > 0):
                raise ValueError(f"batch job {self.job_id} needs bs > 0 and d > 0")
        elif self.kind == "stream":
            if not (self.min_throughput_rps and self.min_throughput_rps > 0):
                raise ValueError(f"stream job {self.job_id} needs min_throughput_rps > 0")
        else:
            raise ValueError(f"unknown job kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: dict) -> JobRequest:
        return cls(
            job_id=str(data.get("job_id", data["function_id"])),
            function_id=str(data["function_id"]),
            kind=data["kind"],
            bs=data.get("bs"),
            d=data.get("d"),
            min_throughput_rps=data.get("min_throughput_rps"),
            profile=FunctionProfile.from_dict(data["profile"]) if data.get("profile") else None,
        )


@dataclass(frozen=True)
class ScalingDecision:
    freq_mhz: int
    replicas: int
    predicted_rho: float
    predicted_power_w: float
    lambda_rps: float


@dataclass(frozen=True)
class NeedsProfileRun:
    """No profile is known: deploy one replica at ``freq_mhz`` and collect a sample."""
    function_id: str
    freq_mhz: int
    replicas: int = 1


def arrival_rate(job: JobRequest) -> float:
    if job.kind == "stream":
        return float(job.min_throughput_rps)
    return job.bs / job.d


def service_rate(replicas: int, avg_exec_time_s: float) -> float:
    return replicas / avg_exec_time_s


def utilization(lambda_rps: float, mu_rps: float) -> float:
    return lambda_rps / mu_rps


def _rho(lambda_rps: float, avg_exec_time_s: float, c: int) -> float:
    return utilization(lambda_rps, service_rate(c, avg_exec_time_s))


def min_replicas(lambda_rps: float, avg_exec_time_s: float,
                 rho_max: float = DEFAULT_RHO_MAX) -> int:
    """Smallest c >= 1 with utilization strictly below ``rho_max``."""
    if not (lambda_rps > 0 and avg_exec_time_s > 0 and 0 < rho_max <= 1):
        raise ValueError("min_replicas needs positive load, exec time and 0 < rho_max <= 1")
    # closed-form guess, then nudge so the boundary test uses the same float path as _rho
    c = max(1, math.floor(lambda_rps * avg_exec_time_s / rho_max) + 1)
    while c > 1 and _rho(lambda_rps, avg_exec_time_s, c - 1) < rho_max:
        c -= 1
    while _rho(lambda_rps, avg_exec_time_s, c) >= rho_max:
        c += 1
    return c


def select_config(profile: FunctionProfile, lambda_rps: float,
                  rho_max: float = DEFAULT_RHO_MAX) -> ScalingDecision:
    best = None
    best_key = None
    for pt in profile.curve:
        c = min_replicas(lambda_rps, pt.avg_exec_time_s, rho_max)
        cost = pt.per_replica_power_w * c
        key = (cost, pt.freq_mhz, c)
        if best_key is None or key < best_key:
            best_key = key
            best = ScalingDecision(
                freq_mhz=pt.freq_mhz,
                replicas=c,
                predicted_rho=_rho(lambda_rps, pt.avg_exec_time_s, c),
                predicted_power_w=cost,
                lambda_rps=lambda_rps,
            )
    if best is None:
        raise ValueError(f"profile {profile.function_id} has an empty curve")
    return best


def profile_run_frequency(job_id: str, freq_set: Sequence[int], seed: int) -> int:
    # string seeds hash deterministically in CPython's random (not PYTHONHASHSEED-dependent)
    return random.Random(f"{seed}:profile-run:{job_id}").choice(sorted(freq_set))


def plan_job(job: JobRequest, store: Sequence[FunctionProfile],
             sample: ObservedSample | None = None, *,
             freq_set: Sequence[int] = DEFAULT_FREQ_SET,
             rho_max: float = DEFAULT_RHO_MAX,
             seed: int = 0,
             cpu_cores: float | None = None) -> ScalingDecision | NeedsProfileRun:
    """Size a job from its stored profile, from a profile-run sample, or ask for a run."""
    lam = arrival_rate(job)
    profile = job.profile
    if profile is None:
        profile = next((p for p in store if p.function_id == job.function_id), None)
    if profile is not None:
        return select_config(profile, lam, rho_max)
    if sample is None:
        return NeedsProfileRun(job.function_id, profile_run_frequency(job.job_id, freq_set, seed))
    candidates = [p for p in store if sample.freq_mhz in p.frequencies]
    known = match_closest(candidates, sample)
    predicted = predict_profile(known, sample, cpu_cores=cpu_cores)
    return select_config(predicted, lam, rho_max)
