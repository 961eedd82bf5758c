"""Bundled experiment inputs.

``bundled_config`` builds a seven-workload, seven-node scenario whose
resources and request rates follow the evaluation workload table. The
function profiles are synthetic: execution time falls with frequency
(fully for CPU-bound functions, partially for I/O-bound ones) and busy power
is a static share plus a steep dynamic term, so energy per request bottoms
out between 2.6 and 2.8 GHz rather than at either end of the range.

``motivation_config`` encodes the single-host SHA256 benchmark: four
replicas on a four-core node, where dropping from 4.0 to 3.6 GHz costs 10%
in execution time and saves 22.5% energy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .profiles import DEFAULT_FREQ_SET, FrequencyPoint, FunctionProfile, dump_store
from .simengine import SimConfig, WorkloadSpec

REFERENCE_MHZ = 3600
# dynamic power exponent and static share of a busy replica's power at 3.6 GHz
DYNAMIC_EXPONENT = 4.0
STATIC_SHARE = 0.49

BUNDLED_SEED = 42
STREAM_SECONDS = 300


@dataclass(frozen=True)
class _Fn:
    function_id: str
    cpu_cores: float
    memory_mb: int
    exec_at_ref_s: float
    cpu_bound: float  # exponent of exec-time growth as frequency drops
    power_at_ref_w: float
    utilization: float
    cold_start_s: float
    cold_start_extra_s: float = 0.3


_FUNCTIONS = [
    _Fn("car-detection", 1.0, 1024, 0.45, 0.9, 11.0, 0.85, 2.2),
    _Fn("sha256-1", 1.0, 125, 0.30, 1.0, 12.0, 0.97, 0.9),
    _Fn("sha256-2", 1.0, 125, 0.30, 1.0, 12.0, 0.97, 0.9),
    _Fn("sha256-3", 0.5, 125, 0.55, 1.0, 6.0, 0.95, 0.9),
    _Fn("linpack-1", 1.0, 1024, 0.25, 1.0, 13.0, 0.99, 1.4, 0.26),
    _Fn("linpack-2", 0.5, 1024, 0.035, 1.0, 6.5, 0.985, 1.4, 0.26),
    _Fn("pdf-generation", 0.5, 256, 0.012, 0.5, 3.0, 0.35, 1.1),
]

# (workload id, function, rate rps, profiled, response-time SLO seconds)
_WORKLOADS = [
    ("car-detection", "car-detection", 3.9, True, 4.0),
    ("sha256-1", "sha256-1", 3.2, True, 2.0),
    ("sha256-2", "sha256-2", 3.3, True, 2.0),
    ("sha256-3", "sha256-3", 1.0, False, 4.0),
    ("linpack-1", "linpack-1", 1.0, True, 2.0),
    ("linpack-2", "linpack-2", 14.0, False, 1.0),
    ("pdf-generation", "pdf-generation", 138.0, True, 0.5),
]


def _profile(fn: _Fn, freq_set=DEFAULT_FREQ_SET) -> FunctionProfile:
    curve = []
    for f in freq_set:
        u = f / REFERENCE_MHZ
        exec_s = fn.exec_at_ref_s * u ** -fn.cpu_bound
        power = fn.power_at_ref_w * (STATIC_SHARE + (1 - STATIC_SHARE) * u ** DYNAMIC_EXPONENT)
        curve.append(FrequencyPoint.from_exec_time(f, exec_s, power, fn.utilization))
    return FunctionProfile(fn.function_id, fn.cpu_cores, fn.memory_mb, tuple(curve))


def idle_power(freq_set=DEFAULT_FREQ_SET, low_w: float = 9.0, high_w: float = 12.0) -> dict[int, float]:
    lo, hi = min(freq_set), max(freq_set)
    span = (hi - lo) or 1
    return {f: low_w + (high_w - low_w) * ((f - lo) / span) ** 2 for f in freq_set}


def cold_start_table(freq_set=DEFAULT_FREQ_SET) -> dict[str, dict[int, float]]:
    """Startup delay per function: base delay plus up to the extra at the lowest frequency."""
    lo, hi = min(freq_set), max(freq_set)
    span = (hi - lo) or 1
    return {fn.function_id: {f: fn.cold_start_s + fn.cold_start_extra_s * (hi - f) / span
                             for f in freq_set}
            for fn in _FUNCTIONS}


def bundled_profiles() -> list[FunctionProfile]:
    return [_profile(fn) for fn in _FUNCTIONS]


def bundled_workloads(stream_seconds: float = STREAM_SECONDS) -> list[WorkloadSpec]:
    return [
        WorkloadSpec(workload_id=wid, function_id=fid, kind="stream", rate_rps=rate,
                     requests=int(round(rate * stream_seconds)), slo_response_s=slo,
                     profiled=profiled)
        for wid, fid, rate, profiled, slo in _WORKLOADS
    ]


def bundled_config(seed: int = BUNDLED_SEED) -> SimConfig:
    return SimConfig(
        profiles=bundled_profiles(),
        workloads=bundled_workloads(),
        freq_set=DEFAULT_FREQ_SET,
        node_count=7,
        cores_per_node=4,
        idle_power_w=idle_power(),
        node_max_power_w=65.0,
        cold_start_s=cold_start_table(),
        duration_s=3600.0,
        stop_when_idle=True,
        seed=seed,
    )


# single-host benchmark: 2.2-4.2 GHz, four SHA256 replicas
MOTIVATION_FREQ_SET = tuple(range(2200, 4201, 200))
MOTIVATION_EXEC_AT_4000_S = 2.0
MOTIVATION_POWER_AT_4000_W = 14.5
MOTIVATION_IDLE_AT_4000_W = 8.0
MOTIVATION_IDLE_AT_3600_W = 7.0
# targets at 3.6 GHz relative to 4.0 GHz
MOTIVATION_SLOWDOWN = 1.10
MOTIVATION_ENERGY_RATIO = 0.775


def _motivation_exponents() -> tuple[float, float, float]:
    step = math.log(3600 / 4000)
    exec_exp = -math.log(MOTIVATION_SLOWDOWN) / step
    idle_exp = math.log(MOTIVATION_IDLE_AT_3600_W / MOTIVATION_IDLE_AT_4000_W) / step
    # (idle36 + 4 p36) * t36 = ratio * (idle40 + 4 p40) * t40
    total40 = MOTIVATION_IDLE_AT_4000_W + 4 * MOTIVATION_POWER_AT_4000_W
    total36 = MOTIVATION_ENERGY_RATIO * total40 / MOTIVATION_SLOWDOWN
    p36 = (total36 - MOTIVATION_IDLE_AT_3600_W) / 4
    power_exp = math.log(p36 / MOTIVATION_POWER_AT_4000_W) / step
    return exec_exp, idle_exp, power_exp


def motivation_profile() -> FunctionProfile:
    exec_exp, _, power_exp = _motivation_exponents()
    curve = []
    for f in MOTIVATION_FREQ_SET:
        u = f / 4000
        curve.append(FrequencyPoint.from_exec_time(
            f, MOTIVATION_EXEC_AT_4000_S * u ** -exec_exp,
            MOTIVATION_POWER_AT_4000_W * u ** power_exp, 1.0))
    return FunctionProfile("sha256-bench", 1.0, 125, tuple(curve))


def motivation_idle_power() -> dict[int, float]:
    _, idle_exp, _ = _motivation_exponents()
    return {f: MOTIVATION_IDLE_AT_4000_W * (f / 4000) ** idle_exp for f in MOTIVATION_FREQ_SET}


def motivation_config(freq_mhz: int, replicas: int = 4) -> SimConfig:
    """Four parallel requests, one per pinned replica, on a single four-core host."""
    return SimConfig(
        profiles=[motivation_profile()],
        workloads=[WorkloadSpec(workload_id="sha256-bench", function_id="sha256-bench",
                                kind="batch", bs=replicas, deadline_s=60.0, burst=True,
                                replicas=replicas, freq_mhz=freq_mhz)],
        freq_set=MOTIVATION_FREQ_SET,
        node_count=1,
        cores_per_node=4,
        idle_power_w=motivation_idle_power(),
        node_max_power_w=65.0,
        duration_s=600.0,
        stop_when_idle=True,
        service="deterministic",
        rotation_period_s=0.0,
        seed=BUNDLED_SEED,
    )


def example_jobs() -> dict[str, dict]:
    return {
        "pdf-stream.json": {"job_id": "pdf-generation", "function_id": "pdf-generation",
                            "kind": "stream", "min_throughput_rps": 138.0},
        "sha256-batch.json": {"job_id": "sha256-batch", "function_id": "sha256-1",
                              "kind": "batch", "bs": 1000, "d": 250.0},
        "unknown-function.json": {"job_id": "sha256-3", "function_id": "sha256-3",
                                  "kind": "stream", "min_throughput_rps": 1.0},
    }


def export(out_dir: str | Path) -> list[Path]:
    """Write the bundled profile store, scenario config and example jobs as JSON."""
    out = Path(out_dir)
    (out / "jobs").mkdir(parents=True, exist_ok=True)
    cfg = bundled_config()
    profiles_path = out / "profiles.json"
    known = {w.function_id for w in cfg.workloads if w.profiled}
    dump_store([p for p in cfg.profiles if p.function_id in known], profiles_path)
    truth_path = out / "profiles-ground-truth.json"
    dump_store(cfg.profiles, truth_path)
    scenario = cfg.to_dict()
    scenario.pop("profiles")
    scenario["profile_store"] = truth_path.name
    scenario_path = out / "scenario.json"
    scenario_path.write_text(json.dumps(scenario, indent=2, sort_keys=True) + "\n")
    written = [profiles_path, truth_path, scenario_path]
    for name, job in example_jobs().items():
        path = out / "jobs" / name
        path.write_text(json.dumps(job, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
