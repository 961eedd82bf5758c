"""Per-function performance/energy curves over a discrete frequency set.

A profile stores, for every supported CPU frequency, how long one request
takes, how many requests per second one replica sustains and how much power
a busy replica draws. Profiles for unseen functions are predicted from a
single observed sample by borrowing the curve of the stored function with
the closest CPU utilization and displacing its throughput by the ratio of
measured to known throughput.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_FREQ_SET = tuple(range(2000, 3601, 200))

# throughput and exec time are redundant; they must agree within this margin
CONSISTENCY_TOLERANCE = 0.01
# absorbs float rounding from throughput rescaling on flat curve segments
MONOTONE_SLACK = 1e-9


class ProfileError(Exception):
    pass


class UnknownFrequencyError(ProfileError, KeyError):
    def __init__(self, function_id: str, freq_mhz: int):
        super().__init__(f"{function_id}: no curve point at {freq_mhz} MHz")
        self.function_id = function_id
        self.freq_mhz = freq_mhz

    def __str__(self):
        return self.args[0]


class EmptyStoreError(ProfileError):
    pass


@dataclass(frozen=True)
class FrequencyPoint:
    freq_mhz: int
    avg_exec_time_s: float
    throughput_rps: float
    per_replica_power_w: float
    cpu_utilization: float

    @classmethod
    def from_exec_time(cls, freq_mhz: int, avg_exec_time_s: float,
                       per_replica_power_w: float, cpu_utilization: float) -> FrequencyPoint:
        return cls(freq_mhz, avg_exec_time_s, 1.0 / avg_exec_time_s,
                   per_replica_power_w, cpu_utilization)


@dataclass(frozen=True)
class FunctionProfile:
    function_id: str
    cpu_cores: float
    memory_mb: int
    curve: tuple[FrequencyPoint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "curve", tuple(self.curve))

    @property
    def frequencies(self) -> list[int]:
        return [p.freq_mhz for p in self.curve]

    def point(self, freq_mhz: int) -> FrequencyPoint:
        return lookup(self, freq_mhz)

    def to_dict(self) -> dict:
        return {
            "function_id": self.function_id,
            "cpu_cores": self.cpu_cores,
            "memory_mb": self.memory_mb,
            "curve": [asdict(p) for p in self.curve],
        }

    @classmethod
    def from_dict(cls, data: dict) -> FunctionProfile:
        try:
            curve = tuple(
                FrequencyPoint(
                    freq_mhz=int(p["freq_mhz"]),
                    avg_exec_time_s=float(p["avg_exec_time_s"]),
                    throughput_rps=float(p["throughput_rps"]),
                    per_replica_power_w=float(p["per_replica_power_w"]),
                    cpu_utilization=float(p["cpu_utilization"]),
                )
                for p in data["curve"]
            )
            return cls(
                function_id=str(data["function_id"]),
                cpu_cores=float(data["cpu_cores"]),
                memory_mb=int(data["memory_mb"]),
                curve=curve,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProfileError(f"malformed profile entry: {exc!r}") from exc


@dataclass(frozen=True)
class ObservedSample:
    function_id: str
    freq_mhz: int
    measured_throughput_rps: float
    measured_cpu_utilization: float


def validate_profile(p: FunctionProfile, freq_set: Iterable[int] = DEFAULT_FREQ_SET) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    allowed = set(freq_set)
    errors = []
    if not p.function_id:
        errors.append("empty function_id")
    if not p.cpu_cores > 0:
        errors.append(f"cpu_cores must be positive, got {p.cpu_cores}")
    if not p.curve:
        errors.append("empty curve")
    for pt in p.curve:
        where = f"at {pt.freq_mhz} MHz"
        if pt.freq_mhz <= 0:
            errors.append(f"non-positive frequency {where}")
        if pt.freq_mhz not in allowed:
            errors.append(f"frequency not in P {where}")
        if not pt.avg_exec_time_s > 0:
            errors.append(f"non-positive exec time {where}")
        if not pt.throughput_rps > 0:
            errors.append(f"non-positive throughput {where}")
        if not pt.per_replica_power_w > 0:
            errors.append(f"non-positive power {where}")
        if not 0 < pt.cpu_utilization <= 1:
            errors.append(f"cpu utilization outside (0, 1] {where}")
        if pt.avg_exec_time_s > 0 and pt.throughput_rps > 0:
            expected = 1.0 / pt.avg_exec_time_s
            if abs(pt.throughput_rps - expected) > CONSISTENCY_TOLERANCE * expected:
                errors.append(f"throughput inconsistent with exec time {where}")
    for prev, cur in zip(p.curve, p.curve[1:]):
        if cur.freq_mhz <= prev.freq_mhz:
            errors.append(f"frequencies not strictly increasing at {cur.freq_mhz} MHz")
        elif cur.avg_exec_time_s > prev.avg_exec_time_s * (1 + MONOTONE_SLACK):
            errors.append(
                f"non-monotonic exec time between {prev.freq_mhz} and {cur.freq_mhz} MHz")
    return errors


def lookup(p: FunctionProfile, freq_mhz: int) -> FrequencyPoint:
    for pt in p.curve:
        if pt.freq_mhz == freq_mhz:
            return pt
    raise UnknownFrequencyError(p.function_id, freq_mhz)


def match_closest(store: Sequence[FunctionProfile], sample: ObservedSample) -> FunctionProfile:
    """Stored profile whose utilization at the sampled frequency is nearest the sample's."""
    if not store:
        raise EmptyStoreError("cannot match a sample against an empty profile store")
    return min(
        store,
        key=lambda p: (abs(lookup(p, sample.freq_mhz).cpu_utilization
                           - sample.measured_cpu_utilization), p.function_id),
    )


def predict_profile(known: FunctionProfile, sample: ObservedSample,
                    cpu_cores: float | None = None, memory_mb: int | None = None) -> FunctionProfile:
    """Displace the known throughput curve by measured/known at the sampled frequency.

    Power and utilization are copied from ``known``. ``cpu_cores`` and
    ``memory_mb`` default to the known function's allocation.
    """
    ref = lookup(known, sample.freq_mhz)
    ratio = sample.measured_throughput_rps / ref.throughput_rps
    curve = []
    for pt in known.curve:
        if pt.freq_mhz == sample.freq_mhz:
            tput = sample.measured_throughput_rps
        else:
            tput = pt.throughput_rps * ratio
        curve.append(replace(pt, throughput_rps=tput, avg_exec_time_s=1.0 / tput))
    return FunctionProfile(
        function_id=sample.function_id,
        cpu_cores=known.cpu_cores if cpu_cores is None else cpu_cores,
        memory_mb=known.memory_mb if memory_mb is None else memory_mb,
        curve=tuple(curve),
    )


def load_store(path: str | Path) -> list[FunctionProfile]:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise ProfileError("profile store must be a JSON array")
    return [FunctionProfile.from_dict(d) for d in data]


def dump_store(profiles: Iterable[FunctionProfile], path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump([p.to_dict() for p in profiles], f, indent=2, sort_keys=True)
        f.write("\n")
