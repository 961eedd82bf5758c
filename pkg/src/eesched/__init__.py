"""Energy-aware scheduling of serverless function replicas, with a cluster simulator."""
from .profiles import FrequencyPoint, FunctionProfile, ObservedSample
from .scaling import JobRequest, NeedsProfileRun, ScalingDecision, plan_job, select_config
from .scheduler import Cluster, PlacementPlan, Strategy, schedule_baseline, schedule_ees
from .simengine import SimConfig, WorkloadSpec, compare, run

__all__ = [
    "Cluster", "FrequencyPoint", "FunctionProfile", "JobRequest", "NeedsProfileRun",
    "ObservedSample", "PlacementPlan", "ScalingDecision", "SimConfig", "Strategy",
    "WorkloadSpec", "compare", "plan_job", "run", "schedule_baseline", "schedule_ees",
    "select_config",
]
