import csv
import json

import pytest

from conftest import make_profile
from eesched.profiles import DEFAULT_FREQ_SET
from eesched.scenarios import bundled_config, idle_power
from eesched.simengine import (
    ConfigError,
    SimConfig,
    Simulation,
    WorkloadSpec,
    compare,
    energy_integral,
    node_power,
    run,
    write_csvs,
)

IDLE = idle_power()


def scaled_profile(fid, exec_at_max, power_at_max=10.0, util=0.9, cores=1.0):
    hi = max(DEFAULT_FREQ_SET)
    pts = [(f, exec_at_max * hi / f, power_at_max * (0.5 + 0.5 * (f / hi) ** 3), util)
           for f in DEFAULT_FREQ_SET]
    return make_profile(fid, pts, cores)


def flat_profile(fid, exec_s, power=10.0):
    return make_profile(fid, [(f, exec_s, power, 0.9) for f in DEFAULT_FREQ_SET])


def single(workload, profiles, **kw):
    base = dict(profiles=profiles, workloads=[workload], idle_power_w=IDLE, node_count=1,
                cores_per_node=4, duration_s=10**6, stop_when_idle=True, rotation_period_s=0)
    base.update(kw)
    return SimConfig(**base)


def test_node_power_examples():
    p15 = make_profile("a", [(2800, 0.1, 15.0, 1.0)])
    p10 = make_profile("b", [(2800, 0.1, 10.0, 1.0)])
    idle = {2800: 8.0}
    assert node_power(2800, [], idle) == 8.0
    assert node_power(2800, [(p15, 1.0)], idle) == 23.0
    assert node_power(2800, [(p10, 0.5), (p10, 0.5)], idle) == 18.0
    with pytest.raises(KeyError):
        node_power(3000, [(p15, 1.0)], {3000: 8.0})


def test_zero_workloads_integrate_idle_power():
    cfg = SimConfig(profiles=[], workloads=[], idle_power_w=IDLE, node_count=3, duration_s=100)
    rep = run(cfg, "EES")
    assert rep["horizon_s"] == 100
    assert rep["total_energy_j"] == pytest.approx(3 * IDLE[2000] * 100, rel=1e-12)
    assert rep["idle_nodes"] == ["n1", "n2", "n3"]


def test_single_server_occupancy_law():
    wl = WorkloadSpec("w", "f", rate_rps=4.0, requests=100_000, replicas=1, freq_mhz=2000)
    rep = run(single(wl, [flat_profile("f", 0.1)]), "EES")
    w = rep["workloads"]["w"]
    assert w["completed"] == 100_000
    assert w["busy_fraction"] == pytest.approx(0.4, abs=0.02)


def test_same_seed_same_report():
    cfg = bundled_config()
    a = json.dumps(run(cfg, "EES"), sort_keys=True)
    b = json.dumps(run(cfg, "EES"), sort_keys=True)
    assert a == b
    c = json.dumps(run(cfg, "EES", seed=43), sort_keys=True)
    assert a != c


@pytest.mark.parametrize("strategy", ["EES", "BP", "BPS", "BP_CPU"])
def test_conservation_and_energy_consistency_mid_run(strategy):
    cfg = bundled_config()
    cfg.duration_s = 150.0
    cfg.stop_when_idle = False
    rep = run(cfg, strategy)
    assert rep["horizon_s"] == 150.0
    in_flight = 0
    for w in rep["workloads"].values():
        assert w["generated"] == w["completed"] + w["in_flight"] + w["rejected"]
        in_flight += w["in_flight"]
    assert in_flight > 0  # the cut really lands mid-run
    assert energy_integral(rep) == pytest.approx(rep["total_energy_j"], rel=1e-3)
    assert sum(rep["node_energy_j"].values()) == pytest.approx(rep["total_energy_j"], rel=1e-9)


def test_bps_nodes_never_leave_min_frequency():
    rep = run(bundled_config(), "BPS")
    for trace in rep["node_frequency_trace"].values():
        assert {f for _, f in trace} == {2000}
    assert any("ideal min-frequency" in n for n in rep["notes"])


def test_bp_nodes_run_at_max_frequency():
    rep = run(bundled_config(), "BP")
    for trace in rep["node_frequency_trace"].values():
        assert {f for _, f in trace} == {3600}


def test_raising_frequency_never_lengthens_service():
    profile = scaled_profile("f", 0.2)

    def records(freq):
        wl = WorkloadSpec("w", "f", rate_rps=2.0, requests=2000, replicas=1, freq_mhz=freq)
        rep = run(single(wl, [profile], record_requests=True), "EES")
        return {r[0]: r for r in rep["workloads"]["w"]["requests"]}

    slow, fast = records(2000), records(3600)
    assert slow.keys() == fast.keys()
    ratio = profile.point(3600).avg_exec_time_s / profile.point(2000).avg_exec_time_s
    for i, s in slow.items():
        f = fast[i]
        assert f[4] == s[4]  # same work drawn
        assert f[3] <= s[3]
        assert f[3] == pytest.approx(s[3] * ratio, rel=1e-9)


def test_mid_service_frequency_change_rescales_remaining_work():
    # A runs 1 s of work at 2.0 GHz; B arrives at 0.5 s wanting 3.0 GHz on the same node.
    exec_a = {f: 2000 / f for f in DEFAULT_FREQ_SET}
    prof = make_profile("f", [(f, e, 10.0, 0.9) for f, e in exec_a.items()])
    a = WorkloadSpec("A", "f", kind="batch", bs=1, deadline_s=100, burst=True,
                     replicas=1, freq_mhz=2000, submit_at_s=0.0)
    b = WorkloadSpec("B", "f", kind="batch", bs=1, deadline_s=100, burst=True,
                     replicas=1, freq_mhz=3000, submit_at_s=0.5)
    cfg = SimConfig(profiles=[prof], workloads=[a, b], idle_power_w=IDLE, node_count=1,
                    cores_per_node=2, duration_s=100, stop_when_idle=True,
                    service="deterministic", rotation_period_s=0)
    rep = run(cfg, "EES")
    # half the work is left at 0.5 s and runs at 1.5x speed: 0.5 + 0.5/1.5
    assert rep["workloads"]["A"]["completed_at_s"] == pytest.approx(0.5 + 0.5 * 2000 / 3000)
    assert rep["workloads"]["B"]["completed_at_s"] == pytest.approx(0.5 + 2000 / 3000)
    trace = rep["node_frequency_trace"]["n1"]
    assert [f for _, f in trace] == [2000, 3000, 2000]
    assert trace[1][0] == 0.5


def test_profile_run_then_deployment():
    cfg = bundled_config()
    rep = run(cfg, "EES")
    for wid in ("sha256-3", "linpack-2"):
        w = rep["workloads"][wid]
        assert w["profile_run"]["matched_function"]
        assert w["profile_run"]["freq_mhz"] in DEFAULT_FREQ_SET
        assert w["decision"]["predicted_rho"] < 0.8
        assert w["completed"] == w["generated"]
    assert rep["workloads"]["car-detection"]["profile_run"] is None


def test_unschedulable_workload_is_rejected_and_counted():
    wl = WorkloadSpec("w", "f", kind="batch", bs=20, deadline_s=10, burst=True,
                      replicas=10, freq_mhz=2000)
    rep = run(single(wl, [flat_profile("f", 0.1)]), "EES")
    w = rep["workloads"]["w"]
    assert w["unscheduled_reason"]
    assert w["rejected"] == w["generated"] == 20
    assert w["slo_violations"] == 20
    assert rep["idle_nodes"] == ["n1"]


def test_baseline_autoscaler_adds_replicas_under_load():
    wl = WorkloadSpec("w", "f", rate_rps=40.0, requests=4000)
    rep = run(single(wl, [scaled_profile("f", 0.05)]), "BP")
    counts = [c for _, c in rep["workloads"]["w"]["replica_trace"]]
    assert counts[0] == 1 and max(counts) > 1


def test_compare_reports_savings_relative_to_bp():
    cfg = bundled_config()
    cfg.workloads = cfg.workloads[:2]
    result = compare(cfg, ["BP", "EES"])
    rows = {r["strategy"]: r for r in result["summary"]}
    assert rows["BP"]["savings_vs_bp_pct"] == 0.0
    ees = rows["EES"]
    assert ees["savings_vs_bp_pct"] == pytest.approx(
        100 * (1 - ees["total_energy_j"] / rows["BP"]["total_energy_j"]))
    with pytest.raises(ValueError):
        compare(cfg, ["EES"])


def test_write_csvs(tmp_path):
    cfg = bundled_config()
    cfg.workloads = cfg.workloads[:1]
    rep = run(cfg, "EES")
    paths = write_csvs(rep, tmp_path, prefix="EES_")
    assert sorted(p.name for p in paths) == ["EES_frequency.csv", "EES_power.csv",
                                             "EES_replicas.csv"]
    with open(tmp_path / "EES_replicas.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t_s", "workload_id", "value"]
    assert rows[1][1] == "car-detection"


def test_config_round_trip(tmp_path):
    cfg = bundled_config()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert SimConfig.load(path) == cfg


def test_config_errors():
    cfg = bundled_config()
    cfg.workloads.append(WorkloadSpec("ghost", "no-such-function", rate_rps=1, requests=1))
    with pytest.raises(ConfigError, match="no-such-function"):
        Simulation(cfg, "EES")
    with pytest.raises(ConfigError, match="unknown config field"):
        SimConfig.from_dict({"profiles": [], "workloads": [], "bogus": 1})
    bad = bundled_config()
    bad.freq_set = (3600, 2000)
    with pytest.raises(ConfigError):
        bad.validate()
    neg = bundled_config()
    neg.workloads[0].rate_rps = -1
    with pytest.raises(ConfigError, match="rate_rps"):
        neg.validate()
