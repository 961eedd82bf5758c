"""Command-line entry point.

Exit codes: 0 success, 1 validation or SLO failure, 2 input error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import scenarios
from .profiles import (
    DEFAULT_FREQ_SET,
    ObservedSample,
    ProfileError,
    load_store,
    validate_profile,
)
from .scaling import JobRequest, NeedsProfileRun, plan_job
from .scheduler import Strategy
from .simengine import ConfigError, SimConfig, compare, run, write_csvs, write_report

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
ALL_STRATEGIES = "EES,BP,BPS,BP_CPU"


class InputError(Exception):
    pass


def _read_json(path: str):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None


def _parse_freq_set(text: Optional[str]) -> tuple[int, ...]:
    if not text:
        return DEFAULT_FREQ_SET
    try:
        return tuple(sorted(int(x) for x in text.split(",")))
    except ValueError:
        raise InputError(f"bad --freq-set {text!r}; expected comma-separated MHz") from None


def _load_profiles(path: str):
    if not Path(path).exists():
        raise InputError(f"file not found: {path}")
    try:
        return load_store(path)
    except (ProfileError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None


def cmd_validate(args) -> int:
    freq_set = _parse_freq_set(args.freq_set)
    store = _load_profiles(args.profiles)
    failed = False
    for p in store:
        problems = validate_profile(p, freq_set)
        if problems:
            failed = True
            for msg in problems:
                print(f"{p.function_id}: {msg}")
        else:
            print(f"{p.function_id}: ok")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_plan(args) -> int:
    freq_set = _parse_freq_set(args.freq_set)
    store = _load_profiles(args.profiles)
    try:
        job = JobRequest.from_dict(_read_json(args.job))
    except (KeyError, TypeError, ValueError, ProfileError) as exc:
        raise InputError(f"bad job spec {args.job}: {exc}") from None
    sample = None
    if args.sample:
        raw = _read_json(args.sample)
        try:
            sample = ObservedSample(function_id=raw.get("function_id", job.function_id),
                                    freq_mhz=int(raw["freq_mhz"]),
                                    measured_throughput_rps=float(raw["measured_throughput_rps"]),
                                    measured_cpu_utilization=float(raw["measured_cpu_utilization"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad sample {args.sample}: {exc}") from None
    result = plan_job(job, store, sample, freq_set=freq_set, rho_max=args.rho_max, seed=args.seed)
    if isinstance(result, NeedsProfileRun):
        out = {"job_id": job.job_id, "action": "profile-run",
               "freq_mhz": result.freq_mhz, "ghz": result.freq_mhz / 1000,
               "replicas": result.replicas}
    else:
        out = {"job_id": job.job_id, "action": "deploy",
               "freq_mhz": result.freq_mhz, "ghz": result.freq_mhz / 1000,
               "replicas": result.replicas, "lambda_rps": result.lambda_rps,
               "predicted_rho": result.predicted_rho,
               "predicted_power_w": result.predicted_power_w}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _apply_overrides(data: dict, pairs: Sequence[str]) -> dict:
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise InputError(f"bad --set {pair!r}; expected KEY=VALUE")
        try:
            data[key] = json.loads(value)
        except json.JSONDecodeError:
            data[key] = value
    return data


def _load_config(args) -> SimConfig:
    if args.config in ("bundled", None):
        data = scenarios.bundled_config().to_dict()
        base = None
    else:
        data = _read_json(args.config)
        base = Path(args.config).parent
    data = _apply_overrides(data, args.set)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        cfg = SimConfig.from_dict(data, base_dir=base)
        cfg.validate()
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {exc.filename}") from None
    except (ConfigError, ProfileError, TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    return cfg


def _formats(text: str) -> set[str]:
    fmts = {f.strip().lower() for f in text.split(",") if f.strip()}
    unknown = fmts - {"json", "csv"}
    if unknown:
        raise InputError(f"unknown format(s): {', '.join(sorted(unknown))}")
    return fmts


def _strategies(text: str) -> list[Strategy]:
    try:
        return [Strategy.parse(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _print_table(rows: list[dict]) -> None:
    print(f"{'strategy':<8} {'energy_J':>12} {'vs_BP_%':>8} {'slo_viol':>9} {'idle_nodes':>10}")
    for r in rows:
        savings = "-" if r["savings_vs_bp_pct"] is None else f"{r['savings_vs_bp_pct']:.2f}"
        print(f"{r['strategy']:<8} {r['total_energy_j']:>12.1f} {savings:>8} "
              f"{r['slo_violations']:>9} {r['idle_nodes']:>10}")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    strategies = _strategies(args.strategy or "EES")
    if len(strategies) != 1:
        raise InputError("simulate runs one strategy; use compare for several")
    fmts = _formats(args.format)
    report = run(cfg, strategies[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = strategies[0].value
    if "json" in fmts:
        write_report(report, out / f"{name}.json")
    if "csv" in fmts:
        write_csvs(report, out, prefix=f"{name}_")
    _print_table([{"strategy": name, "total_energy_j": report["total_energy_j"],
                   "savings_vs_bp_pct": None, "slo_violations": report["slo_violations_total"],
                   "idle_nodes": len(report["idle_nodes"])}])
    if args.fail_on_slo and report["slo_violations_total"]:
        return EXIT_FAIL
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    strategies = _strategies(args.strategy or ALL_STRATEGIES)
    if len(strategies) < 2:
        raise InputError("compare needs at least two strategies")
    fmts = _formats(args.format)
    result = compare(cfg, strategies)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "json" in fmts:
        write_report({"seed": result["seed"], "summary": result["summary"]},
                     out / "comparison.json")
        for name, rep in result["reports"].items():
            write_report(rep, out / f"{name}.json")
    if "csv" in fmts:
        with open(out / "comparison.csv", "w") as f:
            f.write("strategy,total_energy_j,savings_vs_bp_pct,slo_violations,idle_nodes\n")
            for r in result["summary"]:
                savings = "" if r["savings_vs_bp_pct"] is None else repr(r["savings_vs_bp_pct"])
                f.write(f"{r['strategy']},{r['total_energy_j']!r},{savings},"
                        f"{r['slo_violations']},{r['idle_nodes']}\n")
        for name, rep in result["reports"].items():
            write_csvs(rep, out, prefix=f"{name}_")
    _print_table(result["summary"])
    if args.fail_on_slo:
        ees = next((r for r in result["summary"] if r["strategy"] == "EES"), None)
        if ees is not None and ees["slo_violations"]:
            return EXIT_FAIL
    return EXIT_OK


def cmd_scenario(args) -> int:
    for path in scenarios.export(args.out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eesched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a profile store")
    p.add_argument("profiles")
    p.add_argument("--freq-set", help="comma-separated MHz (default 2000..3600 step 200)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="size one job: frequency and replica count")
    p.add_argument("job", help="job spec JSON")
    p.add_argument("--profiles", required=True, help="profile store JSON")
    p.add_argument("--sample", help="observed profile-run sample JSON")
    p.add_argument("--freq-set")
    p.add_argument("--rho-max", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=scenarios.BUNDLED_SEED)
    p.set_defaults(func=cmd_plan)

    for name, func, help_text in (("simulate", cmd_simulate, "run one strategy"),
                                  ("compare", cmd_compare, "run several strategies")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default="bundled",
                       help="SimConfig JSON, or 'bundled' for the built-in scenario")
        p.add_argument("--strategy", help="EES, BP, BPS, BP_CPU (comma-separated for compare)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--format", default="json,csv")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config field (value parsed as JSON)")
        p.add_argument("--fail-on-slo", action="store_true",
                       help="exit 1 if the (EES) run has SLO violations")
        p.set_defaults(func=func)

    p = sub.add_parser("scenario", help="write the bundled profiles, scenario and jobs")
    p.add_argument("--out", default="scenario")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
