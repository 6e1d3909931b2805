"""Command-line front end: validation, set construction, runs, reports.

Commands: validate | build-sets | run | monte-carlo | oracle-check | report.
Every flag can also be supplied through an environment variable with the
REFGOV_ prefix (e.g. REFGOV_SEED=7).  Exit codes: 0 ok, 2 configuration
error, 3 solver or infeasibility error, 4 acceptance failure (report
--check).  Artifacts embed the config hash and seed; on failure, partially
written outputs of the failed command are removed.
"""

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config_io import apply_overrides, config_hash, load_config
from .errors import (ConfigError, InfeasibleStart, RefgovError, SolverError,
                     TimingViolation)
from .ftc import validate_timing
from .models import validate_mode_graph
from .simkit import (monte_carlo, oracle_agreement_sweep, prepare_runtime,
                     run_scenario)

ENV_PREFIX = "REFGOV_"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


def _env_default(name, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"),
                          fallback)


def build_parser():
    p = argparse.ArgumentParser(
        prog="refgov",
        description="Constrained-control toolkit: interval reference "
                    "governor, fault detection, and reconfiguration.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=_env_default("config"),
                        required=_env_default("config") is None,
                        help="path to the JSON configuration")
        sp.add_argument("--out", default=_env_default("out", "out"),
                        help="output directory (default: ./out)")
        sp.add_argument("--seed", type=int,
                        default=_env_default("seed"))
        sp.add_argument("--runs", type=int,
                        default=_env_default("runs"))
        sp.add_argument("--omega", type=float,
                        default=_env_default("omega"))
        sp.add_argument("--beta", type=float,
                        default=_env_default("beta"))
        sp.add_argument("--jobs", type=int,
                        default=_env_default("jobs", os.cpu_count() or 1))
        sp.add_argument("--paper-literal-timing", action="store_true",
                        default=_env_default("paper_literal_timing")
                        is not None)

    sp = sub.add_parser("validate", help="mode-graph and config report")
    common(sp)

    sp = sub.add_parser("build-sets",
                        help="construct and cache the admissible sets")
    common(sp)

    sp = sub.add_parser("run", help="execute scenario runs, write traces")
    common(sp)
    sp.add_argument("--scenario", required=True)

    sp = sub.add_parser("monte-carlo", help="seeded replicated runs")
    common(sp)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--traces", action="store_true",
                    help="also write per-run trace CSVs")

    sp = sub.add_parser("oracle-check",
                        help="set-vs-simulation oracle agreement sweep")
    common(sp)
    sp.add_argument("--systems", type=int, default=20)
    sp.add_argument("--points", type=int, default=500)

    sp = sub.add_parser("report", help="markdown summary of computed results")
    common(sp)
    sp.add_argument("--check", action="store_true",
                    help="exit 4 unless all computed criteria pass")
    return p


def _load(args):
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, runs=args.runs,
                          omega=args.omega, beta=args.beta,
                          paper_literal_timing=args.paper_literal_timing)
    return cfg


def _scenario(cfg, name):
    if name not in cfg.scenarios:
        raise ConfigError(
            f"unknown scenario {name!r}; have {sorted(cfg.scenarios)}")
    return cfg.scenarios[name]


def _check_timing(cfg, scenario):
    if scenario.controller != "ftc":
        return None
    return validate_timing(cfg.ftc,
                           paper_literal=scenario.paper_literal_timing)


def cmd_validate(args):
    cfg = _load(args)
    report = validate_mode_graph(cfg.graph, cfg.spec_map)
    for line in report.lines():
        print(line)
    ext_ok = all(spec.validate_extensions()
                 for spec in cfg.spec_map.values())
    print(f"extension sets: {'pass' if ext_ok else 'FAIL'}")
    try:
        warn = validate_timing(cfg.ftc, paper_literal=True)
        timing_ok = warn is None
        print("timing: pass" if timing_ok
              else f"timing: WARNING ({warn}); ftc scenarios need "
                   "--paper-literal-timing")
    except TimingViolation:
        timing_ok = False
    print(f"config hash: {config_hash(cfg)[:12]}")
    if not (report.ok and ext_ok):
        return EXIT_CONFIG
    return EXIT_OK


def _needed_sets(cfg):
    needed = set()
    for sc in cfg.scenarios.values():
        if sc.controller == "aorg":
            needed.add((sc.initial_mode, sc.T, sc.z1_scale))
        elif sc.controller == "rg0":
            needed.add((sc.initial_mode, 0, sc.z1_scale))
        elif sc.controller == "ftc":
            for mode in cfg.graph.modes:
                needed.add((mode.mode_id, cfg.ftc.T_d - 1, sc.z1_scale))
    return sorted(needed)


def cmd_build_sets(args):
    from .admissible import build_admissible_set
    from .polytopes import Polytope

    cfg = _load(args)
    chash = config_hash(cfg)
    sets_dir = os.path.join(args.out, "sets")
    os.makedirs(sets_dir, exist_ok=True)
    meta = {"config_hash": chash, "sets": []}
    for mode_id, T, z1_scale in _needed_sets(cfg):
        spec = cfg.spec_map[mode_id]
        if z1_scale != 1.0:
            spec = replace(spec,
                           Z1=Polytope(spec.Z1.normals,
                                       z1_scale * spec.Z1.offsets),
                           Z1_plus=Polytope(spec.Z1_plus.normals,
                                            z1_scale * spec.Z1_plus.offsets))
        tag = f"mode{mode_id}_T{T}_s{z1_scale:g}_{chash[:12]}"
        path = os.path.join(sets_dir, f"oinf_{tag}.json")
        if os.path.exists(path):
            with open(path) as fh:
                entry = json.load(fh)["meta"]
            print(f"cached  {path} (k*={entry['k_star']})")
            meta["sets"].append(entry)
            continue
        aset = build_admissible_set(cfg.graph.mode(mode_id), spec, T,
                                    k_cap=cfg.k_cap)
        entry = {"mode_id": mode_id, "T": T, "z1_scale": z1_scale,
                 "k_star": aset.k_star, "rows": aset.set.n_rows,
                 "eps": aset.eps, "config_hash": chash}
        payload = {"meta": entry, "set": aset.to_dict()}
        _write_json(path, payload)
        print(f"built   {path} (k*={aset.k_star}, rows={aset.set.n_rows})")
        meta["sets"].append(entry)
    ftc_scenarios = [sc for sc in cfg.scenarios.values()
                     if sc.controller == "ftc"]
    if ftc_scenarios:
        recov = []
        targets = {s for m in cfg.graph.modes
                   for s in cfg.graph.successors.get(m.mode_id, ())}
        targets |= {m.mode_id for m in cfg.graph.modes}
        for target in sorted(targets):
            recov.append({"target_mode": target, "T_r": cfg.ftc.T_r,
                          "T_e": cfg.ftc.T_e, "config_hash": chash})
        meta["recoverable"] = recov
    _write_json(os.path.join(sets_dir, "build_meta.json"), meta)
    return EXIT_OK


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _run_many(cfg, scenario, args, write_traces, tag):
    warn = _check_timing(cfg, scenario)
    if warn:
        print(f"warning: {warn}", file=sys.stderr)
    runtime = prepare_runtime(scenario, cfg.graph, cfg.spec_map,
                              ftc_cfg=cfg.ftc, k_cap=cfg.k_cap)
    chash = config_hash(cfg)
    n_runs = scenario.runs
    jobs = max(int(args.jobs), 1)
    agg = monte_carlo(runtime, n_runs, jobs=jobs, keep_traces=write_traces)
    traces = agg.pop("traces", None)
    agg["config_hash"] = chash
    agg["base_seed"] = scenario.seed
    agg["scenario"] = scenario.name
    rep_dir = os.path.join(args.out, "reports")
    os.makedirs(rep_dir, exist_ok=True)
    _write_json(os.path.join(rep_dir, f"{scenario.name}_{tag}.json"), agg)
    if traces is not None:
        tr_dir = os.path.join(args.out, "traces", scenario.name)
        os.makedirs(tr_dir, exist_ok=True)
        for i, tr in enumerate(traces):
            path = os.path.join(tr_dir, f"run_{i:04d}.csv")
            with open(path, "w") as fh:
                fh.write(f"# config={chash[:12]} seed={scenario.seed + i}\n")
            with open(path, "a") as fh:
                fh.write(",".join(tr.columns) + "\n")
                for row in tr.rows:
                    fh.write(",".join(_cell(v) for v in row) + "\n")
    print(f"{scenario.name}: {n_runs} runs complete")
    return EXIT_OK


def _cell(v):
    from .simkit import _csv_cell
    return _csv_cell(v)


def cmd_run(args):
    cfg = _load(args)
    scenario = _scenario(cfg, args.scenario)
    return _run_many(cfg, scenario, args, write_traces=True, tag="run")


def cmd_monte_carlo(args):
    cfg = _load(args)
    scenario = _scenario(cfg, args.scenario)
    return _run_many(cfg, scenario, args, write_traces=args.traces,
                     tag="mc")


def cmd_oracle_check(args):
    cfg = _load(args)
    seed = 0 if args.seed is None else int(args.seed)
    report = oracle_agreement_sweep(n_systems=args.systems,
                                    n_points=args.points, seed=seed)
    report["config_hash"] = config_hash(cfg)
    report["seed"] = seed
    rep_dir = os.path.join(args.out, "reports")
    os.makedirs(rep_dir, exist_ok=True)
    _write_json(os.path.join(rep_dir, "oracle_check.json"), report)
    print(f"oracle agreement: {report['total_disagreements']} disagreements "
          f"on {report['total_points']} points "
          f"across {args.systems} systems")
    return EXIT_OK


def _fmt_rate(x):
    return "-" if x is None else f"{x:.4f}"


def cmd_report(args):
    cfg = _load(args)
    rep_dir = os.path.join(args.out, "reports")
    if not os.path.isdir(rep_dir):
        raise ConfigError(f"no reports directory under {args.out}")
    summaries = {}
    for fname in sorted(os.listdir(rep_dir)):
        if fname.endswith(".json"):
            with open(os.path.join(rep_dir, fname)) as fh:
                summaries[fname[:-5]] = json.load(fh)
    lines = ["# Toolkit report", "",
             f"config: `{config_hash(cfg)[:12]}`", ""]
    checks = []

    mc = {k: v for k, v in summaries.items() if "z2_violation_rate" in v}
    if mc:
        lines += ["## Scenario summaries", "",
                  "| scenario | runs | max chance-violation rate | "
                  "mean plan objective |",
                  "|---|---|---|---|"]
        for name, s in sorted(mc.items()):
            viol = max(s["z2_violation_rate"], default=0.0)
            lines.append(f"| {s.get('scenario', name)} | {s['runs']} | "
                         f"{viol:.4f} | "
                         f"{_fmt_rate(s.get('plan_objective_mean'))} |")
        lines.append("")
        sweep = next((s for s in mc.values()
                      if s.get("scenario") == "sweep"), None)
        if sweep:
            rate = max(sweep["z2_violation_rate"], default=0.0)
            checks.append(("chance-violation rate <= 0.035",
                           rate <= 0.035))
        nominal = next((s for s in mc.values()
                        if s.get("scenario") == "nominal"), None)
        if nominal:
            conv = nominal["convergence_steps"]
            ok = all(c is not None for c in conv)
            checks.append(("tracking converged in every run", ok))
        latencies = [s for s in mc.values()
                     if s.get("scenario") == "recovery"]
        if latencies:
            s = latencies[0]
            confirmed = [c for c in s["confirm_times"] if c is not None]
            if confirmed:
                arr = np.array(confirmed, dtype=float)
                lines += ["## Detection latency (recovery scenario)", "",
                          f"confirmed in {len(confirmed)}/{s['runs']} runs; "
                          f"p50={np.percentile(arr, 50):.0f} "
                          f"p90={np.percentile(arr, 90):.0f} "
                          f"p max={arr.max():.0f}", ""]

    oc = summaries.get("oracle_check")
    if oc:
        lines += ["## Oracle agreement", "",
                  f"{oc['total_disagreements']} disagreements on "
                  f"{oc['total_points']} points", ""]
        checks.append(("oracle agreement exact",
                       oc["total_disagreements"] == 0))

    if checks:
        lines += ["## Checks", ""]
        for name, ok in checks:
            lines.append(f"- {'PASS' if ok else 'FAIL'}: {name}")
        lines.append("")
    out_path = os.path.join(rep_dir, "report.md")
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines))
    print(f"wrote {out_path}")
    if args.check and not all(ok for _, ok in checks):
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "build-sets": cmd_build_sets,
    "run": cmd_run,
    "monte-carlo": cmd_monte_carlo,
    "oracle-check": cmd_oracle_check,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    created = []
    out_dir = getattr(args, "out", None)
    if out_dir is not None and not os.path.exists(out_dir):
        created.append(out_dir)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _fail(created, "config_error", exc)
        return EXIT_CONFIG
    except (TimingViolation, SolverError, InfeasibleStart) as exc:
        _fail(created, type(exc).__name__, exc)
        return EXIT_SOLVER
    except RefgovError as exc:
        _fail(created, type(exc).__name__, exc)
        return EXIT_SOLVER


def _fail(created, kind, exc):
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    for path in created:
        shutil.rmtree(path, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
