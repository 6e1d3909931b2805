"""Stochastic plant simulation, scenario scripting, and Monte Carlo runs.

Reproducibility contract: every run owns a counter-based generator keyed by
(base_seed + run_index).  Gaussian draws are produced by a fixed documented
transform -- uniforms from the stream mapped through the standard-normal
inverse CDF, then through the symmetric PSD square root of the requested
covariance -- so traces are reproducible from (config, seed) alone and
independent of worker scheduling.  Per step the draw order is: omega, xi,
zeta, varsigma (initial-state jitter, then y(0) noise, precede the loop).
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import governor
from .admissible import prediction_stack
from .errors import DimensionTooLarge, InfeasibleStart, SolverError
from .ftc import Orchestrator
from .stochastics import split_prediction, tightened_sequence


def psd_sqrt(M):
    """Symmetric PSD square root via eigendecomposition (fixed convention)."""
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(M)
    return V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gaussian_draw(rng, factor):
    """factor @ ndtri(u) with u uniform; the documented sampling transform."""
    k = factor.shape[0]
    if k == 0:
        return np.zeros(0)
    return factor @ ndtri(rng.random(k))


@dataclass(frozen=True)
class NoiseFactors:
    omega: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    varsigma: np.ndarray


def noise_factors(mode, spec):
    return NoiseFactors(omega=psd_sqrt(mode.H_omega),
                        xi=psd_sqrt(mode.H_xi),
                        zeta=psd_sqrt(spec.H_zeta),
                        varsigma=psd_sqrt(spec.H_varsigma))


def _plant_step(true_mode, gains_mode, spec, factors, x, v, rng):
    """One noisy step; gains may belong to a different (believed) mode."""
    A = true_mode.A_o + true_mode.B_o @ gains_mode.K
    B = true_mode.B_o @ gains_mode.G
    omega = gaussian_draw(rng, factors.omega)
    xi = gaussian_draw(rng, factors.xi)
    zeta = gaussian_draw(rng, factors.zeta)
    varsigma = gaussian_draw(rng, factors.varsigma)
    x = np.asarray(x, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    x_next = A @ x + B @ v + omega
    y_next = gains_mode.C @ x_next + xi
    z1 = spec.L_x @ x + spec.L_v @ v + zeta
    z2 = spec.F_x @ x + spec.F_v @ v + varsigma
    return x_next, y_next, z1, z2


def simulate_step(true_mode, spec, x, v, rng, factors=None):
    """Matched-gains closed-loop step (the plant runs its own mode's loop)."""
    if factors is None:
        factors = noise_factors(true_mode, spec)
    return _plant_step(true_mode, true_mode, spec, factors, x, v, rng)


@dataclass(frozen=True)
class ScenarioConfig:
    """One scripted experiment; horizons/weights default from the config."""
    name: str
    controller: str                  # "aorg" | "rg0" | "ftc"
    horizon: int
    x0: np.ndarray
    v_init: np.ndarray
    r_schedule: tuple                # ((t, r-vector), ...) piecewise constant
    fault_schedule: tuple            # ((t, mode_id), ...)
    seed: int
    runs: int
    T: int = 5
    x0_jitter: object = 0.0       # scalar or per-state std vector
    initial_mode: int = 1
    paper_literal_timing: bool = False
    convergence_tol: float = 1e-3
    z1_scale: float = 1.0         # expectation-set widening factor
    omega: float | None = None

    def r_at(self, t):
        r = None
        for start, vec in self.r_schedule:
            if t >= start:
                r = vec
        return np.asarray(r, dtype=float)

    def true_mode_at(self, t):
        mode = self.initial_mode
        for start, mid in self.fault_schedule:
            if t >= start:
                mode = mid
        return mode


@dataclass
class Trace:
    """Per-step records plus a per-run summary recomputable from them."""
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class _AorgTracker:
    """Pure-tracking interval governor with the one-step hold mechanism."""

    def __init__(self, oinf, T):
        self.oinf = oinf
        self.T = T
        self.plan = None
        self.cursor = 0
        self.phase = "transient"

    def step(self, t, x_t, y_t, v_prev, r_now):
        events = []
        if self.plan is None or self.cursor >= len(self.plan):
            start = np.concatenate([x_t, v_prev])
            if not self.oinf.set.feasible_partial_fix(start):
                events.append("hold")
                self.phase = "holding"
                return v_prev, events, {"objective": None}
            preview = np.tile(r_now, (self.T + 1, 1))
            try:
                plan = governor.plan_interval(self.oinf, x_t, v_prev, preview)
            except (InfeasibleStart, SolverError) as exc:
                events.append(f"hold:{type(exc).__name__}")
                self.phase = "holding"
                return v_prev, events, {"objective": None}
            self.plan = plan.v_seq
            self.cursor = 0
            self.phase = "transient"
            events.append("plan")
            info = {"objective": plan.objective, "kappas": plan.kappas}
        else:
            info = {"objective": None}
        v = self.plan[self.cursor]
        self.cursor += 1
        return v, events, info


class _StepRg:
    """Conventional governor baseline: horizon-0 replanning every step."""

    def __init__(self, oinf0):
        self.oinf = oinf0
        self.phase = "transient"

    def step(self, t, x_t, y_t, v_prev, r_now):
        events = []
        start = np.concatenate([x_t, v_prev])
        if not self.oinf.set.feasible_partial_fix(start):
            events.append("hold")
            return v_prev, events, {"objective": None}
        try:
            plan = governor.plan_interval(self.oinf, x_t, v_prev,
                                          r_now[None, :])
        except (InfeasibleStart, SolverError) as exc:
            events.append(f"hold:{type(exc).__name__}")
            return v_prev, events, {"objective": None}
        events.append("plan")
        return plan.v_seq[0], events, {"objective": plan.objective}


@dataclass
class ScenarioRuntime:
    """Shared immutable artifacts for all runs of one scenario."""
    scenario: ScenarioConfig
    graph: object
    spec_map: dict
    oinf_map: dict
    oinf0_map: dict
    recovery_map: dict
    ftc_cfg: object
    planners: dict = None

    def make_controller(self, rng):
        sc = self.scenario
        if sc.controller == "aorg":
            return _AorgTracker(self.oinf_map[sc.initial_mode], sc.T)
        if sc.controller == "rg0":
            return _StepRg(self.oinf0_map[sc.initial_mode])
        if sc.controller == "ftc":
            orch = Orchestrator(self.ftc_cfg, self.graph, self.spec_map,
                                self.oinf_map, self.recovery_map,
                                sc.initial_mode, sc.v_init, rng,
                                paper_literal_timing=sc.paper_literal_timing,
                                planners=self.planners)
            return _FtcAdapter(orch, self.ftc_cfg.T_d)
        raise ValueError(f"unknown controller {sc.controller}")


class _FtcAdapter:
    def __init__(self, orch, T_d):
        self.orch = orch
        self.T_d = T_d

    @property
    def phase(self):
        return self.orch.state.phase

    def step(self, t, x_t, y_t, v_prev, r_now):
        preview = np.tile(r_now, (self.T_d, 1))
        v, events = self.orch.step(t, x_t, y_t, preview)
        obj = None
        if any(e.startswith("plan:transient") for e in events):
            obj = self.orch.state.last_plan_objective
        return v, events, {"objective": obj}


def prepare_runtime(scenario, graph, spec_map, ftc_cfg=None, set_cache=None,
                    k_cap=500):
    """Build the admissible sets and recovery problems one scenario needs.

    set_cache maps (mode_id, horizon_T) -> AdmissibleSet and is shared so
    repeated scenarios in one process reuse construction work.
    """
    from dataclasses import replace as dc_replace

    from .admissible import build_admissible_set
    from .polytopes import Polytope
    from .recovery import make_recovery_problem

    if set_cache is None:
        set_cache = {}

    if scenario.z1_scale != 1.0:
        def widen(spec):
            s = scenario.z1_scale
            return dc_replace(
                spec,
                Z1=Polytope(spec.Z1.normals, s * spec.Z1.offsets),
                Z1_plus=Polytope(spec.Z1_plus.normals,
                                 s * spec.Z1_plus.offsets))
        spec_map = {mid: widen(sp) for mid, sp in spec_map.items()}

    def get_set(mode_id, T):
        key = (mode_id, T, scenario.z1_scale)
        if key not in set_cache:
            set_cache[key] = build_admissible_set(
                graph.mode(mode_id), spec_map[mode_id], T, k_cap=k_cap)
        return set_cache[key]

    oinf_map, oinf0_map, recovery_map = {}, {}, {}
    cfg = ftc_cfg
    if scenario.controller == "aorg":
        oinf_map[scenario.initial_mode] = get_set(scenario.initial_mode,
                                                  scenario.T)
    elif scenario.controller == "rg0":
        oinf0_map[scenario.initial_mode] = get_set(scenario.initial_mode, 0)
    elif scenario.controller == "ftc":
        if cfg is None:
            raise ValueError("ftc scenarios need an FtcConfig")
        if scenario.omega is not None:
            cfg = dc_replace(cfg, omega=scenario.omega)
        T_plan = cfg.T_d - 1
        for mode in graph.modes:
            oinf_map[mode.mode_id] = get_set(mode.mode_id, T_plan)
        targets = {s for m in graph.modes
                   for s in graph.successors_of(m.mode_id)}
        targets |= {m.mode_id for m in graph.modes}
        for target in sorted(targets):
            recovery_map[target] = make_recovery_problem(
                graph.mode(target), spec_map[target], cfg.T_r,
                get_set(target, T_plan), R=cfg.R)
    else:
        raise ValueError(f"unknown controller {scenario.controller}")
    planners = None
    if scenario.controller == "ftc":
        from .ftc import build_planners
        planners = build_planners(cfg, graph, spec_map, oinf_map,
                                  recovery_map)
    return ScenarioRuntime(scenario=scenario, graph=graph, spec_map=spec_map,
                           oinf_map=oinf_map, oinf0_map=oinf0_map,
                           recovery_map=recovery_map, ftc_cfg=cfg,
                           planners=planners)


def trace_columns(runtime):
    sc = runtime.scenario
    mode = runtime.graph.mode(sc.initial_mode)
    spec = runtime.spec_map[sc.initial_mode]
    cols = ["t", "true_mode", "believed_mode", "phase"]
    cols += [f"x{i}" for i in range(mode.n)]
    cols += [f"v{i}" for i in range(mode.m)]
    cols += [f"y{i}" for i in range(mode.C.shape[0])]
    cols += [f"z1_{i}" for i in range(spec.n_e)]
    cols += [f"z2_{i}" for i in range(spec.n_c)]
    cols += [f"post_{m.mode_id}" for m in runtime.graph.modes]
    cols.append("events")
    return cols


def run_scenario(runtime, run_index):
    """Execute one seeded run of the scenario and return its Trace.

    Two independent counter-based streams are keyed off the run seed: one
    for the physical noise, one for solver multistarts, so planner settings
    never perturb the plant's noise realization.
    """
    sc = runtime.scenario
    run_seed = sc.seed + run_index
    rng = np.random.Generator(np.random.Philox(key=[run_seed, 0]))
    planner_rng = np.random.Generator(np.random.Philox(key=[run_seed, 1]))
    graph = runtime.graph
    controller = runtime.make_controller(planner_rng)

    x = np.asarray(sc.x0, dtype=float).copy()
    jitter = np.broadcast_to(np.asarray(sc.x0_jitter, dtype=float),
                             x.shape)
    if np.any(jitter > 0):
        x = x + jitter * ndtri(rng.random(x.size))
    factors_by_mode = {m.mode_id: noise_factors(m, runtime.spec_map[m.mode_id])
                       for m in graph.modes}
    init_mode = graph.mode(sc.initial_mode)
    y = init_mode.C @ x + gaussian_draw(rng, factors_by_mode[sc.initial_mode].xi)
    v_prev = np.asarray(sc.v_init, dtype=float).copy()

    trace = Trace(columns=trace_columns(runtime))
    believed_ids = []
    plans = []
    for t in range(sc.horizon):
        true_id = sc.true_mode_at(t)
        true_mode = graph.mode(true_id)
        r_now = sc.r_at(t)
        v, events, info = controller.step(t, x, y, v_prev, r_now)
        if info.get("objective") is not None:
            plans.append(info["objective"])
        believed = getattr(controller, "orch", None)
        believed_id = believed.believed_mode if believed else sc.initial_mode
        believed_ids.append(believed_id)
        gains_mode = graph.mode(believed_id)
        spec_applied = runtime.spec_map[believed_id]
        x_next, y_next, z1, z2 = _plant_step(
            true_mode, gains_mode, spec_applied,
            factors_by_mode[true_id], x, v, rng)
        posts = _posterior_row(controller, graph, believed_id)
        row = ([t, true_id, believed_id, getattr(controller, "phase", "-")]
               + list(x) + list(v) + list(y) + list(z1) + list(z2)
               + posts + [";".join(events) if events else "-"])
        trace.rows.append(row)
        x, y, v_prev = x_next, y_next, np.asarray(v, dtype=float)
    trace.summary = summarize(runtime, trace, plans, run_index)
    return trace


def _posterior_row(controller, graph, believed_id):
    orch = getattr(controller, "orch", None)
    if orch is None:
        return [1.0 if m.mode_id == believed_id else 0.0
                for m in graph.modes]
    post = orch.posteriors()
    return [post[m.mode_id] for m in graph.modes]


def summarize(runtime, trace, plans, run_index):
    """Per-run summary; everything here is recomputable from the rows."""
    sc = runtime.scenario
    cols = trace.columns
    idx = {c: i for i, c in enumerate(cols)}
    rows = trace.rows
    spec = runtime.spec_map[sc.initial_mode]
    m = np.asarray(sc.v_init).size

    r_final = sc.r_at(sc.horizon - 1) if sc.horizon else np.zeros(m)
    conv_step = None
    v_err = []
    for row in rows:
        v = np.array(row[idx["v0"]:idx["v0"] + m])
        err = float(np.linalg.norm(v - r_final))
        v_err.append(err)
        if conv_step is None and err < sc.convergence_tol:
            conv_step = row[idx["t"]]

    events_all = [(row[idx["t"]], row[idx["events"]]) for row in rows]
    def first_event(prefix):
        for t, ev in events_all:
            if any(e.startswith(prefix) for e in ev.split(";")):
                return t
        return None

    fault_t = sc.fault_schedule[0][0] if sc.fault_schedule else None
    confirm_t = first_event("confirm:")
    recov_start = first_event("recovery_start")
    recov_done = first_event("recovery_done")

    phases = [row[idx["phase"]] for row in rows]
    max_recovering = _longest_run(phases, "recovering")
    hold_steps = sum(1 for _, ev in events_all if "hold" in ev)

    detect_ts = [(t, e.split(":")[1]) for t, ev in events_all
                 for e in ev.split(";") if e.startswith("detect:")]

    return {
        "run_index": run_index,
        "convergence_step": conv_step,
        "final_error": v_err[-1] if v_err else None,
        "error_curve": v_err,
        "plan_objectives": plans,
        "fault_time": fault_t,
        "confirm_time": confirm_t,
        "recovery_start": recov_start,
        "recovery_done": recov_done,
        "max_recovering_steps": max_recovering,
        "hold_steps": hold_steps,
        "detections": detect_ts,
        "horizon": sc.horizon,
    }


def _longest_run(seq, value):
    best = cur = 0
    for s in seq:
        cur = cur + 1 if s == value else 0
        best = max(best, cur)
    return best


def _run_for_pool(args):
    runtime, i = args
    return run_scenario(runtime, i)


def monte_carlo(runtime, n_runs, jobs=1, keep_traces=False):
    """Run n_runs seeded replicates and aggregate deterministically.

    Aggregation is a reduction over run summaries collected in run-index
    order, so the result is independent of worker scheduling.
    """
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_run_for_pool,
                                   [(runtime, i) for i in range(n_runs)],
                                   chunksize=max(1, n_runs // (4 * jobs))))
    else:
        traces = [run_scenario(runtime, i) for i in range(n_runs)]
    agg = aggregate(runtime, traces)
    if keep_traces:
        agg["traces"] = traces
    return agg


def aggregate(runtime, traces):
    sc = runtime.scenario
    spec = runtime.spec_map[sc.initial_mode]
    idx = {c: i for i, c in enumerate(traces[0].columns)}
    n_e, n_c = spec.n_e, spec.n_c
    horizon = sc.horizon
    m = np.asarray(sc.v_init).size

    z1_sum = np.zeros((horizon, n_e))
    z2_viol = np.zeros(n_c)
    z2_viol_plus = np.zeros(n_c)
    z2_count = 0
    err_curve = np.zeros(horizon)
    for tr in traces:
        for k, row in enumerate(tr.rows):
            if n_e:
                z1_sum[k] += row[idx["z1_0"]:idx["z1_0"] + n_e]
            if n_c:
                z2 = np.array(row[idx["z2_0"]:idx["z2_0"] + n_c])
                z2_viol += z2 > spec.Z2.offsets
                z2_viol_plus += z2 > spec.Z2_plus.offsets
                z2_count += 1
        err_curve += np.array(tr.summary["error_curve"])
    n = len(traces)
    result = {
        "runs": n,
        "mean_error_curve": (err_curve / n).tolist(),
        "z1_step_means": (z1_sum / n).tolist(),
        "z2_violation_rate": (z2_viol / max(z2_count, 1)).tolist(),
        "z2_plus_violation_rate": (z2_viol_plus / max(z2_count, 1)).tolist(),
        "convergence_steps": [tr.summary["convergence_step"]
                              for tr in traces],
        "confirm_times": [tr.summary["confirm_time"] for tr in traces],
        "recovery_starts": [tr.summary["recovery_start"] for tr in traces],
        "recovery_dones": [tr.summary["recovery_done"] for tr in traces],
        "max_recovering_steps": max((tr.summary["max_recovering_steps"]
                                     for tr in traces), default=0),
        "hold_steps_total": sum(tr.summary["hold_steps"] for tr in traces),
        "plan_objective_mean": _mean_or_none(
            [o for tr in traces for o in tr.summary["plan_objectives"]]),
    }
    return result


def _mean_or_none(vals):
    return float(np.mean(vals)) if vals else None


def random_oracle_system(rng, max_tries=50):
    """Random stable 1-2 state system plus constraint spec for oracle sweeps.

    Draws are rejected until the admissible set builds (nonempty with a
    finitely determined recursion), which is almost always immediate.
    """
    from .admissible import build_admissible_set
    from .errors import EmptySet, EmptyTightenedSet, NotDeterminedWithinCap
    from .models import ConstraintSpec, build_closed_loop
    from .polytopes import Polytope

    for _ in range(max_tries):
        n = int(rng.integers(1, 3))
        T = int(rng.integers(0, 3))
        A = rng.normal(size=(n, n))
        rho = max(np.max(np.abs(np.linalg.eigvals(A))), 1e-6)
        A = A * (rng.uniform(0.3, 0.9) / rho)
        B = rng.normal(size=(n, 1))
        if np.linalg.norm(B) < 0.2:
            continue
        L_x = rng.normal(size=(1, n))
        L_v = 0.3 * rng.normal(size=(1, 1))
        z1_hi = rng.uniform(0.8, 2.0)
        z1_lo = rng.uniform(0.8, 2.0)
        with_chance = rng.random() < 0.6
        if with_chance:
            F_x = rng.normal(size=(1, n))
            F_v = np.zeros((1, 1))
            Z2 = Polytope.upper_bounds([rng.uniform(1.0, 2.5)])
            H_varsigma = np.array([[rng.uniform(0.0, 0.01)]])
        else:
            F_x = np.zeros((0, n))
            F_v = np.zeros((0, 1))
            Z2 = Polytope(np.zeros((0, 0)), np.zeros(0))
            H_varsigma = np.zeros((0, 0))
        spec = ConstraintSpec(
            L_x=L_x, L_v=L_v,
            Z1=Polytope.box([-z1_lo], [z1_hi]),
            F_x=F_x, F_v=F_v, Z2=Z2,
            H_zeta=np.zeros((1, 1)), H_varsigma=H_varsigma,
            beta=0.9,
            Z1_plus=Polytope.box([-2 * z1_lo], [2 * z1_hi]),
            Z2_plus=(Polytope.upper_bounds(2 * Z2.offsets) if with_chance
                     else Z2),
            T_e=25)
        mode = build_closed_loop(1, A, B, np.eye(1, n), np.zeros((1, n)),
                                 np.eye(1), 0.005 * np.eye(n),
                                 0.01 * np.eye(1))
        try:
            aset = build_admissible_set(mode, spec, T)
        except (EmptySet, EmptyTightenedSet, NotDeterminedWithinCap):
            continue
        # Reject razor-thin sets: boundary tolerance would dominate them.
        from scipy.optimize import linprog
        P = aset.set
        res = linprog(np.r_[np.zeros(P.dim), -1.0],
                      A_ub=np.hstack([P.normals,
                                      np.ones((P.n_rows, 1))]),
                      b_ub=P.offsets, bounds=(None, None), method="highs")
        if res.status != 0 or -res.fun < 1e-4:
            continue
        return mode, spec, T, aset
    raise RuntimeError("could not draw a buildable random system")


def oracle_agreement_sweep(n_systems=20, n_points=500, seed=0,
                           guard_band=1e-7, horizon_mult=10):
    """Compare set membership against the simulation oracle.

    Points are sampled uniformly in an inflated bounding box of the set;
    samples inside the guard band around any facet are redrawn, since set
    membership is not numerically decidable exactly on a boundary.
    """
    from .admissible import mode_tightening

    rng = np.random.Generator(np.random.Philox(seed))
    report = {"systems": [], "total_points": 0, "total_disagreements": 0}
    for sys_idx in range(n_systems):
        mode, spec, T, aset = random_oracle_system(rng)
        tight = mode_tightening(mode, spec)
        d = aset.dim
        lo = np.empty(d)
        hi = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            hi[i], _ = aset.set.support(e)
            lo_val, _ = aset.set.support(-e)
            lo[i] = -lo_val
        center = 0.5 * (lo + hi)
        half = 0.65 * (hi - lo) + 0.1
        disagreements = 0
        accepted = 0
        while accepted < n_points:
            pt = center + rng.uniform(-1.0, 1.0, size=d) * half
            resid = aset.set.normals @ pt - aset.set.offsets
            if np.any(np.abs(resid) < guard_band):
                continue
            accepted += 1
            in_set = aset.set.contains(pt)
            in_sim = brute_force_admissibility_oracle(
                mode, spec, pt, T, aset.k_star, horizon_mult=horizon_mult,
                eps=aset.eps, tight=tight)
            if in_set != in_sim:
                disagreements += 1
        report["systems"].append({
            "index": sys_idx, "n": mode.n, "T": T, "k_star": aset.k_star,
            "points": accepted, "disagreements": disagreements})
        report["total_points"] += accepted
        report["total_disagreements"] += disagreements
    return report


def brute_force_admissibility_oracle(mode, spec, point, T, k_star,
                                     horizon_mult=10, eps=None, tight=None,
                                     tol=1e-9):
    """Independent admissibility check by forward simulation.

    Simulates the noise-free loop step by step (no matrix powers, no LPs)
    for horizon_mult * max(k_star, 1) + T steps with the terminal reference
    held, checking the expectation set, the per-step tightened chance
    bounds, and strict steady-state admissibility of the terminal reference.
    Intended for small problems only.
    """
    from .admissible import default_eps, mode_tightening, steady_input_maps

    n, m = mode.n, mode.m
    if n > 3 or T > 3:
        raise DimensionTooLarge("oracle restricted to n <= 3, T <= 3")
    point = np.asarray(point, dtype=float).ravel()
    x = point[:n]
    v_seq = point[n:].reshape(T + 1, m)
    if tight is None:
        tight = mode_tightening(mode, spec)
    if eps is None:
        eps = default_eps(spec, tight)
    steps = horizon_mult * max(k_star, 1) + T
    _, z1, z2 = split_prediction(mode, spec, x, v_seq, steps)
    for k in range(steps + 1):
        if spec.n_e and not spec.Z1.contains(z1[k], tol=tol):
            return False
        if spec.n_c:
            margin = tight.margin_at(k)
            if np.any(z2[k] > spec.Z2.offsets - margin + tol):
                return False
    Y1, Y2 = steady_input_maps(mode, spec)
    v_T = v_seq[-1]
    if spec.n_e and not spec.Z1.shrink_by_ball(eps).contains(Y1 @ v_T,
                                                             tol=tol):
        return False
    if spec.n_c and not tight.intersection.shrink_by_ball(eps).contains(
            Y2 @ v_T, tol=tol):
        return False
    return True
