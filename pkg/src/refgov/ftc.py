"""Fault-tolerant orchestration: detection-aware planning, confirmation,
and reconfiguration triggering.

During fault monitoring the planning interval and the detection interval
coincide (both T_d steps).  At each interval start the planner maximizes a
trade-off between tracking progress and the computable misidentification
bound, subject to admissibility for the believed mode plus robustness rows
that keep every successor mode inside the extended constraint sets and
recoverable within T_r, should the plant already have switched.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, minimize

from . import governor
from .admissible import prediction_stack
from .errors import InfeasibleStart, SolverError, TimingViolation
from .governor import AorgPlan, sequence_to_kappa
from .mmae import DetectionBoundModel, bank_step, hypothesis_loop, make_bank
from .recovery import in_recoverable_set, plan_recovery
from .stochastics import tightened_sequence

ROW_TOL = 1e-7


@dataclass(frozen=True)
class FtcConfig:
    """Timing, trade-off, and confirmation parameters."""
    omega: float
    vartheta: float
    T_d: int
    T_r: int
    T_e: int
    R: np.ndarray
    confirm_intervals: int = 2
    multistart: int = 8
    opt_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.vartheta < 0:
            raise ValueError("vartheta must be nonnegative")
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))


def validate_timing(cfg, paper_literal=False):
    """Enforce T_r < T_e - 2 T_d; in paper-literal mode only warn."""
    if cfg.T_r < cfg.T_e - 2 * cfg.T_d:
        return None
    msg = (f"timing violated: T_r={cfg.T_r} >= T_e - 2*T_d = "
           f"{cfg.T_e - 2 * cfg.T_d}")
    if paper_literal:
        return msg
    raise TimingViolation(msg)


class _SuccessorRows:
    """Robustness rows for one successor mode under the current gains."""

    def __init__(self, graph, believed_id, succ_id, spec, recovery_problem,
                 T_d, sigma0=None):
        gains_mode = graph.mode(believed_id)
        A_h, B_h, H_omega = hypothesis_loop(graph, succ_id, gains_mode)
        n, m = B_h.shape
        if sigma0 is None:
            sigma0 = np.zeros((n, n))
        tight_plus = tightened_sequence(A_h, H_omega, spec.Z2_plus, spec.F_x,
                                        spec.H_varsigma, spec.beta,
                                        sigma0=sigma0)
        Xs, Vs = prediction_stack(A_h, B_h, T_d, T_d)
        rows_v, rows_x, offs = [], [], []
        for k in range(T_d + 1):
            Ek = np.zeros((m, m * T_d))
            j = min(k, T_d - 1)
            Ek[:, m * j:m * (j + 1)] = np.eye(m)
            if spec.n_e:
                rows_v.append(spec.Z1_plus.normals
                              @ (spec.L_x @ Vs[k] + spec.L_v @ Ek))
                rows_x.append(spec.Z1_plus.normals @ (spec.L_x @ Xs[k]))
                offs.append(spec.Z1_plus.offsets)
            if spec.n_c:
                rows_v.append(spec.F_x @ Vs[k] + spec.F_v @ Ek)
                rows_x.append(spec.F_x @ Xs[k])
                offs.append(spec.Z2_plus.offsets - tight_plus.margin_at(k))
        ext_v = np.vstack(rows_v)
        ext_x = np.vstack(rows_x)
        ext_b = np.concatenate(offs)
        norms = np.linalg.norm(np.hstack([ext_x, ext_v]), axis=1)
        keep = ~((norms <= 1e-300) & (ext_b >= 0))
        norms = np.where(norms <= 1e-300, 1.0, norms)
        self.ext_v = ext_v[keep] / norms[keep, None]
        self.ext_x = ext_x[keep] / norms[keep, None]
        self.ext_b = ext_b[keep] / norms[keep]
        # Recoverability of the hypothesis end state x_hat(T_d).
        self.rec = recovery_problem
        self.end_x = Xs[T_d]
        self.end_v = Vs[T_d]
        self.aux_dim = recovery_problem.dim_u

    def assemble(self, x_t, n_v, aux_offset, total_dim):
        """Rows over the joined vector [v, ..., aux_this, ...]."""
        rows, offs = [], []
        ext = np.zeros((self.ext_v.shape[0], total_dim))
        ext[:, :n_v] = self.ext_v
        rows.append(ext)
        offs.append(self.ext_b - self.ext_x @ x_t)
        rec_rows = np.zeros((self.rec.A_u.shape[0], total_dim))
        rec_rows[:, :n_v] = self.rec.A_x @ self.end_v
        rec_rows[:, aux_offset:aux_offset + self.aux_dim] = self.rec.A_u
        rows.append(rec_rows)
        offs.append(self.rec.b - self.rec.A_x @ (self.end_x @ x_t))
        return np.vstack(rows), np.concatenate(offs)


class FtcPlanner:
    """Detection-aware interval planner for one believed mode."""

    def __init__(self, cfg, graph, believed_id, spec_map, oinf,
                 recovery_problems, sigma0=None):
        self.cfg = cfg
        self.graph = graph
        self.believed_id = believed_id
        self.spec = spec_map[believed_id]
        self.oinf = oinf
        self.mode = graph.mode(believed_id)
        self.succ_rows = []
        for succ in graph.successors_of(believed_id):
            self.succ_rows.append(_SuccessorRows(
                graph, believed_id, succ, self.spec,
                recovery_problems[succ], cfg.T_d, sigma0=sigma0))
        self.n_v = self.mode.m * cfg.T_d
        self.aux_dims = [s.aux_dim for s in self.succ_rows]
        self.total_dim = self.n_v + sum(self.aux_dims)

    def _joined_rows(self, base_A, base_b, x_t):
        """Believed-mode rows padded with zeros plus successor blocks."""
        A = np.zeros((base_A.shape[0], self.total_dim))
        A[:, :self.n_v] = base_A
        rows, offs = [A], [base_b]
        off = self.n_v
        for s in self.succ_rows:
            rA, rb = s.assemble(x_t, self.n_v, off, self.total_dim)
            rows.append(rA)
            offs.append(rb)
            off += s.aux_dim
        return np.vstack(rows), np.concatenate(offs)

    def _feasible(self, A, b, u, tol=ROW_TOL):
        return bool(np.all(A @ u - b <= tol * np.maximum(1.0, np.abs(b))))

    def _starts(self, A, b, c_main, v_prev, rng, box=None):
        """Feasible starting points: greedy LP, hold completion, random LPs."""
        starts = []
        res = linprog(c_main, A_ub=A, b_ub=b, bounds=(None, None),
                      method="highs")
        if res.status == 0:
            starts.append(np.asarray(res.x))
        hold = self._complete(A, b, np.tile(v_prev, self.cfg.T_d))
        if hold is not None:
            starts.append(hold)
        budget = max(self.cfg.multistart - len(starts), 0)
        for _ in range(budget):
            c = rng.normal(size=self.total_dim)
            res = linprog(c, A_ub=A, b_ub=b, bounds=box or (None, None),
                          method="highs")
            if res.status == 0:
                starts.append(np.asarray(res.x))
        return starts

    def _complete(self, A, b, v_fixed):
        """Feasibility completion of the auxiliary block for a fixed v."""
        if self.total_dim == self.n_v:
            u = np.asarray(v_fixed, dtype=float)
            return u if self._feasible(A, b, u) else None
        A_aux = A[:, self.n_v:]
        b_aux = b - A[:, :self.n_v] @ v_fixed
        res = linprog(np.zeros(self.total_dim - self.n_v), A_ub=A_aux,
                      b_ub=b_aux, bounds=(None, None), method="highs")
        if res.status != 0:
            return None
        return np.concatenate([v_fixed, res.x])

    def plan_transient(self, x_t, v_prev, r_preview, rng):
        """Maximize omega * progress - (1-omega) * detection bound."""
        cfg = self.cfg
        x_t = np.asarray(x_t, dtype=float).ravel()
        v_prev = np.asarray(v_prev, dtype=float).ravel()
        r_preview = np.atleast_2d(np.asarray(r_preview, dtype=float))
        if not self.oinf.set.feasible_partial_fix(
                np.concatenate([x_t, v_prev])):
            raise InfeasibleStart("start outside the admissible projection")
        base_A, base_b, signs = governor.interval_constraints(
            self.oinf, x_t, v_prev, r_preview)
        A, b = self._joined_rows(base_A, base_b, x_t)
        gaps = np.abs(r_preview - v_prev[None, :])
        weights = np.where(gaps > governor.DEGENERATE_TOL,
                           1.0 / np.maximum(gaps, 1e-30), 0.0)
        c_main = np.zeros(self.total_dim)
        c_main[:self.n_v] = -(weights * signs).ravel()

        if cfg.omega >= 1.0:
            u = self._solve_linear(A, b, c_main, weights, signs)
            return self._finish(u, x_t, v_prev, r_preview)

        jd = DetectionBoundModel(self.graph, self.believed_id, x_t, cfg.T_d)
        # Average the normalized progress so both objective terms live on
        # a unit scale and omega sweeps a genuine trade-off.
        c_scaled = c_main / max(self.n_v, 1)

        def cost(u):
            return (cfg.omega * float(c_scaled @ u)
                    + (1 - cfg.omega) * jd(u[:self.n_v]))

        def grad(u):
            g = cfg.omega * c_scaled.copy()
            g[:self.n_v] += (1 - cfg.omega) * jd.gradient(u[:self.n_v])
            return g

        u = self._multistart(A, b, c_main, cost, grad, v_prev, rng)
        return self._finish(u, x_t, v_prev, r_preview, jd=jd)

    def plan_steady(self, x_t, v_prev, r, rng):
        """Excite within the vartheta-ball around r for detectability."""
        cfg = self.cfg
        x_t = np.asarray(x_t, dtype=float).ravel()
        v_prev = np.asarray(v_prev, dtype=float).ravel()
        r = np.asarray(r, dtype=float).ravel()
        if not self.oinf.set.feasible_partial_fix(
                np.concatenate([x_t, v_prev])):
            raise InfeasibleStart("start outside the admissible projection")
        m = r.size
        n = x_t.size
        N = self.oinf.set.normals
        base_A = N[:, n:]
        base_b = self.oinf.set.offsets - N[:, :n] @ x_t
        A, b = self._joined_rows(base_A, base_b, x_t)

        if cfg.vartheta <= 0.0:
            u = self._complete(A, b, np.tile(r, cfg.T_d))
            if u is None:
                raise InfeasibleStart("v = r is not admissible from here")
            return self._finish_steady(u, r)

        jd = DetectionBoundModel(self.graph, self.believed_id, x_t, cfg.T_d)
        R = cfg.R

        def cost(u):
            dv = u[:self.n_v].reshape(cfg.T_d, m) - r[None, :]
            track = float(np.sum(dv @ R * dv))
            return cfg.omega * track + (1 - cfg.omega) * jd(u[:self.n_v])

        def grad(u):
            g = np.zeros_like(u)
            dv = u[:self.n_v].reshape(cfg.T_d, m) - r[None, :]
            g[:self.n_v] = cfg.omega * (2.0 * dv @ R).ravel()
            g[:self.n_v] += (1 - cfg.omega) * jd.gradient(u[:self.n_v])
            return g

        def ball_funs():
            cons = []
            for i in range(cfg.T_d):
                sl = slice(m * i, m * (i + 1))

                def fun(u, sl=sl):
                    return cfg.vartheta ** 2 - float(
                        np.sum((u[sl] - r) ** 2))

                def jac(u, sl=sl):
                    g = np.zeros_like(u)
                    g[sl] = -2.0 * (u[sl] - r)
                    return g

                cons.append({"type": "ineq", "fun": fun, "jac": jac})
            return cons

        # Random starts are drawn inside the inscribed box of the ball.
        box_lo = np.full(self.total_dim, -np.inf)
        box_hi = np.full(self.total_dim, np.inf)
        half = cfg.vartheta / math.sqrt(m)
        box_lo[:self.n_v] = np.tile(r - half, cfg.T_d)
        box_hi[:self.n_v] = np.tile(r + half, cfg.T_d)
        starts = []
        center = self._complete(A, b, np.tile(r, cfg.T_d))
        if center is not None:
            starts.append(center)
        hold = self._complete(A, b, np.tile(v_prev, cfg.T_d))
        if hold is not None and np.linalg.norm(v_prev - r) <= cfg.vartheta:
            starts.append(hold)
        budget = max(self.cfg.multistart - len(starts), 0)
        for _ in range(budget):
            c = rng.normal(size=self.total_dim)
            res = linprog(c, A_ub=A, b_ub=b,
                          bounds=list(zip(box_lo, box_hi)), method="highs")
            if res.status == 0:
                starts.append(np.asarray(res.x))
        if not starts:
            raise InfeasibleStart("no feasible steady-state plan")

        cons = [{"type": "ineq",
                 "fun": lambda u: b - A @ u,
                 "jac": lambda u: -A}] + ball_funs()
        best, best_cost = None, np.inf
        for u0 in starts:
            res = minimize(cost, u0, jac=grad, method="SLSQP",
                           constraints=cons,
                           options={"ftol": 1e-9, "maxiter": 100})
            cand = res.x if res.success else u0
            if not self._feasible(A, b, cand):
                continue
            dv = cand[:self.n_v].reshape(cfg.T_d, m) - r[None, :]
            if np.any(np.linalg.norm(dv, axis=1) > cfg.vartheta + 1e-7):
                continue
            c = cost(cand)
            if c < best_cost:
                best, best_cost = cand, c
        if best is None:
            raise SolverError("steady-state planning found no feasible point")
        return self._finish_steady(best, r)

    def _solve_linear(self, A, b, c_main, weights, signs):
        res = linprog(c_main, A_ub=A, b_ub=b, bounds=(None, None),
                      method="highs")
        if res.status == 2:
            raise InfeasibleStart("no admissible monotone plan (robust rows)")
        if res.status != 0:
            raise SolverError(f"transient LP failed: {res.message}")
        decay = governor.TIE_BREAK_DECAY ** np.arange(self.cfg.T_d)
        c_tie = np.zeros(self.total_dim)
        c_tie[:self.n_v] = -(decay[:, None] * weights * signs).ravel()
        A_tie = np.vstack([A, c_main[None, :]])
        b_tie = np.concatenate([b, [res.fun + self.cfg.opt_tol]])
        res2 = linprog(c_tie, A_ub=A_tie, b_ub=b_tie, bounds=(None, None),
                       method="highs")
        return np.asarray(res2.x if res2.status == 0 else res.x)

    def _multistart(self, A, b, c_main, cost, grad, v_prev, rng):
        starts = self._starts(A, b, c_main, v_prev, rng)
        if not starts:
            raise InfeasibleStart("no feasible transient plan")
        cons = [{"type": "ineq",
                 "fun": lambda u: b - A @ u,
                 "jac": lambda u: -A}]
        best, best_cost = None, np.inf
        for u0 in starts:
            if self._feasible(A, b, u0) and cost(u0) < best_cost:
                best, best_cost = u0, cost(u0)
            res = minimize(cost, u0, jac=grad, method="SLSQP",
                           constraints=cons,
                           options={"ftol": 1e-9, "maxiter": 100})
            if res.success and self._feasible(A, b, res.x):
                c = cost(res.x)
                if c < best_cost:
                    best, best_cost = np.asarray(res.x), c
        if best is None:
            raise SolverError("transient planning found no feasible point")
        return best

    def _finish(self, u, x_t, v_prev, r_preview, jd=None):
        v_seq = u[:self.n_v].reshape(self.cfg.T_d, self.mode.m)
        kappas = sequence_to_kappa(v_prev, r_preview, v_seq)
        info = {"jd": jd(u[:self.n_v]) if jd is not None else None}
        plan = AorgPlan(kappas=kappas, v_seq=v_seq,
                        objective=float(kappas.sum()), feasible_start=True)
        return plan, info

    def _finish_steady(self, u, r):
        v_seq = u[:self.n_v].reshape(self.cfg.T_d, self.mode.m)
        kappas = np.ones_like(v_seq)
        plan = AorgPlan(kappas=kappas, v_seq=v_seq, objective=0.0,
                        feasible_start=True)
        return plan, {"jd": None}


def build_planners(cfg, graph, spec_map, oinf_map, recovery_map):
    """One stateless planner per mode, shareable across scenario runs."""
    return {mode.mode_id: FtcPlanner(cfg, graph, mode.mode_id, spec_map,
                                     oinf_map[mode.mode_id], recovery_map)
            for mode in graph.modes}


@dataclass
class OrchestratorState:
    believed_mode: int
    phase: str = "transient"            # transient | steady | holding | recovering
    interval_clock: int = 0
    pending_candidate: int | None = None
    pending_count: int = 0
    applied_plan: np.ndarray | None = None
    cursor: int = 0
    last_v: np.ndarray | None = None
    last_plan_objective: float | None = None


class Orchestrator:
    """Single-threaded per-scenario state machine tying all units together."""

    def __init__(self, cfg, graph, spec_map, oinf_map, recovery_map,
                 initial_mode, v_init, rng, paper_literal_timing=False,
                 planners=None):
        self.cfg = cfg
        self.graph = graph
        self.spec_map = spec_map
        self.oinf_map = oinf_map
        self.recovery_map = recovery_map
        self.rng = rng
        self.timing_warning = validate_timing(cfg, paper_literal_timing)
        if planners is None:
            planners = build_planners(cfg, graph, spec_map, oinf_map,
                                      recovery_map)
        self.planners = planners
        self.state = OrchestratorState(believed_mode=initial_mode,
                                       last_v=np.asarray(v_init, float))
        self.bank = None

    @property
    def believed_mode(self):
        return self.state.believed_mode

    def posteriors(self):
        """Posterior per registered mode id (zeros off the current bank)."""
        out = {m.mode_id: 0.0 for m in self.graph.modes}
        if self.bank is not None:
            for f, p in zip(self.bank.filters, self.bank.posteriors):
                out[f.hypothesis_mode] = float(p)
        else:
            out[self.state.believed_mode] = 1.0
        return out

    def _detection_decision(self, x_t, events):
        st = self.state
        idx = int(np.argmax(self.bank.posteriors))
        detected = self.bank.filters[idx].hypothesis_mode
        events.append(f"detect:{detected}")
        if detected != st.believed_mode:
            if detected == st.pending_candidate:
                st.pending_count += 1
            else:
                st.pending_candidate = detected
                st.pending_count = 1
            if st.pending_count >= self.cfg.confirm_intervals:
                events.append(f"confirm:{detected}")
                self._reconfigure(detected, x_t, events)
        else:
            st.pending_candidate = None
            st.pending_count = 0

    def _reconfigure(self, new_mode, x_t, events):
        st = self.state
        st.believed_mode = new_mode
        st.pending_candidate = None
        st.pending_count = 0
        st.phase = "recovering"
        st.applied_plan = None
        st.cursor = 0
        self.bank = None
        events.append(f"reconfigure:{new_mode}")

    def _try_recovery_plan(self, x_t, r_now, events):
        st = self.state
        problem = self.recovery_map[st.believed_mode]
        witness = in_recoverable_set(problem, x_t)
        if not witness.feasible:
            events.append("recovery_hold")
            return False
        try:
            v_seq = plan_recovery(problem, x_t, r_now)
        except SolverError:
            events.append("recovery_hold")
            return False
        st.applied_plan = v_seq
        st.cursor = 0
        st.interval_clock = v_seq.shape[0]
        events.append("recovery_start")
        return True

    def _start_interval(self, x_t, r_preview, events):
        st = self.state
        oinf = self.oinf_map[st.believed_mode]
        start = np.concatenate([x_t, st.last_v])
        if not oinf.set.feasible_partial_fix(start):
            st.phase = "holding"
            events.append("hold")
            return
        r_now = r_preview[0]
        planner = self.planners[st.believed_mode]
        transient = (np.linalg.norm(st.last_v - r_now) > self.cfg.vartheta)
        try:
            if transient:
                plan, info = planner.plan_transient(x_t, st.last_v,
                                                    r_preview, self.rng)
            else:
                plan, info = planner.plan_steady(x_t, st.last_v, r_now,
                                                 self.rng)
        except (InfeasibleStart, SolverError) as exc:
            st.phase = "holding"
            events.append(f"hold:{type(exc).__name__}")
            return
        st.phase = "transient" if transient else "steady"
        st.applied_plan = plan.v_seq
        st.cursor = 0
        st.interval_clock = plan.v_seq.shape[0]
        st.last_plan_objective = plan.objective if transient else None
        self.bank = make_bank(self.graph, st.believed_mode, x_t,
                              np.zeros((x_t.size, x_t.size)), self.cfg.T_d)
        events.append(f"plan:{st.phase}"
                      + (f":jd={info['jd']:.4f}" if info.get("jd") is not None
                         else ""))

    def step(self, t, x_t, y_t, r_preview):
        """Advance one time step; returns (v_t, events)."""
        events = []
        st = self.state
        r_preview = np.atleast_2d(np.asarray(r_preview, dtype=float))

        if self.bank is not None and t > 0:
            self.bank = bank_step(self.bank, self.graph, st.last_v, y_t)
            if self.bank is not None and self.bank.window % self.cfg.T_d == 0:
                self._detection_decision(x_t, events)

        if st.phase == "recovering" and st.applied_plan is None:
            self._try_recovery_plan(x_t, r_preview[0], events)
        elif st.applied_plan is None or st.cursor >= len(st.applied_plan):
            if st.phase == "recovering":
                events.append("recovery_done")
                st.phase = "transient"
                st.applied_plan = None
            if st.phase != "recovering":
                self._start_interval(x_t, r_preview, events)

        if st.applied_plan is not None and st.cursor < len(st.applied_plan):
            v_t = st.applied_plan[st.cursor]
            st.cursor += 1
        else:
            v_t = st.last_v
        st.last_v = np.asarray(v_t, dtype=float)
        return st.last_v, events
