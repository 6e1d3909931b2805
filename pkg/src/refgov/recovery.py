"""Recoverable sets under relaxed constraints and reconfiguration planning.

A state is recoverable for a target mode if some reference sequence drives
it, under that mode's own closed loop and temporarily extended constraint
sets, into the (x, v_0) projection of the mode's admissible set within T_r
steps.  Membership and planning are feasibility/QP problems over the
recovery sequence joined with the free tail coordinates of the terminal
set; the projection itself is never computed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from .admissible import prediction_stack
from .errors import InfeasibleRecovery, SolverError
from .polytopes import FEAS_TOL, FeasibilityWitness
from .stochastics import tightened_sequence


@dataclass(frozen=True)
class RecoveryProblem:
    """Precompiled recovery rows for one target mode."""
    target_mode: object
    T_r: int
    terminal_set: object        # AdmissibleSet of the target mode
    R: np.ndarray               # weight on ||v - r||^2 in the plan objective
    A_x: np.ndarray             # rows: A_x @ x + A_u @ u <= b
    A_u: np.ndarray
    b: np.ndarray
    n_v: int                    # recovery decision block size m*T_r

    @property
    def dim_u(self):
        return self.A_u.shape[1]


def make_recovery_problem(target_mode, spec, T_r, terminal_set, R=None,
                          sigma0=None):
    """Assemble the halfspace rows of the recoverable-set program.

    `spec` must be the constraint spec matching the target mode's gains; its
    extended sets Z1_plus / Z2_plus govern the recovery transient, and the
    chance tightening is recomputed from sigma0 (state known at detection).
    """
    if not 0 < T_r < spec.T_e:
        raise ValueError(f"T_r={T_r} must satisfy 0 < T_r < T_e={spec.T_e}")
    mode = target_mode
    n, m = mode.n, mode.m
    if R is None:
        R = np.eye(m)
    R = np.asarray(R, dtype=float)
    if not np.allclose(R, R.T) or np.any(np.linalg.eigvalsh(R) <= 0):
        raise ValueError("R must be symmetric positive definite")
    T = terminal_set.horizon_T
    tight_plus = tightened_sequence(mode.A, mode.H_omega, spec.Z2_plus,
                                    spec.F_x, spec.H_varsigma, spec.beta,
                                    sigma0=sigma0)
    Xs, Vs = prediction_stack(mode.A, mode.B, T_r, T_r)
    n_v = m * T_r
    dim_u = n_v + m * T
    rows_x, rows_u, offs = [], [], []
    for k in range(T_r):
        Ek = np.zeros((m, dim_u))
        Ek[:, m * k:m * (k + 1)] = np.eye(m)
        Vk = np.hstack([Vs[k], np.zeros((n, m * T))])
        if spec.n_e:
            M1x = spec.L_x @ Xs[k]
            M1u = spec.L_x @ Vk + spec.L_v @ Ek
            rows_x.append(spec.Z1_plus.normals @ M1x)
            rows_u.append(spec.Z1_plus.normals @ M1u)
            offs.append(spec.Z1_plus.offsets)
        if spec.n_c:
            M2x = spec.F_x @ Xs[k]
            M2u = spec.F_x @ Vk + spec.F_v @ Ek
            rows_x.append(M2x)
            rows_u.append(M2u)
            offs.append(spec.Z2_plus.offsets - tight_plus.margin_at(k))
    # Terminal rows: (x_hat(T_r), v(T_r-1), tail) must satisfy the
    # admissible set of the target mode; the tail coordinates are free.
    N = terminal_set.set.normals
    Nx, Nv0, Ntail = N[:, :n], N[:, n:n + m], N[:, n + m:]
    last = np.zeros((m, dim_u))
    last[:, m * (T_r - 1):m * T_r] = np.eye(m)
    tail = np.zeros((m * T, dim_u))
    tail[:, n_v:] = np.eye(m * T)
    rows_x.append(Nx @ Xs[T_r])
    rows_u.append(Nx @ np.hstack([Vs[T_r], np.zeros((n, m * T))])
                  + Nv0 @ last + Ntail @ tail)
    offs.append(terminal_set.set.offsets)
    A_x = np.vstack(rows_x)
    A_u = np.vstack(rows_u)
    b = np.concatenate(offs)
    # Unit-norm rows keep the downstream LP/QP solvers well conditioned.
    norms = np.linalg.norm(np.hstack([A_x, A_u]), axis=1)
    keep = ~((norms <= 1e-300) & (b >= 0))
    norms = np.where(norms <= 1e-300, 1.0, norms)
    return RecoveryProblem(target_mode=mode, T_r=T_r,
                           terminal_set=terminal_set, R=R,
                           A_x=A_x[keep] / norms[keep, None],
                           A_u=A_u[keep] / norms[keep, None],
                           b=b[keep] / norms[keep], n_v=n_v)


def in_recoverable_set(problem, x):
    """Feasibility of steering x into the terminal projection within T_r."""
    x = np.asarray(x, dtype=float).ravel()
    b_eff = problem.b - problem.A_x @ x
    res = linprog(np.zeros(problem.dim_u), A_ub=problem.A_u, b_ub=b_eff,
                  bounds=(None, None), method="highs")
    if res.status == 2:
        return FeasibilityWitness(False)
    if res.status != 0:
        raise SolverError(f"recoverable-set LP failed: {res.message}")
    return FeasibilityWitness(True, np.asarray(res.x))


def plan_recovery(problem, x, r):
    """Reference sequence minimizing sum ||v(t+i) - r||^2_R over recovery."""
    x = np.asarray(x, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    witness = in_recoverable_set(problem, x)
    if not witness.feasible:
        raise InfeasibleRecovery("state is outside the recoverable set")
    m = problem.target_mode.m
    T_r = problem.T_r
    b_eff = problem.b - problem.A_x @ x
    R = problem.R
    # Start strictly inside (max-slack point) so the QP solver has room.
    A_slack = np.hstack([problem.A_u, np.ones((problem.A_u.shape[0], 1))])
    res0 = linprog(np.r_[np.zeros(problem.dim_u), -1.0], A_ub=A_slack,
                   b_ub=b_eff, bounds=(None, None), method="highs")
    start = (np.asarray(res0.x[:problem.dim_u]) if res0.status == 0
             else witness.point)

    def cost(u):
        dv = u[:problem.n_v].reshape(T_r, m) - r[None, :]
        return float(np.sum(dv @ R * dv))

    def grad(u):
        g = np.zeros_like(u)
        dv = u[:problem.n_v].reshape(T_r, m) - r[None, :]
        g[:problem.n_v] = (2.0 * dv @ R).ravel()
        return g

    cons = [{"type": "ineq",
             "fun": lambda u: b_eff - problem.A_u @ u,
             "jac": lambda u: -problem.A_u}]
    res = minimize(cost, start, jac=grad, method="SLSQP",
                   constraints=cons,
                   options={"ftol": 1e-12, "maxiter": 500})
    if not res.success:
        raise SolverError(f"recovery QP failed: {res.message}")
    u = np.asarray(res.x)
    if np.any(problem.A_u @ u - b_eff > 1e-6):
        raise SolverError("recovery plan violates its constraints")
    return u[:problem.n_v].reshape(T_r, m)


@dataclass(frozen=True)
class ContainmentReport:
    n_checked: int
    violations: tuple

    @property
    def ok(self):
        return len(self.violations) == 0


def check_recoverability_containment(oinf_mu, problem, n_check=500, seed=0):
    """Sampled certificate that Proj_x of the admissible set is recoverable.

    Boundary-biased: each sample maximizes a random support direction of the
    x-block over the full admissible set, then is tested for recoverability.
    Exact projection inclusion is intractable here; the report is honest
    about being a sampled check.
    """
    n = problem.target_mode.n
    rng = np.random.Generator(np.random.Philox(seed))
    violations = []
    for _ in range(n_check):
        d = rng.normal(size=n)
        d = d / max(np.linalg.norm(d), 1e-12)
        direction = np.zeros(oinf_mu.dim)
        direction[:n] = d
        _, w = oinf_mu.set.support(direction)
        x_sample = w[:n]
        if not in_recoverable_set(problem, x_sample).feasible:
            violations.append(x_sample)
    return ContainmentReport(n_checked=n_check, violations=tuple(violations))
