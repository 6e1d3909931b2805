"""Interval reference-governor planning over the admissible set.

The planner picks per-step, per-coordinate blend factors kappa in [0, 1]
moving the applied reference from its previous value toward the previewed
desired reference, subject to joint admissibility of the whole interval.
The search runs in reference-sequence space, where admissibility is linear:
each coordinate is constrained to move monotonically toward its preview
target without overshoot (exactly the kappa in [0,1] region when the
preview is constant over the interval), a normalized-progress objective is
maximized, and the blend factors are recovered from the optimal sequence.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleStart, KappaOutOfRange, SolverError

DEGENERATE_TOL = 1e-12
TIE_BREAK_DECAY = 0.5


@dataclass(frozen=True)
class AorgPlan:
    kappas: np.ndarray    # (T+1, m), entries in [0, 1]
    v_seq: np.ndarray     # (T+1, m) planned references
    objective: float      # achieved sum of kappas
    feasible_start: bool


@dataclass(frozen=True)
class HoldDecision:
    held_v: np.ndarray
    recheck_next_step: bool = True


def kappa_to_sequence(v_prev, r_preview, kappas):
    """v_i = v_{i-1} + diag(kappa_i) (r(t+i) - v_{i-1}), i = 0..T."""
    v_prev = np.asarray(v_prev, dtype=float).ravel()
    r_preview = np.atleast_2d(np.asarray(r_preview, dtype=float))
    kappas = np.atleast_2d(np.asarray(kappas, dtype=float))
    if np.any(kappas < -1e-9) or np.any(kappas > 1 + 1e-9):
        raise KappaOutOfRange("kappa entries must lie in [0, 1]")
    kappas = np.clip(kappas, 0.0, 1.0)
    out = np.empty_like(kappas)
    prev = v_prev
    for i in range(kappas.shape[0]):
        prev = prev + kappas[i] * (r_preview[i] - prev)
        out[i] = prev
    return out

def sequence_to_kappa(v_prev, r_preview, v_seq):
    """Recover blend factors; zero displacement is kappa = 1 by convention.

    The degeneracy test is relative to the reference magnitude so that a
    target reached up to solver tolerance counts as reached; otherwise the
    recovered factor would flip between 0 and 1 on noise-level residuals.
    """
    v_prev = np.asarray(v_prev, dtype=float).ravel()
    r_preview = np.atleast_2d(np.asarray(r_preview, dtype=float))
    v_seq = np.atleast_2d(np.asarray(v_seq, dtype=float))
    kappas = np.ones_like(v_seq)
    prev = v_prev
    for i in range(v_seq.shape[0]):
        gap = r_preview[i] - prev
        move = v_seq[i] - prev
        nz = np.abs(gap) > 1e-6 * (1.0 + np.abs(r_preview[i]))
        kappas[i, nz] = move[nz] / gap[nz]
        prev = v_seq[i]
    return np.clip(kappas, 0.0, 1.0)


def _progress_rows(v_prev, r_preview, m, T):
    """Monotone-toward-target rows over vec(v_0..v_T), anchored at v_prev."""
    dim = m * (T + 1)
    signs = np.sign(r_preview - v_prev[None, :])
    signs[signs == 0] = 1.0
    rows, offs = [], []
    for i in range(T + 1):
        for j in range(m):
            s = signs[i, j]
            row = np.zeros(dim)
            row[m * i + j] = -s
            if i == 0:
                offs.append(-s * v_prev[j])
            else:
                row[m * (i - 1) + j] = s
                offs.append(0.0)
            rows.append(row)
            cap = np.zeros(dim)
            cap[m * i + j] = s
            rows.append(cap)
            offs.append(s * r_preview[i, j])
    return np.array(rows), np.array(offs), signs


def interval_constraints(oinf, x_t, v_prev, r_preview):
    """(A_ub, b_ub) over vec(v_0..v_T): admissibility plus progress rows."""
    x_t = np.asarray(x_t, dtype=float).ravel()
    v_prev = np.asarray(v_prev, dtype=float).ravel()
    r_preview = np.atleast_2d(np.asarray(r_preview, dtype=float))
    n = x_t.size
    m = v_prev.size
    T = r_preview.shape[0] - 1
    N = oinf.set.normals
    A_set = N[:, n:]
    b_set = oinf.set.offsets - N[:, :n] @ x_t
    A_prog, b_prog, signs = _progress_rows(v_prev, r_preview, m, T)
    return np.vstack([A_set, A_prog]), np.concatenate([b_set, b_prog]), signs


def plan_interval(oinf, x_t, v_prev, r_preview, opt_tol=1e-6):
    """Plan the reference sequence for one interval.

    Precondition: (x_t, v_prev) lies in the (x, v_0) projection of the
    admissible set; callers route infeasible starts to handle_infeasible.
    """
    x_t = np.asarray(x_t, dtype=float).ravel()
    v_prev = np.asarray(v_prev, dtype=float).ravel()
    r_preview = np.atleast_2d(np.asarray(r_preview, dtype=float))
    m = v_prev.size
    T = r_preview.shape[0] - 1
    if not oinf.set.feasible_partial_fix(np.concatenate([x_t, v_prev])):
        raise InfeasibleStart("(x, v_prev) outside the admissible projection")

    gaps = np.abs(r_preview - v_prev[None, :])
    if np.all(gaps <= DEGENERATE_TOL):
        v_seq = np.tile(v_prev, (T + 1, 1))
        kappas = np.ones_like(v_seq)
        return AorgPlan(kappas, v_seq, float(kappas.sum()), True)

    A_ub, b_ub, signs = interval_constraints(oinf, x_t, v_prev, r_preview)
    weights = np.where(gaps > DEGENERATE_TOL, 1.0 / np.maximum(gaps, 1e-30),
                       0.0)
    # Normalized position sum: rewards being close to the target at every
    # step of the interval, which is what the per-step blend factors score.
    c_main = -(weights * signs).ravel()
    res = linprog(c_main, A_ub=A_ub, b_ub=b_ub, bounds=(None, None),
                  method="highs")
    if res.status == 2:
        raise InfeasibleStart("no admissible monotone plan from this start")
    if res.status != 0:
        raise SolverError(f"interval LP failed: {res.message}")

    # Tie-break among optima: earliest-step progress via decaying weights.
    decay = TIE_BREAK_DECAY ** np.arange(T + 1)
    c_tie = -(decay[:, None] * weights * signs).ravel()
    A_tie = np.vstack([A_ub, c_main[None, :]])
    b_tie = np.concatenate([b_ub, [res.fun + opt_tol]])
    res2 = linprog(c_tie, A_ub=A_tie, b_ub=b_tie, bounds=(None, None),
                   method="highs")
    u = res2.x if res2.status == 0 else res.x
    v_seq = np.asarray(u).reshape(T + 1, m)
    kappas = sequence_to_kappa(v_prev, r_preview, v_seq)
    if not oinf.set.contains(np.concatenate([x_t, v_seq.ravel()]),
                             tol=1e-7):
        raise SolverError("planned sequence failed the admissibility check")
    return AorgPlan(kappas, v_seq, float(kappas.sum()), True)


def handle_infeasible(oinf, x_now, v_prev):
    """One-step hold when the previous reference is no longer admissible."""
    x_now = np.asarray(x_now, dtype=float).ravel()
    v_prev = np.asarray(v_prev, dtype=float).ravel()
    if oinf.set.feasible_partial_fix(np.concatenate([x_now, v_prev])):
        raise ValueError("start is feasible; hold must not be used")
    return HoldDecision(held_v=v_prev.copy(), recheck_next_step=True)
