"""Operating modes, closed-loop construction, and standing-assumption checks.

A mode is the open-loop pair (A_o, B_o) plus the stabilizing feedback K and
feedforward G that close the loop around the auxiliary reference v.  All
types are immutable after construction and safe to share across workers.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, NotSchur
from .polytopes import Polytope
from .stochastics import _check_psd

SCHUR_MARGIN = 1e-9
OBSV_TOL = 1e-8


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModeModel:
    """One operating mode with its closed loop A = A_o + B_o K, B = B_o G."""
    mode_id: int
    A_o: np.ndarray
    B_o: np.ndarray
    C: np.ndarray
    K: np.ndarray
    G: np.ndarray
    A: np.ndarray
    B: np.ndarray
    H_omega: np.ndarray
    H_xi: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.B_o.shape[1]


def build_closed_loop(mode_id, A_o, B_o, C, K, G, H_omega, H_xi,
                      schur_margin=SCHUR_MARGIN):
    """Close the loop with u = K x + G v and validate the result."""
    A_o = np.asarray(A_o, dtype=float)
    B_o = np.asarray(B_o, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n = A_o.shape[0]
    if A_o.shape != (n, n):
        raise DimensionMismatch("A_o must be square")
    p = B_o.shape[1]
    if B_o.shape[0] != n:
        raise DimensionMismatch("B_o row count must match A_o")
    if K.shape != (p, n):
        raise DimensionMismatch(f"K must be {p}x{n}, got {K.shape}")
    m = C.shape[0]
    if C.shape[1] != n:
        raise DimensionMismatch("C column count must match A_o")
    if G.shape != (p, m):
        raise DimensionMismatch(f"G must be {p}x{m}, got {G.shape}")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(G))):
        raise ValueError("gains must be finite")
    A = A_o + B_o @ K
    B = B_o @ G
    rho = spectral_radius(A)
    if rho >= 1.0 - schur_margin:
        raise NotSchur(f"closed loop spectral radius {rho:.6f} >= 1")
    return ModeModel(mode_id=int(mode_id),
                     A_o=_frozen(A_o), B_o=_frozen(B_o), C=_frozen(C),
                     K=_frozen(K), G=_frozen(G),
                     A=_frozen(A), B=_frozen(B),
                     H_omega=_frozen(_check_psd(H_omega, "H_omega")),
                     H_xi=_frozen(_check_psd(H_xi, "H_xi")))


def apply_actuator_fault(B_o, actuator_index):
    """Zero out the column of the failed actuator (1-based index)."""
    B_o = np.asarray(B_o, dtype=float)
    p = B_o.shape[1]
    if not 1 <= actuator_index <= p:
        raise IndexOutOfRange(f"actuator {actuator_index} outside 1..{p}")
    out = B_o.copy()
    out[:, actuator_index - 1] = 0.0
    return out


@dataclass(frozen=True)
class ConstraintSpec:
    """Constrained-output maps and their polytopic bounds.

    z1 = L_x x + L_v v + zeta must satisfy E[z1] in Z1; z2 = F_x x + F_v v
    + varsigma must stay in Z2 with probability beta.  Z2 and Z2_plus are in
    the axis-aligned upper-bound form required by the tightening formula.
    """
    L_x: np.ndarray
    L_v: np.ndarray
    Z1: Polytope
    F_x: np.ndarray
    F_v: np.ndarray
    Z2: Polytope
    H_zeta: np.ndarray
    H_varsigma: np.ndarray
    beta: float
    Z1_plus: Polytope
    Z2_plus: Polytope
    T_e: int

    def __post_init__(self):
        object.__setattr__(self, "L_x", _frozen(np.atleast_2d(self.L_x)))
        object.__setattr__(self, "L_v", _frozen(np.atleast_2d(self.L_v)))
        object.__setattr__(self, "F_x", _frozen(np.atleast_2d(self.F_x)))
        object.__setattr__(self, "F_v", _frozen(np.atleast_2d(self.F_v)))
        object.__setattr__(self, "H_zeta",
                           _frozen(_check_psd(self.H_zeta, "H_zeta")))
        object.__setattr__(self, "H_varsigma",
                           _frozen(_check_psd(self.H_varsigma, "H_varsigma")))
        if not (0.0 < self.beta < 1.0):
            raise ValueError(f"beta must lie in (0,1), got {self.beta}")
        if self.T_e < 2:
            raise ValueError("maximum extension time T_e must be >= 2")
        for name, P in (("Z1", self.Z1), ("Z2", self.Z2)):
            if not P.contains(np.zeros(P.dim)):
                raise ValueError(f"{name} must contain the origin")
        if self.L_x.shape[0] != self.Z1.dim:
            raise DimensionMismatch("L_x rows must match Z1 dimension")
        if self.F_x.shape[0] != self.Z2.dim:
            raise DimensionMismatch("F_x rows must match Z2 dimension")

    @property
    def n_e(self):
        return self.L_x.shape[0]

    @property
    def n_c(self):
        return self.F_x.shape[0]

    def validate_extensions(self):
        """Check Z1 in Z1_plus and Z2 in Z2_plus (inclusion LPs)."""
        return (self.Z1_plus.includes(self.Z1)
                and self.Z2_plus.includes(self.Z2))


@dataclass(frozen=True)
class ModeGraph:
    """Registered modes, the successor relation, and prior probabilities."""
    modes: tuple
    successors: dict
    priors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "priors",
                           _frozen(np.asarray(self.priors, dtype=float)))
        ids = {m.mode_id for m in self.modes}
        if len(ids) != len(self.modes):
            raise ValueError("duplicate mode ids")
        for mu, succ in self.successors.items():
            if mu not in ids or not set(succ) <= ids:
                raise ValueError(f"successor map references unknown mode {mu}")

    def mode(self, mode_id):
        for m in self.modes:
            if m.mode_id == mode_id:
                return m
        raise KeyError(f"no mode {mode_id}")

    def successors_of(self, mode_id):
        return sorted(self.successors.get(mode_id, ()))

    def prior_of(self, mode_id):
        idx = [m.mode_id for m in self.modes].index(mode_id)
        return float(self.priors[idx])


def observability_rank(L, A, tol=OBSV_TOL):
    """Rank of the stacked observability matrix [L; LA; ...; LA^(n-1)]."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    blocks = [L]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    sv = np.linalg.svd(np.vstack(blocks), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


@dataclass(frozen=True)
class ModeCheck:
    mode_id: int
    schur_ok: bool
    spectral_radius: float
    closed_loop_ok: bool
    lx_observable: bool
    fx_observable: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    priors_ok: bool

    @property
    def ok(self):
        return self.priors_ok and all(
            c.schur_ok and c.closed_loop_ok and c.lx_observable
            and c.fx_observable for c in self.checks)

    def lines(self):
        out = []
        for c in self.checks:
            out.append(
                f"mode {c.mode_id}: schur={'pass' if c.schur_ok else 'FAIL'}"
                f" (rho={c.spectral_radius:.6f})"
                f" closed_loop={'pass' if c.closed_loop_ok else 'FAIL'}"
                f" obs(L_x,A)={'pass' if c.lx_observable else 'FAIL'}"
                f" obs(F_x,A)={'pass' if c.fx_observable else 'FAIL'}")
        out.append(f"priors: {'pass' if self.priors_ok else 'FAIL'}")
        return out


def validate_mode_graph(graph, spec, schur_margin=SCHUR_MARGIN):
    """Report Schur, observability, and prior sanity per mode.

    `spec` may be a single ConstraintSpec or a mapping mode_id -> spec when
    the constrained-output maps differ across modes.
    """
    checks = []
    for mode in graph.modes:
        sp = spec[mode.mode_id] if isinstance(spec, dict) else spec
        rho = spectral_radius(mode.A)
        rebuilt_A = mode.A_o + mode.B_o @ mode.K
        rebuilt_B = mode.B_o @ mode.G
        n = mode.n
        checks.append(ModeCheck(
            mode_id=mode.mode_id,
            schur_ok=rho < 1.0 - schur_margin,
            spectral_radius=rho,
            closed_loop_ok=bool(np.allclose(rebuilt_A, mode.A, atol=0)
                                and np.allclose(rebuilt_B, mode.B, atol=0)),
            lx_observable=observability_rank(sp.L_x, mode.A) == n,
            fx_observable=observability_rank(sp.F_x, mode.A) == n))
    priors = graph.priors
    priors_ok = bool(np.all(priors >= 0)
                     and abs(float(priors.sum()) - 1.0) <= 1e-9)
    return ValidationReport(tuple(checks), priors_ok)
