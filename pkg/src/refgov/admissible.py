"""Output-admissible sets over (x, v_0..v_T) with finite-determination search.

The joint set collects every initial state and reference sequence whose
noise-free predicted outputs satisfy the expectation constraint and the
per-step tightened chance constraint at every future time, with the terminal
reference v_T held constant beyond the horizon and required to be strictly
steady-state admissible (an eps-ball inside the limiting constraint sets).
"""

from dataclasses import dataclass

import numpy as np

from .errors import (EmptySet, NotDeterminedWithinCap, SingularMatrix)
from .polytopes import FEAS_TOL, Polytope
from .stochastics import tightened_sequence

CONFIRM_WINDOW = 10


def prediction_stack(A, B, n_inputs, k_max):
    """Linear maps from (x, v_0..v_{n_inputs-1}) to x_hat(0..k_max).

    Returns (Xs, Vs) with x_hat(k) = Xs[k] @ x + Vs[k] @ vec(v).  The last
    input is held constant for steps beyond n_inputs.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    Xs = np.empty((k_max + 1, n, n))
    Vs = np.zeros((k_max + 1, n, m * n_inputs))
    Xs[0] = np.eye(n)
    for k in range(k_max):
        Xs[k + 1] = A @ Xs[k]
        Vs[k + 1] = A @ Vs[k]
        j = min(k, n_inputs - 1)
        Vs[k + 1][:, m * j:m * (j + 1)] += B
    return Xs, Vs


def steady_input_maps(mode, spec):
    """DC maps from a held reference to (z1, z2): L_x (I-A)^-1 B + L_v etc."""
    n = mode.n
    try:
        P = np.linalg.solve(np.eye(n) - mode.A, mode.B)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("I - A is singular; mode is corrupted") from exc
    return spec.L_x @ P + spec.L_v, spec.F_x @ P + spec.F_v


class _RowFactory:
    """Constraint rows of one mode over the decision vector (x, v_0..v_T)."""

    def __init__(self, mode, spec, T, tight):
        self.mode, self.spec, self.T, self.tight = mode, spec, T, tight
        n, m = mode.n, mode.m
        self.n, self.m = n, m
        self.dim = n + m * (T + 1)
        Xs, Vs = prediction_stack(mode.A, mode.B, T + 1, T)
        # Decision-vector maps for x_hat(k), k = 0..T.
        self.S = np.concatenate([Xs, Vs], axis=2)
        self.E = np.zeros((T + 1, m, self.dim))
        for k in range(T + 1):
            self.E[k][:, n + m * k:n + m * (k + 1)] = np.eye(m)
        try:
            PB = np.linalg.solve(np.eye(n) - mode.A, mode.B)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix("I - A is singular") from exc
        self.PB = PB
        self.Y1 = spec.L_x @ PB + spec.L_v
        self.Y2 = spec.F_x @ PB + spec.F_v
        # Transient part of the tail prediction: x_hat(T) - (I-A)^-1 B v_T.
        self.tail0 = self.S[T] - PB @ self.E[T]

    def output_maps(self, step):
        """(M1, M2) with z1_hat(step) = M1 @ w and z2_hat(step) = M2 @ w."""
        spec, T = self.spec, self.T
        if step <= T:
            Sk, Ek = self.S[step], self.E[step]
            return spec.L_x @ Sk + spec.L_v @ Ek, spec.F_x @ Sk + spec.F_v @ Ek
        Ak = np.linalg.matrix_power(self.mode.A, step - T)
        tail = Ak @ self.tail0
        M1 = spec.L_x @ tail + self.Y1 @ self.E[T]
        M2 = spec.F_x @ tail + self.Y2 @ self.E[T]
        return M1, M2

    def block(self, step):
        """All constraint rows for absolute prediction step `step`."""
        M1, M2 = self.output_maps(step)
        rows, offs = [], []
        if self.spec.n_e:
            rows.append(self.spec.Z1.normals @ M1)
            offs.append(self.spec.Z1.offsets)
        if self.spec.n_c:
            rows.append(M2)
            offs.append(self.spec.Z2.offsets - self.tight.margin_at(step))
        if not rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.vstack(rows), np.concatenate(offs)

    def steady_rows(self, eps):
        """Strict steady-state admissibility of v_T (eps-ball slack)."""
        rows, offs = [], []
        ET = self.E[self.T]
        if self.spec.n_e:
            z1_shrunk = self.spec.Z1.shrink_by_ball(eps)
            rows.append(z1_shrunk.normals @ (self.Y1 @ ET))
            offs.append(z1_shrunk.offsets)
        if self.spec.n_c:
            inter = self.tight.intersection.shrink_by_ball(eps)
            rows.append(inter.normals @ (self.Y2 @ ET))
            offs.append(inter.offsets)
        if not rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.vstack(rows), np.concatenate(offs)


def default_eps(spec, tight=None, scale=1e-3):
    """eps tied to the constraint scale so Phi-bar survives rescaling."""
    vals = []
    if spec.n_e:
        norms = np.linalg.norm(spec.Z1.normals, axis=1)
        vals.extend(spec.Z1.offsets / np.where(norms > 0, norms, 1.0))
    elif tight is not None and spec.n_c:
        vals.extend(tight.intersection.offsets)
    if not vals:
        raise ValueError("cannot derive eps from an unconstrained spec")
    eps = scale * float(np.min(vals))
    if eps <= 0:
        raise ValueError("constraint sets leave no room for the eps ball")
    return eps


def mode_tightening(mode, spec, sigma0=None):
    """Tightened chance sequence under this mode's own closed loop."""
    return tightened_sequence(mode.A, mode.H_omega, spec.Z2, spec.F_x,
                              spec.H_varsigma, spec.beta, sigma0=sigma0)


def predicted_output_rows(mode, spec, k, T, tight=None):
    """Affine maps (x, v_0..v_T) -> (z1_hat(k), z2_hat(k)) at step k.

    Steps within [0, T] use the in-horizon recursion; later steps use the
    closed-form tail with v_T held constant.
    """
    if tight is None:
        tight = mode_tightening(mode, spec)
    return _RowFactory(mode, spec, T, tight).output_maps(k)


def build_phi_bar(mode, spec, T, eps=None, tight=None):
    """In-horizon constraints for steps 0..T plus strict steady rows."""
    if tight is None:
        tight = mode_tightening(mode, spec)
    if eps is None:
        eps = default_eps(spec, tight)
    fac = _RowFactory(mode, spec, T, tight)
    rows = [fac.block(s) for s in range(T + 1)]
    rows.append(fac.steady_rows(eps))
    poly = Polytope(np.vstack([r for r, _ in rows]),
                    np.concatenate([b for _, b in rows])).normalized()
    if poly.is_empty():
        raise EmptySet("no strictly steady-state admissible reference exists")
    return poly


@dataclass(frozen=True)
class AdmissibleSet:
    """Finitely determined admissible set plus its determination index."""
    set: Polytope
    horizon_T: int
    k_star: int
    eps: float
    mode_id: int

    @property
    def dim(self):
        return self.set.dim

    def contains(self, point, tol=None):
        if tol is None:
            return self.set.contains(point)
        return self.set.contains(point, tol=tol)

    def to_dict(self):
        return {"mode_id": self.mode_id, "horizon_T": self.horizon_T,
                "k_star": self.k_star, "eps": self.eps,
                "polytope": self.set.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(set=Polytope.from_dict(data["polytope"]),
                   horizon_T=int(data["horizon_T"]),
                   k_star=int(data["k_star"]),
                   eps=float(data["eps"]),
                   mode_id=int(data["mode_id"]))


def build_admissible_set(mode, spec, T, eps=None, k_cap=500, row_cap=2000,
                         sigma0=None, confirm_window=CONFIRM_WINDOW):
    """Run the set recursion until its fixed point and certify termination.

    Rows are appended lazily (only violated facets are added, which is the
    same set), and the no-cut condition is re-confirmed over a window of
    subsequent steps that also covers the settling horizon of the covariance
    recursion, since the per-step bounds vary until the tightening converges.
    """
    tight = mode_tightening(mode, spec, sigma0=sigma0)
    if eps is None:
        eps = default_eps(spec, tight)
    fac = _RowFactory(mode, spec, T, tight)
    poly = build_phi_bar(mode, spec, T, eps=eps, tight=tight)

    normals = [poly.normals]
    offsets = [poly.offsets]
    current = poly
    last_cut = 0
    j = 1
    while True:
        if j > k_cap:
            raise NotDeterminedWithinCap(
                f"no fixed point within {k_cap} recursion steps")
        step = T + j
        N, b = fac.block(step)
        block_poly = Polytope(N, b).normalized()
        N, b = block_poly.normals, block_poly.offsets
        cut_rows = []
        for row, off in zip(N, b):
            val, _ = current.support(row)
            if val > off + FEAS_TOL:
                cut_rows.append((row, off))
        if cut_rows:
            normals.append(np.array([r for r, _ in cut_rows]))
            offsets.append(np.array([o for _, o in cut_rows]))
            current = Polytope(np.vstack(normals), np.concatenate(offsets))
            last_cut = j
        settled = step >= tight.k_lyap
        if settled and (j - last_cut) >= confirm_window:
            break
        j += 1

    if current.n_rows > row_cap:
        current = current.remove_redundant_rows()
    witness = current.feasible_point()
    if not witness.feasible:
        raise EmptySet("admissible set is empty")
    return AdmissibleSet(set=current, horizon_T=T, k_star=last_cut,
                         eps=eps, mode_id=mode.mode_id)


def certify_fixed_point(aset, mode, spec, sigma0=None):
    """set_equal check of one more recursion step past k_star."""
    tight = mode_tightening(mode, spec, sigma0=sigma0)
    fac = _RowFactory(mode, spec, aset.horizon_T, tight)
    N, b = fac.block(aset.horizon_T + aset.k_star + 1)
    refined = aset.set.intersect(Polytope(N, b).normalized())
    return aset.set.set_equal(refined)


def is_steady_state_admissible(mode, spec, r, eps=None, tight=None):
    """True iff the steady image of r sits an eps-ball inside both limits."""
    if tight is None:
        tight = mode_tightening(mode, spec)
    if eps is None:
        eps = default_eps(spec, tight)
    Y1, Y2 = steady_input_maps(mode, spec)
    r = np.asarray(r, dtype=float).ravel()
    ok = True
    if spec.n_e:
        ok = ok and spec.Z1.shrink_by_ball(eps).contains(Y1 @ r)
    if spec.n_c:
        ok = ok and tight.intersection.shrink_by_ball(eps).contains(Y2 @ r)
    return bool(ok)
