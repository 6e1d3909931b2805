"""Covariance propagation, chi-square quantiles, chance-constraint tightening.

The noise acting on the chance-constrained output z2 accumulates through the
closed loop; the per-step tightening removes a confidence margin from each
upper bound so that enforcing the tightened constraint on the noise-free
prediction enforces the chance constraint on the realized output.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import (DimensionMismatch, EmptyTightenedSet, InvalidProbability,
                     NonPSDInput)
from .polytopes import Polytope

PSD_TOL = 1e-10


def _check_psd(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonPSDInput(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-9):
        raise NonPSDInput(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    if w.size and w.min() < -PSD_TOL * max(1.0, abs(w.max())):
        raise NonPSDInput(f"{name} has negative eigenvalue {w.min():.3e}")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class CovarianceTrajectory:
    """Sigma(0..k_max) under Sigma(k+1) = A Sigma(k) A^T + H_omega."""
    sigmas: np.ndarray  # (k_max+1, n, n)

    def __len__(self):
        return self.sigmas.shape[0]

    def __getitem__(self, k):
        return self.sigmas[k]


def propagate_covariance(A, H_omega, sigma0, k_max):
    """Propagate the state covariance k_max steps forward."""
    A = np.asarray(A, dtype=float)
    H = _check_psd(H_omega, "H_omega")
    sigma = _check_psd(sigma0, "sigma0")
    out = np.empty((k_max + 1,) + sigma.shape)
    out[0] = sigma
    for k in range(k_max):
        sigma = A @ sigma @ A.T + H
        sigma = 0.5 * (sigma + sigma.T)
        out[k + 1] = sigma
    return CovarianceTrajectory(out)


def propagate_to_fixed_point(A, H_omega, sigma0, tol=1e-10, k_cap=100_000):
    """Propagate until successive covariances differ by at most tol.

    Returns (trajectory, k_lyap) where k_lyap is the first index with
    ||Sigma(k+1) - Sigma(k)|| <= tol in the Frobenius norm.
    """
    A = np.asarray(A, dtype=float)
    H = _check_psd(H_omega, "H_omega")
    sigma = _check_psd(sigma0, "sigma0")
    sigmas = [sigma]
    for k in range(k_cap):
        nxt = A @ sigma @ A.T + H
        nxt = 0.5 * (nxt + nxt.T)
        sigmas.append(nxt)
        if np.linalg.norm(nxt - sigma) <= tol:
            return CovarianceTrajectory(np.array(sigmas)), k + 1
        sigma = nxt
    raise NonPSDInput("covariance recursion did not settle; A not Schur?")


def chi2_quantile(beta, dof):
    """Inverse of the chi-square CDF with `dof` degrees of freedom."""
    if not (0.0 < beta < 1.0):
        raise InvalidProbability(f"beta must lie in (0,1), got {beta}")
    if dof < 1 or int(dof) != dof:
        raise InvalidProbability(f"dof must be a positive integer, got {dof}")
    return float(chi2.ppf(beta, int(dof)))


def chance_margins(F_x, sigma_k, H_varsigma, beta):
    """Per-component margin sqrt(quantile * Gamma_ii) removed from z2 bounds."""
    F_x = np.atleast_2d(np.asarray(F_x, dtype=float))
    n_c = F_x.shape[0]
    if n_c == 0:
        return np.zeros(0)
    gamma = F_x @ np.asarray(sigma_k, dtype=float) @ F_x.T
    gamma = gamma + _check_psd(H_varsigma, "H_varsigma")
    diag = np.clip(np.diag(gamma), 0.0, None)
    return np.sqrt(chi2_quantile(beta, n_c) * diag)


def _require_upper_form(Z2):
    if Z2.n_rows != Z2.dim or not np.array_equal(Z2.normals, np.eye(Z2.dim)):
        raise DimensionMismatch("Z2 must be in axis-aligned upper-bound form")


def tighten_chance_set(Z2, F_x, sigma_k, H_varsigma, beta):
    """Shrink an upper-bound polytope by the confidence margin of step k."""
    _require_upper_form(Z2)
    margins = chance_margins(F_x, sigma_k, H_varsigma, beta)
    if margins.size != Z2.n_rows:
        raise DimensionMismatch(
            f"{Z2.n_rows} bounds vs {margins.size} z2 components")
    tightened = Z2.offsets - margins
    if np.any(tightened < 0):
        raise EmptyTightenedSet(
            "tightened bound fell below zero; beta incompatible with noise")
    return Polytope(Z2.normals, tightened)


@dataclass(frozen=True)
class TightenedConstraintSequence:
    """Z2 tightened per step plus the limiting intersection over all steps."""
    per_step: list           # Polytope for k = 0..k_lyap
    intersection: Polytope   # limit of the tightening sequence
    margins: np.ndarray      # (k_lyap+1, n_c) margins per step
    limit_margin: np.ndarray
    k_lyap: int

    def margin_at(self, k):
        """Margin for step k; beyond the computed horizon use the limit."""
        if k < self.margins.shape[0]:
            return self.margins[k]
        return self.limit_margin


def tightened_sequence(A, H_omega, Z2, F_x, H_varsigma, beta, sigma0=None,
                       fix_tol=1e-10):
    """Per-step tightened sets and their limiting intersection.

    The intersection uses the elementwise maximum margin over the horizon on
    which the covariance recursion has settled; for sigma0 = 0 the margins
    are monotone, so this equals the fixed-point tightening.
    """
    _require_upper_form(Z2)
    n = np.asarray(A).shape[0]
    if sigma0 is None:
        sigma0 = np.zeros((n, n))
    traj, k_lyap = propagate_to_fixed_point(A, H_omega, sigma0, tol=fix_tol)
    margins = np.array([chance_margins(F_x, traj[k], H_varsigma, beta)
                        for k in range(len(traj))])
    margins = margins.reshape(len(traj), -1)
    limit_margin = margins.max(axis=0) if margins.size else np.zeros(0)
    limit_offsets = Z2.offsets - limit_margin
    if np.any(limit_offsets < 0):
        raise EmptyTightenedSet(
            "limiting tightened set lost the origin; reduce beta or noise")
    per_step = [Polytope(Z2.normals, Z2.offsets - margins[k])
                for k in range(len(traj))]
    intersection = Polytope(Z2.normals, limit_offsets)
    return TightenedConstraintSequence(per_step, intersection, margins,
                                       limit_margin, k_lyap)


def split_prediction(mode, spec, x_t, v_seq, k_max):
    """Noise-free prediction (x_hat, z1_hat, z2_hat) for k = 0..k_max.

    v_seq supplies v(t+k) row-wise; its last value is held constant beyond
    its length.  The paired noise-driven model is what simulate_step samples.
    """
    x = np.asarray(x_t, dtype=float).ravel()
    if x.size != mode.A.shape[0]:
        raise DimensionMismatch(f"state dim {x.size} vs {mode.A.shape[0]}")
    v_seq = np.atleast_2d(np.asarray(v_seq, dtype=float))
    if v_seq.shape[1] != mode.B.shape[1]:
        raise DimensionMismatch(
            f"reference dim {v_seq.shape[1]} vs {mode.B.shape[1]}")
    xs = np.empty((k_max + 1, x.size))
    vs = np.empty((k_max + 1, v_seq.shape[1]))
    xs[0] = x
    for k in range(k_max + 1):
        vs[k] = v_seq[min(k, v_seq.shape[0] - 1)]
        if k < k_max:
            xs[k + 1] = mode.A @ xs[k] + mode.B @ vs[k]
    z1 = xs @ spec.L_x.T + vs @ spec.L_v.T
    z2 = xs @ spec.F_x.T + vs @ spec.F_v.T
    return xs, z1, z2
