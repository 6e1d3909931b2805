"""Kalman-filter bank, Bayesian mode posteriors, and the detection bound.

One filter runs per hypothesized mode, each built on the closed loop that
the *currently applied* gains would produce on that mode's open-loop
matrices.  Residual likelihoods drive the posterior over hypotheses; the
detector picks the posterior argmax at the end of each detection interval.
The misidentification probability of that detector admits a computable
upper bound: a prior-weighted sum of pairwise Gaussian-overlap terms
exp(-rho) over the stacked predicted output sequences, which is an explicit
function of the applied reference sequence and can therefore be optimized.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve

from .errors import (AllZeroLikelihoods, IntervalIncomplete, NonPDInput,
                     SingularResidualCovariance)
from .admissible import prediction_stack
from .stochastics import propagate_covariance

POSTERIOR_FLOOR = 1e-6


@dataclass(frozen=True)
class FilterState:
    hypothesis_mode: int
    x_hat: np.ndarray
    P: np.ndarray
    last_residual: np.ndarray | None = None
    last_residual_cov: np.ndarray | None = None
    last_likelihood: float = 1.0
    last_log_likelihood: float = 0.0


def hypothesis_loop(graph, hyp_id, gains_mode):
    """Closed loop the current gains induce on hypothesis hyp_id's plant."""
    hyp = graph.mode(hyp_id)
    A = hyp.A_o + hyp.B_o @ gains_mode.K
    B = hyp.B_o @ gains_mode.G
    return A, B, hyp.H_omega


def kalman_step(filt, A, B, H_omega, C, H_xi, v_applied, y_meas):
    """One predict/update cycle; returns the updated filter state."""
    x_pred = A @ filt.x_hat + B @ np.asarray(v_applied, dtype=float).ravel()
    P_pred = A @ filt.P @ A.T + H_omega
    S = C @ P_pred @ C.T + H_xi
    try:
        chol = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularResidualCovariance(
            "residual covariance not PD; H_xi must be positive definite"
        ) from exc
    residual = np.asarray(y_meas, dtype=float).ravel() - C @ x_pred
    gain = cho_solve(chol, C @ P_pred).T
    x_new = x_pred + gain @ residual
    P_new = (np.eye(P_pred.shape[0]) - gain @ C) @ P_pred
    P_new = 0.5 * (P_new + P_new.T)
    m = residual.size
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    maha = float(residual @ cho_solve(chol, residual))
    loglik = -0.5 * (m * math.log(2.0 * math.pi) + logdet + maha)
    return replace(filt, x_hat=x_new, P=P_new, last_residual=residual,
                   last_residual_cov=S, last_likelihood=math.exp(min(loglik,
                                                                     700.0)),
                   last_log_likelihood=loglik)


def posterior_update(posteriors, likelihoods, floor=POSTERIOR_FLOOR):
    """Bayes update p_i' ~ p_i * l_i with a lockout-preventing floor."""
    p = np.asarray(posteriors, dtype=float)
    lik = np.asarray(likelihoods, dtype=float)
    if np.any(lik < 0):
        raise ValueError("likelihoods must be nonnegative")
    if not np.any(lik > 0):
        raise AllZeroLikelihoods("all hypothesis likelihoods vanished")
    p = p * lik
    p = p / p.sum()
    p = np.maximum(p, floor)
    p = p / p.sum()
    return np.maximum(p, floor)


def _log_posterior_update(log_post, logliks, floor=POSTERIOR_FLOOR):
    lp = log_post + logliks
    lp = lp - lp.max()
    p = np.exp(lp)
    p = p / p.sum()
    p = np.maximum(p, floor)
    p = p / p.sum()
    return np.maximum(p, floor)


@dataclass(frozen=True)
class MmaeState:
    """Filter bank over {current mode} union its successors."""
    filters: tuple
    posteriors: np.ndarray
    window: int
    T_d: int
    gains_mode_id: int

    @property
    def hypothesis_ids(self):
        return [f.hypothesis_mode for f in self.filters]


def make_bank(graph, believed_mode_id, x0, sigma0, T_d):
    """Fresh bank at a detection-interval start (posteriors reset to priors)."""
    hyp_ids = sorted({believed_mode_id, *graph.successors_of(believed_mode_id)})
    priors = np.array([graph.prior_of(h) for h in hyp_ids], dtype=float)
    priors = priors / priors.sum()
    x0 = np.asarray(x0, dtype=float).ravel()
    filters = tuple(FilterState(hypothesis_mode=h, x_hat=x0.copy(),
                                P=np.array(sigma0, dtype=float))
                    for h in hyp_ids)
    return MmaeState(filters=filters, posteriors=priors, window=0, T_d=T_d,
                     gains_mode_id=believed_mode_id)


def bank_step(state, graph, v_applied, y_meas, floor=POSTERIOR_FLOOR):
    """Advance every filter one step and refresh the posterior."""
    gains_mode = graph.mode(state.gains_mode_id)
    new_filters = []
    logliks = np.empty(len(state.filters))
    for i, filt in enumerate(state.filters):
        A, B, H_omega = hypothesis_loop(graph, filt.hypothesis_mode,
                                        gains_mode)
        nf = kalman_step(filt, A, B, H_omega, gains_mode.C, gains_mode.H_xi,
                         v_applied, y_meas)
        new_filters.append(nf)
        logliks[i] = nf.last_log_likelihood
    post = _log_posterior_update(np.log(state.posteriors), logliks, floor)
    return replace(state, filters=tuple(new_filters), posteriors=post,
                   window=state.window + 1)


def detect_mode(state):
    """Posterior argmax at the end of a detection interval."""
    if state.window != state.T_d:
        raise IntervalIncomplete(
            f"window {state.window} has not reached T_d={state.T_d}")
    return state.filters[int(np.argmax(state.posteriors))].hypothesis_mode


def bhattacharyya_rho(eta_a, eta_b, psi_a, psi_b):
    """Pairwise Gaussian separation between two output-sequence models."""
    eta_a = np.asarray(eta_a, dtype=float).ravel()
    eta_b = np.asarray(eta_b, dtype=float).ravel()
    psi_a = np.asarray(psi_a, dtype=float)
    psi_b = np.asarray(psi_b, dtype=float)
    for name, psi in (("psi_a", psi_a), ("psi_b", psi_b)):
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError as exc:
            raise NonPDInput(f"{name} must be positive definite") from exc
    avg = 0.5 * (psi_a + psi_b)
    diff = eta_a - eta_b
    quad = 0.25 * float(diff @ np.linalg.solve(psi_a + psi_b, diff))
    _, logdet_avg = np.linalg.slogdet(avg)
    _, logdet_a = np.linalg.slogdet(psi_a)
    _, logdet_b = np.linalg.slogdet(psi_b)
    return max(0.0, quad + 0.5 * (logdet_avg - 0.5 * (logdet_a + logdet_b)))


class DetectionBoundModel:
    """Evaluates the misidentification bound as a function of the reference
    sequence applied over the detection interval."""

    def __init__(self, graph, current_mode_id, x_t, T_d, sigma0=None):
        gains_mode = graph.mode(current_mode_id)
        hyp_ids = sorted({current_mode_id,
                          *graph.successors_of(current_mode_id)})
        priors = np.array([graph.prior_of(h) for h in hyp_ids])
        priors = priors / priors.sum()
        x_t = np.asarray(x_t, dtype=float).ravel()
        C = gains_mode.C
        m = C.shape[0]
        n = gains_mode.n
        if sigma0 is None:
            sigma0 = np.zeros((n, n))
        self.hyp_ids = hyp_ids
        self.priors = priors
        self.T_d = T_d
        self.m = m
        self.n_dec = m * T_d
        self.maps = []      # eta = N @ vec(v) + c per hypothesis
        self.psis = []
        for h in hyp_ids:
            A, B, H_omega = hypothesis_loop(graph, h, gains_mode)
            Xs, Vs = prediction_stack(A, B, T_d, T_d)
            N = np.vstack([C @ Vs[k] for k in range(T_d + 1)])
            c = np.concatenate([C @ (Xs[k] @ x_t) for k in range(T_d + 1)])
            sig = propagate_covariance(A, H_omega, sigma0, T_d)
            blocks = [C @ sig[k] @ C.T + gains_mode.H_xi
                      for k in range(T_d + 1)]
            psi = block_diag(*blocks)
            try:
                np.linalg.cholesky(psi)
            except np.linalg.LinAlgError as exc:
                raise NonPDInput("output-sequence covariance not PD") from exc
            self.maps.append((N, c))
            self.psis.append(psi)
        self.pairs = []
        for a in range(len(hyp_ids)):
            for b in range(a + 1, len(hyp_ids)):
                Na, ca = self.maps[a]
                Nb, cb = self.maps[b]
                total = self.psis[a] + self.psis[b]
                W = np.linalg.inv(total)
                _, logdet_avg = np.linalg.slogdet(0.5 * total)
                _, logdet_a = np.linalg.slogdet(self.psis[a])
                _, logdet_b = np.linalg.slogdet(self.psis[b])
                logdet_term = 0.5 * (logdet_avg
                                     - 0.5 * (logdet_a + logdet_b))
                weight = math.sqrt(priors[a] * priors[b])
                self.pairs.append((Na - Nb, ca - cb, W, logdet_term, weight))
        self.diagonal = 0.5 * float(np.sum(priors))

    def __call__(self, v_seq):
        v = np.asarray(v_seq, dtype=float).ravel()
        total = self.diagonal
        for D, d, W, logdet_term, weight in self.pairs:
            delta = D @ v + d
            rho = 0.25 * float(delta @ W @ delta) + logdet_term
            total += weight * math.exp(-rho)
        return total

    def gradient(self, v_seq):
        v = np.asarray(v_seq, dtype=float).ravel()
        grad = np.zeros_like(v)
        for D, d, W, logdet_term, weight in self.pairs:
            delta = D @ v + d
            rho = 0.25 * float(delta @ W @ delta) + logdet_term
            grad += weight * math.exp(-rho) * (-0.5) * (D.T @ (W @ delta))
        return grad


def detection_bound(graph, current_mode_id, x_t, v_seq, T_d, sigma0=None):
    """Bound value for v_seq plus a closure for re-evaluation over v_seq."""
    model = DetectionBoundModel(graph, current_mode_id, x_t, T_d,
                                sigma0=sigma0)
    return model(v_seq), model
