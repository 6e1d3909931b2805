import math

import numpy as np
import pytest

from refgov import stochastics as st
from refgov.errors import (DimensionMismatch, EmptyTightenedSet,
                           InvalidProbability, NonPSDInput)
from refgov.polytopes import Polytope


# --- independent chi-square oracle: series CDF + bisection -----------------

def _chi2_cdf_series(x, k):
    """Regularized lower incomplete gamma via its power series."""
    a = 0.5 * k
    z = 0.5 * x
    if z <= 0:
        return 0.0
    total = 0.0
    term = math.exp(a * math.log(z) - z - math.lgamma(a + 1.0))
    n = 0
    while True:
        total += term
        n += 1
        term *= z / (a + n)
        if term < 1e-18 * max(total, 1e-300):
            return min(total, 1.0)


def _chi2_quantile_bisect(beta, k):
    lo, hi = 0.0, 1.0
    while _chi2_cdf_series(hi, k) < beta:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _chi2_cdf_series(mid, k) < beta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_chi2_quantile_against_series_oracle():
    for beta, dof in [(0.95, 1), (0.95, 2), (0.9, 4), (0.99, 3),
                      (0.5, 7), (0.975, 1)]:
        got = st.chi2_quantile(beta, dof)
        want = _chi2_quantile_bisect(beta, dof)
        assert abs(got - want) <= 1e-9 * max(1.0, want)


def test_chi2_quantile_known_values():
    assert abs(st.chi2_quantile(0.95, 1) - 3.841458820694124) < 1e-9
    assert abs(st.chi2_quantile(0.95, 2) - (-2.0 * math.log(0.05))) < 1e-10


def test_chi2_quantile_limit_and_validation():
    assert st.chi2_quantile(1e-12, 3) < 1e-3
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(InvalidProbability):
            st.chi2_quantile(bad, 2)
    with pytest.raises(InvalidProbability):
        st.chi2_quantile(0.9, 0)


def test_covariance_recursion_values():
    traj = st.propagate_covariance(np.array([[0.5]]), np.array([[1.0]]),
                                   np.array([[0.0]]), 2)
    assert np.allclose(traj.sigmas[:, 0, 0], [0.0, 1.0, 1.25])


def test_covariance_fixed_point():
    # Sigma = A^2 Sigma + H  =>  Sigma = 1 / (1 - 0.25) = 4/3
    traj, k_lyap = st.propagate_to_fixed_point(np.array([[0.5]]),
                                               np.array([[1.0]]),
                                               np.array([[0.0]]))
    assert abs(traj[len(traj) - 1][0, 0] - 4.0 / 3.0) < 1e-9
    assert k_lyap == len(traj) - 1


def test_covariance_zero_noise_stays_zero():
    traj = st.propagate_covariance(np.array([[0.5]]), np.array([[0.0]]),
                                   np.array([[0.0]]), 5)
    assert np.all(traj.sigmas == 0.0)


def test_covariance_rejects_non_psd():
    with pytest.raises(NonPSDInput):
        st.propagate_covariance(np.eye(2), -np.eye(2), np.zeros((2, 2)), 1)
    with pytest.raises(NonPSDInput):
        st.propagate_covariance(np.eye(2), np.eye(2),
                                np.array([[0.0, 1.0], [0.0, 0.0]]), 1)


def test_tighten_zero_uncertainty_is_identity():
    Z2 = Polytope.upper_bounds([5.0, 2.0])
    out = st.tighten_chance_set(Z2, np.eye(2), np.zeros((2, 2)),
                                np.zeros((2, 2)), 0.95)
    assert np.allclose(out.offsets, Z2.offsets)


def test_tighten_scalar_value():
    Z2 = Polytope.upper_bounds([5.0])
    out = st.tighten_chance_set(Z2, np.array([[1.0]]), np.array([[1.0]]),
                                np.array([[0.0]]), 0.95)
    assert abs(out.offsets[0] - (5.0 - math.sqrt(3.841458820694124))) < 1e-9


def test_tighten_monotone_in_beta():
    Z2 = Polytope.upper_bounds([5.0])
    F = np.array([[1.0]])
    sig = np.array([[0.8]])
    H = np.array([[0.0]])
    t_low = st.tighten_chance_set(Z2, F, sig, H, 0.9)
    t_high = st.tighten_chance_set(Z2, F, sig, H, 0.99)
    assert t_high.offsets[0] < t_low.offsets[0]
    assert t_low.includes(t_high)


def test_tighten_antitone_in_gamma():
    Z2 = Polytope.upper_bounds([5.0])
    F = np.array([[1.0]])
    small = st.tighten_chance_set(Z2, F, np.array([[0.2]]),
                                  np.array([[0.0]]), 0.95)
    large = st.tighten_chance_set(Z2, F, np.array([[1.5]]),
                                  np.array([[0.0]]), 0.95)
    assert large.offsets[0] < small.offsets[0]


def test_tighten_empty_when_noise_too_big():
    Z2 = Polytope.upper_bounds([0.5])
    with pytest.raises(EmptyTightenedSet):
        st.tighten_chance_set(Z2, np.array([[1.0]]), np.array([[5.0]]),
                              np.array([[0.0]]), 0.99)


def test_tighten_requires_upper_form():
    box = Polytope.box([-1.0], [1.0])
    with pytest.raises(DimensionMismatch):
        st.tighten_chance_set(box, np.array([[1.0]]), np.array([[0.1]]),
                              np.array([[0.0]]), 0.95)


def test_tightened_sequence_monotone_margins_from_zero():
    seq = st.tightened_sequence(np.array([[0.7]]), np.array([[0.3]]),
                                Polytope.upper_bounds([4.0]),
                                np.array([[1.0]]), np.array([[0.0]]), 0.95)
    margins = seq.margins[:, 0]
    assert np.all(np.diff(margins) >= -1e-12)
    assert np.allclose(seq.limit_margin, margins.max())
    assert np.allclose(seq.intersection.offsets, 4.0 - margins.max())


def test_split_prediction_values(scalar_mode_spec):
    mode, spec = scalar_mode_spec
    xs, z1, z2 = st.split_prediction(mode, spec, [0.0],
                                     np.ones((1, 1)), 10)
    # x-hat: 0, 0.5, 0.75, ... -> 1 (A = B = 0.5, v = 1 held)
    assert np.allclose(xs[:4, 0], [0.0, 0.5, 0.75, 0.875])
    assert abs(xs[-1, 0] - 1.0) < 2e-3
    assert np.allclose(z1[:, 0], xs[:, 0])
    assert z2.shape == (11, 0)


def test_split_prediction_zero_input(scalar_mode_spec):
    mode, spec = scalar_mode_spec
    xs, z1, _ = st.split_prediction(mode, spec, [0.0],
                                    np.zeros((1, 1)), 5)
    assert np.all(xs == 0.0) and np.all(z1 == 0.0)


def test_split_prediction_one_step_definition(scalar_mode_spec):
    mode, spec = scalar_mode_spec
    xs, _, _ = st.split_prediction(mode, spec, [0.4], [[0.3]], 1)
    assert np.isclose(xs[1, 0], mode.A[0, 0] * 0.4 + mode.B[0, 0] * 0.3)


def test_split_prediction_composes(scalar_mode_spec):
    mode, spec = scalar_mode_spec
    v = np.array([[0.2], [0.9], [0.1], [0.5]])
    xs, _, _ = st.split_prediction(mode, spec, [0.7], v, 6)
    xs_tail, _, _ = st.split_prediction(mode, spec, xs[2], v[2:], 4)
    assert np.allclose(xs[2:], xs_tail)


def test_prop2_coverage_monte_carlo():
    # Noise-driven model sampled directly; the tightening margin must cover
    # with at least beta - 0.02 empirical frequency at every tested step.
    A = np.array([[0.6]])
    H_omega = np.array([[0.04]])
    F = np.array([[1.0]])
    H_vs = np.array([[0.01]])
    beta = 0.9
    rng = np.random.default_rng(42)
    n_samples = 20_000
    k_max = 4
    x = np.zeros(n_samples)
    traj = st.propagate_covariance(A, H_omega, np.zeros((1, 1)), k_max)
    for k in range(1, k_max + 1):
        x = 0.6 * x + rng.normal(0.0, 0.2, size=n_samples)
        z = x + rng.normal(0.0, 0.1, size=n_samples)
        margin = st.chance_margins(F, traj[k], H_vs, beta)[0]
        coverage = np.mean(np.abs(z) <= margin)
        assert coverage >= beta - 0.02
