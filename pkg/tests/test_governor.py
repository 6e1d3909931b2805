import numpy as np
import pytest

from refgov import governor as gov
from refgov.admissible import build_admissible_set
from refgov.errors import InfeasibleStart, KappaOutOfRange
from refgov.models import ConstraintSpec, build_closed_loop
from refgov.polytopes import Polytope


def test_kappa_to_sequence_zero_holds():
    v = gov.kappa_to_sequence([1.0, -2.0], np.tile([5.0, 5.0], (3, 1)),
                              np.zeros((3, 2)))
    assert np.allclose(v, [[1.0, -2.0]] * 3)


def test_kappa_to_sequence_one_reaches_preview():
    preview = np.array([[1.0], [2.0], [0.5]])
    v = gov.kappa_to_sequence([0.0], preview, np.ones((3, 1)))
    assert np.allclose(v, preview)


def test_kappa_to_sequence_hand_recursion():
    v = gov.kappa_to_sequence([0.0], np.ones((3, 1)), 0.5 * np.ones((3, 1)))
    assert np.allclose(v[:, 0], [0.5, 0.75, 0.875])


def test_kappa_out_of_range():
    with pytest.raises(KappaOutOfRange):
        gov.kappa_to_sequence([0.0], np.ones((1, 1)), [[1.5]])
    with pytest.raises(KappaOutOfRange):
        gov.kappa_to_sequence([0.0], np.ones((1, 1)), [[-0.2]])


def test_kappa_roundtrip_random():
    rng = np.random.default_rng(4)
    for _ in range(30):
        T, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        v_prev = rng.normal(size=m)
        preview = v_prev + rng.uniform(0.5, 2.0, size=(T, m))
        kappas = rng.uniform(0.05, 0.95, size=(T, m))
        v = gov.kappa_to_sequence(v_prev, preview, kappas)
        back = gov.sequence_to_kappa(v_prev, preview, v)
        assert np.allclose(back, kappas, atol=1e-9)


def test_degenerate_gap_convention():
    # r equal to the running reference recovers kappa = 1 by convention.
    k = gov.sequence_to_kappa([1.0], np.ones((2, 1)), np.ones((2, 1)))
    assert np.allclose(k, 1.0)


def scalar_oinf(z1_hi=1.0, a=0.5, b=0.5, T=2):
    mode = build_closed_loop(1, [[a]], [[1.0]], [[1.0]], [[0.0]], [[b]],
                             [[0.0]], [[0.01]])
    spec = ConstraintSpec(
        L_x=[[1.0]], L_v=[[0.0]], Z1=Polytope.box([-z1_hi], [z1_hi]),
        F_x=np.zeros((0, 1)), F_v=np.zeros((0, 1)),
        Z2=Polytope(np.zeros((0, 0)), np.zeros(0)),
        H_zeta=[[0.0]], H_varsigma=np.zeros((0, 0)), beta=0.95,
        Z1_plus=Polytope.box([-2 * z1_hi], [2 * z1_hi]),
        Z2_plus=Polytope(np.zeros((0, 0)), np.zeros(0)), T_e=25)
    return mode, spec, build_admissible_set(mode, spec, T, eps=1e-3)


def test_plan_reaches_admissible_reference():
    mode, spec, oinf = scalar_oinf(z1_hi=10.0)
    preview = np.tile([0.5], (3, 1))
    plan = gov.plan_interval(oinf, [0.0], [0.0], preview)
    assert np.allclose(plan.kappas, 1.0, atol=1e-6)
    assert np.allclose(plan.v_seq, 0.5, atol=1e-6)
    assert plan.feasible_start


def test_plan_zero_displacement_tiebreak():
    _, _, oinf = scalar_oinf(z1_hi=10.0)
    plan = gov.plan_interval(oinf, [0.0], [0.4], np.tile([0.4], (3, 1)))
    assert np.allclose(plan.kappas, 1.0)
    assert np.allclose(plan.v_seq, 0.4)


def test_plan_blocked_progress_gives_zero_kappa():
    # A = 0: the k = 0 constraint x + v0 <= 1 with x = 1 pins v0 <= 0, and
    # each later step is pinned by its predecessor through the output map;
    # moving toward r = 1 is impossible, so every blend factor is zero.
    mode = build_closed_loop(1, [[0.0]], [[1.0]], [[1.0]], [[0.0]], [[1.0]],
                             [[0.0]], [[0.01]])
    spec = ConstraintSpec(
        L_x=[[1.0]], L_v=[[1.0]], Z1=Polytope.box([-1.0], [1.0]),
        F_x=np.zeros((0, 1)), F_v=np.zeros((0, 1)),
        Z2=Polytope(np.zeros((0, 0)), np.zeros(0)),
        H_zeta=[[0.0]], H_varsigma=np.zeros((0, 0)), beta=0.95,
        Z1_plus=Polytope.box([-2.0], [2.0]),
        Z2_plus=Polytope(np.zeros((0, 0)), np.zeros(0)), T_e=25)
    oinf = build_admissible_set(mode, spec, 0, eps=1e-6)
    plan = gov.plan_interval(oinf, [1.0], [0.0], np.array([[1.0]]))
    assert abs(plan.kappas[0, 0]) < 1e-7
    assert abs(plan.v_seq[0, 0]) < 1e-7


def test_plan_requires_feasible_start():
    _, _, oinf = scalar_oinf(z1_hi=1.0)
    with pytest.raises(InfeasibleStart):
        gov.plan_interval(oinf, [5.0], [0.0], np.tile([0.5], (3, 1)))


def test_plan_monotone_progress_invariant(bench):
    oinf = bench.oinf(1, 5)
    preview = np.tile([4.8, 1.8], (6, 1))
    plan = gov.plan_interval(oinf, np.zeros(5), np.zeros(2), preview)
    prev = np.zeros(2)
    for i in range(6):
        for j in range(2):
            assert (abs(preview[i, j] - plan.v_seq[i, j])
                    <= abs(preview[i, j] - prev[j]) + 1e-9)
        prev = plan.v_seq[i]


def test_plan_validity_membership(bench):
    oinf = bench.oinf(1, 5)
    preview = np.tile([4.8, 1.8], (6, 1))
    plan = gov.plan_interval(oinf, np.zeros(5), np.zeros(2), preview)
    joint = np.concatenate([np.zeros(5), plan.v_seq.ravel()])
    assert oinf.set.contains(joint, tol=1e-6)


def test_hold_decision():
    _, _, oinf = scalar_oinf(z1_hi=1.0)
    hold = gov.handle_infeasible(oinf, [5.0], [0.3])
    assert hold.recheck_next_step
    assert np.allclose(hold.held_v, [0.3])
    with pytest.raises(ValueError):
        gov.handle_infeasible(oinf, [0.0], [0.0])
