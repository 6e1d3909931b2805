import numpy as np
import pytest

from refgov import recovery as rec
from refgov.admissible import build_admissible_set
from refgov.errors import InfeasibleRecovery
from refgov.models import ConstraintSpec, build_closed_loop
from refgov.polytopes import Polytope
from refgov.stochastics import split_prediction


@pytest.fixture(scope="module")
def bench_problem(bench):
    return rec.make_recovery_problem(bench.mode(2), bench.spec(2), 13,
                                     bench.oinf(2, 5))


def scalar_problem(z_hi=1.0, z_plus=2.0, T_r=4):
    mode = build_closed_loop(1, [[0.6]], [[1.0]], [[1.0]], [[0.0]], [[0.4]],
                             [[0.0]], [[0.01]])
    spec = ConstraintSpec(
        L_x=[[1.0]], L_v=[[0.0]], Z1=Polytope.box([-z_hi], [z_hi]),
        F_x=np.zeros((0, 1)), F_v=np.zeros((0, 1)),
        Z2=Polytope(np.zeros((0, 0)), np.zeros(0)),
        H_zeta=[[0.0]], H_varsigma=np.zeros((0, 0)), beta=0.95,
        Z1_plus=Polytope.box([-z_plus], [z_plus]),
        Z2_plus=Polytope(np.zeros((0, 0)), np.zeros(0)), T_e=25)
    terminal = build_admissible_set(mode, spec, 1, eps=1e-3)
    return mode, spec, rec.make_recovery_problem(mode, spec, T_r, terminal)


def test_self_recovery_from_projection(bench, bench_problem):
    # Any admissible joint state is recoverable with relaxed sets.
    oinf = bench.oinf(2, 5)
    w = oinf.set.feasible_point()
    x = w.point[:5]
    assert rec.in_recoverable_set(bench_problem, x).feasible


def test_far_state_not_recoverable(bench_problem):
    x = np.array([1e5, 0.0, 1e5, 0.0, 0.0])
    assert not rec.in_recoverable_set(bench_problem, x).feasible


def test_plan_holds_reference_when_trivial(bench, bench_problem):
    # Starting at the steady state for r, the cheapest plan is v = r.
    mode = bench.mode(2)
    r = np.array([4.8, 1.8])
    x_ss = np.linalg.solve(np.eye(5) - mode.A, mode.B @ r)
    plan = rec.plan_recovery(bench_problem, x_ss, r)
    assert np.allclose(plan, r[None, :], atol=1e-5)


def test_plan_invariant_under_weight_scaling(bench, bench_problem):
    x = np.array([10.0, 0.5, 4.0, 0.2, 0.0])
    r = np.array([4.8, 1.8])
    scaled = rec.make_recovery_problem(bench.mode(2), bench.spec(2), 13,
                                       bench.oinf(2, 5),
                                       R=5.0 * np.eye(2))
    p1 = rec.plan_recovery(bench_problem, x, r)
    p2 = rec.plan_recovery(scaled, x, r)
    assert np.allclose(p1, p2, atol=1e-4)


def test_infeasible_recovery_raises(bench_problem):
    with pytest.raises(InfeasibleRecovery):
        rec.plan_recovery(bench_problem,
                          np.array([1e5, 0.0, 1e5, 0.0, 0.0]),
                          np.array([4.8, 1.8]))


def test_binding_constraint_against_grid_search():
    # Scalar instance where tracking r = 1.5 is blocked by the relaxed
    # output bound; verify the QP against a dense grid over the plan.
    mode, spec, problem = scalar_problem(z_hi=0.4, z_plus=0.5, T_r=2)
    x0 = np.array([0.0])
    r = np.array([1.5])
    plan = rec.plan_recovery(problem, x0, r).ravel()
    b_eff = problem.b - problem.A_x @ x0
    best, best_cost = None, np.inf
    grid = np.linspace(-1.5, 1.5, 141)
    tails = np.linspace(-1.5, 1.5, 31)
    for v0 in grid:
        for v1 in grid:
            cost = (v0 - 1.5) ** 2 + (v1 - 1.5) ** 2
            if cost >= best_cost:
                continue
            for tail in tails:
                u = np.array([v0, v1, tail])
                if np.all(problem.A_u @ u <= b_eff + 1e-9):
                    best, best_cost = (v0, v1), cost
                    break
    assert best is not None
    qp_cost = float(np.sum((plan - 1.5) ** 2))
    assert qp_cost <= best_cost + 1e-3
    assert np.allclose(plan, best, atol=0.05)
    assert qp_cost > 0.0


def test_monotone_in_recovery_time(bench):
    short = rec.make_recovery_problem(bench.mode(2), bench.spec(2), 6,
                                      bench.oinf(2, 5))
    longer = rec.make_recovery_problem(bench.mode(2), bench.spec(2), 12,
                                       bench.oinf(2, 5))
    rng = np.random.default_rng(12)
    for _ in range(10):
        x = np.zeros(5)
        x[:4] = rng.normal(0.0, 8.0, 4)
        if rec.in_recoverable_set(short, x).feasible:
            assert rec.in_recoverable_set(longer, x).feasible


def test_monotone_in_relaxation():
    _, _, roomy = scalar_problem(z_hi=0.4, z_plus=1.0, T_r=3)
    _, _, tight = scalar_problem(z_hi=0.4, z_plus=0.5, T_r=3)
    for x in np.linspace(-0.9, 0.9, 13):
        if rec.in_recoverable_set(tight, [x]).feasible:
            assert rec.in_recoverable_set(roomy, [x]).feasible


def test_plan_lands_in_terminal_projection(bench, bench_problem):
    mode = bench.mode(2)
    oinf = bench.oinf(2, 5)
    x = np.array([12.0, 1.0, 6.0, -0.5, 0.0])
    r = np.array([4.8, 1.8])
    plan = rec.plan_recovery(bench_problem, x, r)
    xs, _, _ = split_prediction(mode, bench.spec(2), x, plan, 13)
    end = np.concatenate([xs[13], plan[-1]])
    assert oinf.set.feasible_partial_fix(end).feasible


def test_rejects_bad_timing(bench):
    with pytest.raises(ValueError):
        rec.make_recovery_problem(bench.mode(2), bench.spec(2), 0,
                                  bench.oinf(2, 5))
    with pytest.raises(ValueError):
        rec.make_recovery_problem(bench.mode(2), bench.spec(2), 25,
                                  bench.oinf(2, 5))


def test_containment_report(bench, bench_problem):
    report = rec.check_recoverability_containment(bench.oinf(1, 5),
                                                  bench_problem,
                                                  n_check=60, seed=1)
    assert report.n_checked == 60
    assert report.ok, f"violations: {len(report.violations)}"
