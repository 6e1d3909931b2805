import numpy as np
import pytest

from refgov import benchmark as bm
from refgov.admissible import build_admissible_set


class Bench:
    """Benchmark artifacts shared across the test session."""

    def __init__(self):
        self.graph = bm.build_graph()
        self.spec_map = bm.build_spec_map()
        self.ftc_cfg = bm.build_ftc_config()
        self.scenarios = bm.build_scenarios()
        self.set_cache = {}

    def mode(self, mid):
        return self.graph.mode(mid)

    def spec(self, mid):
        return self.spec_map[mid]

    def oinf(self, mid, T):
        key = (mid, T, 1.0)
        if key not in self.set_cache:
            self.set_cache[key] = build_admissible_set(
                self.mode(mid), self.spec(mid), T)
        return self.set_cache[key]


@pytest.fixture(scope="session")
def bench():
    return Bench()


@pytest.fixture(scope="session")
def scalar_mode_spec():
    """Tiny scalar system used by several modules' tests."""
    from refgov.models import ConstraintSpec, build_closed_loop
    from refgov.polytopes import Polytope

    mode = build_closed_loop(1, [[0.5]], [[1.0]], [[1.0]], [[0.0]], [[0.5]],
                             [[0.0]], [[0.01]])
    spec = ConstraintSpec(
        L_x=[[1.0]], L_v=[[0.0]], Z1=Polytope.box([-1.0], [1.0]),
        F_x=np.zeros((0, 1)), F_v=np.zeros((0, 1)),
        Z2=Polytope(np.zeros((0, 0)), np.zeros(0)),
        H_zeta=[[0.0]], H_varsigma=np.zeros((0, 0)), beta=0.95,
        Z1_plus=Polytope.box([-2.0], [2.0]),
        Z2_plus=Polytope(np.zeros((0, 0)), np.zeros(0)), T_e=25)
    return mode, spec
