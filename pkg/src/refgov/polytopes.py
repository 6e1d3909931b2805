"""Halfspace polytopes and the linear-program queries built on them.

A polytope is stored as {y : normals @ y <= offsets}.  All set queries
(emptiness, inclusion, partial-fix feasibility, support) reduce to small
dense LPs solved with HiGHS; nothing here ever enumerates vertices.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, SolverError, UnboundedSet

# Feasibility / inclusion tolerance, fixed module-wide for reproducibility.
FEAS_TOL = 1e-8
# Pointwise membership tolerance (closed-set convention).
CONTAIN_TOL = 1e-9

_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-8}


def _lp(c, A_ub, b_ub):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(None, None),
                  method="highs", options=_LP_OPTIONS)
    if res.status == 4:
        # Simplex can stall on degenerate or badly scaled instances; the
        # interior-point path resolves those.
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(None, None),
                      method="highs-ipm")
    return res


@dataclass(frozen=True)
class FeasibilityWitness:
    feasible: bool
    point: np.ndarray | None = None

    def __bool__(self):
        return self.feasible


class Polytope:
    """Convex set in halfspace form, immutable after construction."""

    def __init__(self, normals, offsets):
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float).ravel()
        if normals.shape[0] != offsets.shape[0]:
            raise DimensionMismatch(
                f"{normals.shape[0]} rows vs {offsets.shape[0]} offsets")
        if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(offsets))):
            raise ValueError("polytope data must be finite")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        self.normals = normals
        self.offsets = offsets

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def n_rows(self):
        return self.normals.shape[0]

    @classmethod
    def box(cls, lower, upper):
        """Axis-aligned box {lower <= y <= upper}."""
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        d = lower.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def upper_bounds(cls, bounds):
        """Prop.-2 form {y : y_i <= bounds_i}."""
        bounds = np.asarray(bounds, dtype=float).ravel()
        return cls(np.eye(bounds.size), bounds)

    def _check_dim(self, other_dim):
        if self.dim != other_dim:
            raise DimensionMismatch(f"dim {self.dim} vs {other_dim}")

    def contains(self, y, tol=CONTAIN_TOL):
        y = np.asarray(y, dtype=float).ravel()
        self._check_dim(y.size)
        return bool(np.all(self.normals @ y <= self.offsets + tol))

    def intersect(self, other):
        """Row concatenation; membership iff member of both."""
        self._check_dim(other.dim)
        return Polytope(np.vstack([self.normals, other.normals]),
                        np.concatenate([self.offsets, other.offsets]))

    def shrink_by_ball(self, eps):
        """Pontryagin difference with the open euclidean ball of radius eps."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        row_norms = np.linalg.norm(self.normals, axis=1)
        return Polytope(self.normals, self.offsets - eps * row_norms)

    def feasible_point(self):
        """A point satisfying all rows, or a negative witness."""
        if self.n_rows == 0:
            return FeasibilityWitness(True, np.zeros(self.dim))
        res = _lp(np.zeros(self.dim), self.normals, self.offsets)
        if res.status == 2:
            return FeasibilityWitness(False)
        if res.status != 0:
            raise SolverError(f"feasibility LP failed: {res.message}")
        return FeasibilityWitness(True, np.asarray(res.x))

    def is_empty(self):
        return not self.feasible_point().feasible

    def support(self, direction):
        """max direction @ y over the set; returns (value, argmax)."""
        direction = np.asarray(direction, dtype=float).ravel()
        self._check_dim(direction.size)
        res = _lp(-direction, self.normals, self.offsets)
        if res.status == 3:
            raise UnboundedSet("support LP unbounded")
        if res.status == 2:
            raise SolverError("support LP over empty set")
        if res.status != 0:
            raise SolverError(f"support LP failed: {res.message}")
        return -res.fun, np.asarray(res.x)

    def includes(self, other, tol=FEAS_TOL):
        """True iff other is a subset of self, decided by one LP per row."""
        self._check_dim(other.dim)
        for row, off in zip(self.normals, self.offsets):
            val, _ = other.support(row)
            if val > off + tol:
                return False
        return True

    def set_equal(self, other, tol=FEAS_TOL):
        """Mutual inclusion via violation-maximizing LPs."""
        self._check_dim(other.dim)
        self_empty, other_empty = self.is_empty(), other.is_empty()
        if self_empty or other_empty:
            return self_empty and other_empty
        return self.includes(other, tol) and other.includes(self, tol)

    def feasible_partial_fix(self, fixed_prefix):
        """Decide whether the leading coordinates can be completed.

        Realizes projection membership ((prefix) in Proj of the set) without
        computing the projection: the free coordinates are optimized away by
        a single feasibility LP.
        """
        prefix = np.asarray(fixed_prefix, dtype=float).ravel()
        k = prefix.size
        if k > self.dim:
            raise DimensionMismatch(f"prefix {k} longer than dim {self.dim}")
        residual = self.offsets - self.normals[:, :k] @ prefix
        if k == self.dim:
            ok = bool(np.all(residual >= -FEAS_TOL))
            return FeasibilityWitness(ok, prefix if ok else None)
        free = self.normals[:, k:]
        res = _lp(np.zeros(self.dim - k), free, residual)
        if res.status == 2:
            return FeasibilityWitness(False)
        if res.status != 0:
            raise SolverError(f"partial-fix LP failed: {res.message}")
        return FeasibilityWitness(True, np.concatenate([prefix, res.x]))

    def normalized(self, vacuous_offset=1e9):
        """Rows scaled to unit norm, with vacuous rows dropped.

        A row is vacuous when it is (numerically) zero with a nonnegative
        offset, or when its normalized offset is so large that it cannot
        bind at any representable operating scale; such rows arise from
        floating-point cancellation in deep prediction tails and would
        otherwise poison the LP scaling.  A zero row with a negative offset
        encodes infeasibility and is kept so emptiness checks see it.
        """
        norms = np.linalg.norm(self.normals, axis=1)
        zero = norms <= 1e-300
        scaled_off = np.where(zero, self.offsets,
                              self.offsets / np.where(zero, 1.0, norms))
        keep = ~((zero | (scaled_off > vacuous_offset)) & (self.offsets >= 0))
        norms = np.where(zero, 1.0, norms)
        return Polytope(self.normals[keep] / norms[keep, None],
                        self.offsets[keep] / norms[keep])

    def remove_redundant_rows(self, tol=FEAS_TOL):
        """Drop rows implied by the others (one LP per row)."""
        normals = self.normals.copy()
        offsets = self.offsets.copy()
        keep = np.ones(len(offsets), dtype=bool)
        for i in range(len(offsets)):
            keep[i] = False
            others = normals[keep]
            other_off = offsets[keep]
            if others.shape[0] == 0:
                keep[i] = True
                continue
            # Bound the LP by the candidate row itself to avoid unboundedness.
            A = np.vstack([others, normals[i][None, :]])
            b = np.concatenate([other_off, [offsets[i] + 1.0]])
            res = _lp(-normals[i], A, b)
            if res.status != 0 or -res.fun > offsets[i] + tol:
                keep[i] = True
        return Polytope(normals[keep], offsets[keep])

    def to_dict(self):
        return {"normals": self.normals.tolist(),
                "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["normals"]), np.array(data["offsets"]))

    def __repr__(self):
        return f"Polytope({self.n_rows} rows, dim {self.dim})"
