"""Set-membership feasible sets for bilinear systems with box-bounded noise.

With ``||w_t||_inf <= w_max`` the feasible set
``{Theta : ||x_{t+1} - Theta z_t||_inf <= w_max for all t}`` is a product of
one polytope per output row::

    z_t . theta_i <= x_{t+1}[i] + w_max
   -z_t . theta_i <= -x_{t+1}[i] + w_max

intersected here with a prior box ``||theta_i||_inf <= R0`` that keeps every
LP bounded. Because the set is a product, its squared Frobenius diameter is
the sum of the squared row diameters.

Constraint order is fixed: the ``2 d`` prior-box rows come first (``+e_j``
then ``-e_j`` for each coordinate ``j``), followed by the ``(+, -)`` pair for
each sample in time order. Appending samples therefore never renumbers
existing constraints.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import LP_FEAS_TOL
from .lp import DenseSimplex, LPError, LpOutcome

DEFAULT_PRIOR_R0 = 10.0
MEMBERSHIP_TOL = 1e-9


class InfeasibleSetError(RuntimeError):
    """The feasible set is empty, which means the noise bound is misspecified."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


def _box(d: int, R0: float):
    eye = np.eye(d)
    A = np.empty((2 * d, d))
    A[0::2] = eye
    A[1::2] = -eye
    return A, np.full(2 * d, float(R0))


@dataclass(frozen=True)
class RowPolytope:
    """Halfspaces ``A @ theta <= b`` for one row of the parameter matrix."""

    A: np.ndarray
    b: np.ndarray
    n_prior: int = 0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"{A.shape[0]} halfspace normals but {b.shape[0]} offsets")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_halfspaces(self) -> int:
        return self.A.shape[0]

    def contains(self, theta, tol: float = MEMBERSHIP_TOL) -> bool:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.dim:
            raise ValueError(f"theta has length {theta.shape[0]}, expected {self.dim}")
        return bool(np.all(self.A @ theta <= self.b + tol))

    def to_dict(self) -> dict:
        return {"halfspaces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.A, self.b)]}

    @classmethod
    def box(cls, lower, upper) -> "RowPolytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        d = lower.shape[0]
        A, _ = _box(d, 0.0)
        b = np.empty(2 * d)
        b[0::2] = upper
        b[1::2] = -lower
        return cls(A, b)


class FeasibleSet:
    """Product of row polytopes built from regressors ``Z`` and next states ``Y``."""

    def __init__(self, Z, Y, w_max: float, prior_R0: float = DEFAULT_PRIOR_R0):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Z.shape[0] != Y.shape[0]:
            raise ValueError(f"{Z.shape[0]} regressors but {Y.shape[0]} targets")
        if not w_max >= 0:
            raise ValueError(f"w_max must be >= 0, got {w_max}")
        if not prior_R0 > 0:
            raise ValueError(f"prior_R0 must be > 0, got {prior_R0}")
        self.Z = Z
        self.Y = Y
        self.w_max = float(w_max)
        self.prior_R0 = float(prior_R0)
        self._rows: list[RowPolytope] | None = None

    @classmethod
    def empty(cls, n: int, d: int, w_max: float, prior_R0: float = DEFAULT_PRIOR_R0):
        return cls(np.zeros((0, d)), np.zeros((0, n)), w_max, prior_R0)

    @property
    def T(self) -> int:
        return self.Z.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def extend(self, Z_new, Y_new) -> "FeasibleSet":
        """A new set with extra samples appended after the existing ones."""
        Z_new = np.atleast_2d(np.asarray(Z_new, dtype=float)).reshape(-1, self.dim)
        Y_new = np.atleast_2d(np.asarray(Y_new, dtype=float)).reshape(-1, self.n)
        return FeasibleSet(np.vstack([self.Z, Z_new]), np.vstack([self.Y, Y_new]),
                           self.w_max, self.prior_R0)

    def prefix(self, T: int) -> "FeasibleSet":
        return FeasibleSet(self.Z[:T], self.Y[:T], self.w_max, self.prior_R0)

    def row(self, i: int) -> RowPolytope:
        return self.rows[i]

    @property
    def rows(self) -> list[RowPolytope]:
        if self._rows is None:
            d, T = self.dim, self.T
            A_box, b_box = _box(d, self.prior_R0)
            A_data = np.empty((2 * T, d))
            A_data[0::2] = self.Z
            A_data[1::2] = -self.Z
            A = np.vstack([A_box, A_data])
            rows = []
            for i in range(self.n):
                b_data = np.empty(2 * T)
                b_data[0::2] = self.Y[:, i] + self.w_max
                b_data[1::2] = -self.Y[:, i] + self.w_max
                rows.append(RowPolytope(A, np.concatenate([b_box, b_data]), n_prior=2 * d))
            self._rows = rows
        return self._rows

    def contains(self, theta, tol: float = MEMBERSHIP_TOL) -> bool:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape != (self.n, self.dim):
            raise ValueError(f"theta has shape {theta.shape}, expected {(self.n, self.dim)}")
        if np.max(np.abs(theta), initial=0.0) > self.prior_R0 + tol:
            return False
        if self.T == 0:
            return True
        resid = self.Y - self.Z @ theta.T
        return bool(np.max(np.abs(resid)) <= self.w_max + tol)

    def to_dict(self) -> dict:
        return {"T": self.T, "w_max": self.w_max, "prior_R0": self.prior_R0,
                "rows": [r.to_dict() for r in self.rows]}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def build_feasible_set(data, w_max: float, prior_R0: float = DEFAULT_PRIOR_R0) -> FeasibleSet:
    """Feasible set of a :class:`~bilinear_sme.model.Trajectory`."""
    return FeasibleSet(data.regressors(), data.targets(), w_max, prior_R0)


def contains(fs: FeasibleSet, theta, tol: float = MEMBERSHIP_TOL) -> bool:
    return fs.contains(theta, tol)


# -- LP-based geometry ---------------------------------------------------------

class RowGeometry:
    """Support-function queries on one row polytope.

    ``hint`` can be the geometry of a polytope whose constraints are a prefix
    of this one's; its working set and optimal bases are reused.
    """

    def __init__(self, row: RowPolytope, hint: "RowGeometry | None" = None):
        self.row = row
        seed = np.arange(row.n_prior) if row.n_prior else None
        if hint is not None and hint.row.n_halfspaces <= row.n_halfspaces:
            if hint.solver.active_set and hint.solver._ws.size:
                seed = hint.solver._ws
            self.bases = dict(hint.bases)
        else:
            self.bases = {}
        self.solver = DenseSimplex(row.A, row.b, seed_rows=seed)

    def support(self, direction, key=None) -> LpOutcome:
        out = self.solver.maximize(direction, self.bases.get(key) if key is not None else None)
        if out.status == "infeasible":
            raise InfeasibleSetError("row polytope is empty")
        if not out.is_optimal:
            raise LPError(f"support LP finished with status {out.status}", out)
        if key is not None and out.basis is not None:
            self.bases[key] = out.basis
        return out


def chebyshev_center(row: RowPolytope) -> tuple[np.ndarray, float]:
    """Center and radius of the largest Euclidean ball inside ``row``."""
    norms = np.linalg.norm(row.A, axis=1)
    d = row.dim
    A = np.hstack([row.A, norms[:, None]])
    A = np.vstack([A, np.r_[np.zeros(d), -1.0]])
    b = np.r_[row.b, 0.0]
    seed = list(range(row.n_prior)) + [A.shape[0] - 1] if row.n_prior else None
    solver = DenseSimplex(A, b, seed_rows=seed)
    c = np.r_[np.zeros(d), 1.0]
    out = solver.maximize(c)
    if out.status == "infeasible":
        raise InfeasibleSetError("row polytope is empty; check w_max")
    if out.status == "unbounded":
        raise LPError("row polytope contains arbitrarily large balls", out)
    if not out.is_optimal:
        raise LPError(f"Chebyshev LP finished with status {out.status}", out)
    return out.optimizer[:d], float(out.optimizer[d])


def chebyshev_estimate(fs: FeasibleSet) -> np.ndarray:
    """Row-wise Chebyshev centers stacked into a parameter matrix."""
    rows = []
    for i, row in enumerate(fs.rows):
        try:
            rows.append(chebyshev_center(row)[0])
        except InfeasibleSetError as exc:
            raise InfeasibleSetError(str(exc), row=i) from exc
    return np.vstack(rows)


@dataclass
class DiameterReport:
    lower: float
    upper: float
    per_row: list[tuple[float, float]]
    directions_used: int
    prior_active: bool = False
    geometries: list[RowGeometry] | None = field(default=None, repr=False, compare=False)

    def csv_rows(self, T: int) -> list[list]:
        return [[T, i, lo, up] for i, (lo, up) in enumerate(self.per_row)]


def random_directions(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` unit vectors uniform on the sphere in ``R^dim``."""
    v = rng.standard_normal((count, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def default_n_directions(dim: int) -> int:
    return 64 * dim


def _farthest_pair(points: np.ndarray) -> tuple[float, int, int]:
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    return float(np.linalg.norm(points[i] - points[j])), int(i), int(j)


def _row_diameter(geom: RowGeometry, directions: np.ndarray, refine: int, R0: float | None):
    d = geom.row.dim
    lo_box = np.empty(d)
    hi_box = np.empty(d)
    width = 0.0
    points = []
    eye = np.eye(d)
    for j in range(d):
        p_hi = geom.support(eye[j], key=("+", j))
        p_lo = geom.support(-eye[j], key=("-", j))
        hi_box[j] = p_hi.value
        lo_box[j] = -p_lo.value
        width = max(width, hi_box[j] - lo_box[j])
        points += [p_hi.optimizer, p_lo.optimizer]
    upper = float(np.linalg.norm(hi_box - lo_box))
    for k, v in enumerate(directions):
        p_hi = geom.support(v, key=("d+", k))
        p_lo = geom.support(-v, key=("d-", k))
        width = max(width, p_hi.value + p_lo.value)
        points += [p_hi.optimizer, p_lo.optimizer]
    # Every support point is a member, so the farthest pair among all of them
    # (not only pairs from the same direction) is a valid lower bound.
    pts = np.array(points)
    best, i, j = _farthest_pair(pts)
    best_pair = (pts[i], pts[j])
    best = max(best, width)
    # Ascent on the pair distance: the direction joining the current pair has
    # a width at least as large as their distance.
    for _ in range(refine):
        diff = best_pair[0] - best_pair[1]
        norm = np.linalg.norm(diff)
        if norm == 0:
            break
        v = diff / norm
        p_hi = geom.support(v)
        p_lo = geom.support(-v)
        dist = float(np.linalg.norm(p_hi.optimizer - p_lo.optimizer))
        cand = max(dist, p_hi.value + p_lo.value)
        if cand <= best * (1 + 1e-12):
            break
        best, best_pair = cand, (p_hi.optimizer, p_lo.optimizer)
    lower = min(best, upper)
    active = False
    if R0 is not None:
        tol = 1e-7 * max(1.0, R0)
        active = bool(np.any(hi_box >= R0 - tol) or np.any(lo_box <= -R0 + tol))
    return lower, upper, active


def diameter(
    fs: FeasibleSet,
    n_directions: int | None = None,
    rng: np.random.Generator | None = None,
    directions=None,
    refine: int = 10,
    hints: list[RowGeometry] | None = None,
) -> DiameterReport:
    """Certified bounds on the Frobenius diameter of ``fs``.

    Per row, the upper bound is the diagonal of the axis-aligned bounding box
    (``2 d`` LPs) and the lower bound is the largest distance between two
    support points found over the axis directions and ``n_directions`` random
    unit directions (all support points found are pooled), followed by up to
    ``refine`` ascent steps. Totals combine
    rows as the square root of the sum of squares, which is exact for the
    product structure.

    Pass ``directions`` explicitly (or reuse one ``rng`` state) to keep the
    direction set fixed across calls; ``hints`` takes the ``geometries`` of a
    previous report on a prefix of the same data and warm-starts the LPs.
    """
    if directions is None:
        count = default_n_directions(fs.dim) if n_directions is None else int(n_directions)
        if count and rng is None:
            raise ValueError("an rng is needed to draw random directions")
        directions = random_directions(fs.dim, count, rng) if count else np.zeros((0, fs.dim))
    directions = np.atleast_2d(np.asarray(directions, dtype=float)).reshape(-1, fs.dim)
    per_row = []
    geoms = []
    any_active = False
    for i, row in enumerate(fs.rows):
        hint = hints[i] if hints is not None and i < len(hints) else None
        geom = RowGeometry(row, hint)
        try:
            lo, up, active = _row_diameter(geom, directions, refine, fs.prior_R0)
        except InfeasibleSetError as exc:
            raise InfeasibleSetError(f"row {i}: {exc}", row=i) from exc
        per_row.append((lo, up))
        geoms.append(geom)
        any_active = any_active or active
    lower = math.sqrt(sum(lo * lo for lo, _ in per_row))
    upper = math.sqrt(sum(up * up for _, up in per_row))
    return DiameterReport(lower, upper, per_row, len(directions) + fs.dim, any_active, geoms)


def row_diameter_bounds(row: RowPolytope, directions=None, refine: int = 10) -> tuple[float, float]:
    """(lower, upper) diameter bounds of a single polytope."""
    d = row.dim
    directions = np.zeros((0, d)) if directions is None else np.asarray(directions, dtype=float)
    lo, up, _ = _row_diameter(RowGeometry(row), directions, refine, None)
    return lo, up


def prune_redundant(row: RowPolytope) -> RowPolytope:
    """Drop halfspaces that do not change the polytope.

    Constraint ``i`` is redundant when maximizing its normal over the other
    kept constraints stays within its offset. Tests run in index order and a
    removed constraint is gone for the later tests, so one copy of each
    duplicate survives. The result is checked against the original by
    comparing support values on all axis directions.
    """
    keep = np.ones(row.n_halfspaces, dtype=bool)
    for i in range(row.n_halfspaces):
        keep[i] = False
        others = np.flatnonzero(keep)
        if others.size == 0:
            keep[i] = True
            continue
        solver = DenseSimplex(row.A[others], row.b[others])
        out = solver.maximize(row.A[i])
        if out.status == "infeasible":
            raise InfeasibleSetError("row polytope is empty")
        if out.status == "unbounded" or (out.is_optimal and out.value > row.b[i] + LP_FEAS_TOL * max(1.0, abs(row.b[i]))):
            keep[i] = True
        elif not out.is_optimal:
            raise LPError(f"redundancy LP finished with status {out.status}", out)
    idx = np.flatnonzero(keep)
    n_prior = int(np.sum(idx < row.n_prior))
    pruned = RowPolytope(row.A[idx], row.b[idx], n_prior=n_prior)
    _check_same_supports(row, pruned)
    return pruned


def _check_same_supports(a: RowPolytope, b: RowPolytope, tol: float = 1e-8) -> None:
    sa, sb = DenseSimplex(a.A, a.b), DenseSimplex(b.A, b.b)
    eye = np.eye(a.dim)
    for v in np.vstack([eye, -eye]):
        oa, ob = sa.maximize(v), sb.maximize(v)
        if oa.status != ob.status:
            raise LPError("pruning changed the polytope (support status differs)")
        if oa.is_optimal and abs(oa.value - ob.value) > tol * max(1.0, abs(oa.value)):
            raise LPError("pruning changed the polytope (support values differ)")


def write_diameter_csv(rows, path) -> None:
    """Rows of ``(T, row, lower, upper)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["T", "row", "lower", "upper"])
        for T, i, lo, up in rows:
            writer.writerow([T, i, repr(float(lo)), repr(float(up))])
