"""Dense two-phase simplex for small-dimensional, many-constraint LPs.

Problems have the form ``max/min c @ x  s.t.  A @ x <= b`` with ``x`` free.
Here the number of variables ``d`` is small (tens) while the number of
constraints ``k`` can be in the thousands, so the solver works on the LP dual

    min  b @ y   s.t.  A.T @ y = c,  y >= 0,

whose tableau has only ``d`` rows. An optimal dual basis names ``d`` tight
primal constraints and the primal vertex is recovered by solving that square
system. Pivoting uses Bland's smallest-index rule throughout, so the method
terminates on degenerate problems.

Large constraint sets are handled by constraint generation: LPs are solved
over a working set that grows by the most violated constraints until the
relaxed optimum is feasible for every constraint. The working set persists
across objectives on the same polyhedron.

A previous optimal basis can be passed back as a warm start. When only the
objective changed, the old basis stays dual feasible and a short run of dual
simplex pivots reaches the new optimum; when constraints were appended, the
old basis stays primal feasible and phase 2 simply continues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import LP_FEAS_TOL

OPTIMAL = "optimal"
UNBOUNDED = "unbounded"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"

_PIVOT_TOL = 1e-10
_REFACTOR_EVERY = 64
_ACTIVE_SET_MIN = 256


class LPError(RuntimeError):
    """Raised when an LP that must be solvable is not."""

    def __init__(self, message: str, outcome: "LpOutcome | None" = None):
        super().__init__(message)
        self.outcome = outcome


@dataclass(frozen=True)
class LinearProgram:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    sense: str = "maximize"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError(f"constraint matrix must be at least 1x1, got {A.shape}")
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has length {b.shape[0]}, expected {A.shape[0]}")
        if c.shape[0] != A.shape[1]:
            raise ValueError(f"c has length {c.shape[0]}, expected {A.shape[1]}")
        if self.sense not in ("maximize", "minimize"):
            raise ValueError(f"sense must be 'maximize' or 'minimize', got {self.sense!r}")
        for name, arr in (("A", A), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class LpOutcome:
    status: str
    optimizer: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0
    basis: tuple[int, ...] | None = field(default=None, repr=False)

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class DenseSimplex:
    """Reusable solver for a fixed polyhedron ``{x : A x <= b}``.

    Keeping the instance around across many objectives (support functions,
    bounding boxes) avoids revalidating the data and allows warm starts.
    """

    def __init__(self, A, b, max_iter: int | None = None, seed_rows=None,
                 active_set: bool | None = None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has length {b.shape[0]}, expected {A.shape[0]}")
        self.A = A
        self.b = b
        self.k, self.d = A.shape
        self.max_iter = max_iter if max_iter is not None else max(2000, 20 * (self.k + self.d))
        scale = max(1.0, float(np.max(np.abs(A), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
        self.tol = LP_FEAS_TOL * scale
        self._feasible: bool | None = None
        if active_set is None:
            active_set = self.k > _ACTIVE_SET_MIN
        self.active_set = active_set
        self._ws = np.array(sorted(set(int(i) for i in seed_rows)), dtype=int) \
            if seed_rows is not None else np.zeros(0, dtype=int)
        self._sub: DenseSimplex | None = None

    # -- public API -------------------------------------------------------

    def maximize(self, c, warm_basis=None) -> LpOutcome:
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.shape[0] != self.d:
            raise ValueError(f"objective has length {c.shape[0]}, expected {self.d}")
        if self.active_set:
            outcome = self._solve_active_set(c, warm_basis)
        else:
            outcome = self._solve_direct(c, warm_basis)
        if outcome.status == "dual_infeasible":
            # primal is unbounded or infeasible; Farkas test on c = 0 decides
            status = UNBOUNDED if self.is_feasible() else INFEASIBLE
            outcome = LpOutcome(status, iterations=outcome.iterations)
        return outcome

    def minimize(self, c, warm_basis=None) -> LpOutcome:
        out = self.maximize(-np.asarray(c, dtype=float), warm_basis)
        if out.is_optimal:
            return LpOutcome(OPTIMAL, out.optimizer, -out.value, out.iterations, out.basis)
        return out

    def _solve_direct(self, c, warm_basis) -> LpOutcome:
        outcome = None
        if warm_basis is not None and len(warm_basis) == self.d:
            outcome = self._solve_warm(c, warm_basis)
        if outcome is None:
            outcome = self._solve_cold(c)
        return outcome

    def _solve_active_set(self, c, warm_basis) -> LpOutcome:
        iterations = 0
        ws = self._ws
        if ws.size == 0:
            ws = self._most_aligned(c, np.zeros(self.k, dtype=bool), 2 * self.d)
        local_warm = None
        if warm_basis is not None:
            pos = np.searchsorted(ws, warm_basis)
            if np.all(pos < ws.size) and np.array_equal(ws[np.minimum(pos, ws.size - 1)], warm_basis):
                local_warm = pos
        while True:
            if ws.size > self.k // 2:
                out = self._solve_direct(c, warm_basis)
                return LpOutcome(out.status, out.optimizer, out.value,
                                 out.iterations + iterations, out.basis)
            if self._sub is None or self._sub.k != ws.size:
                self._sub = DenseSimplex(self.A[ws], self.b[ws], max_iter=self.max_iter,
                                         active_set=False)
            out = self._sub._solve_direct(c, local_warm)
            iterations += out.iterations
            if out.status == "dual_infeasible":
                # relaxation may be unbounded only for lack of blocking rows
                in_ws = np.zeros(self.k, dtype=bool)
                in_ws[ws] = True
                extra = self._most_aligned(c, in_ws, 2 * self.d)
                if extra.size == 0:
                    return LpOutcome("dual_infeasible", iterations=iterations)
                ws = np.union1d(ws, extra)
                self._ws = ws
                local_warm = None
                continue
            if out.status != OPTIMAL:
                return LpOutcome(out.status, iterations=iterations)
            viol = self.A @ out.optimizer - self.b
            viol[ws] = -np.inf
            worst = np.flatnonzero(viol > self.tol)
            if worst.size == 0:
                basis = tuple(int(ws[j]) for j in out.basis) if out.basis is not None else None
                return LpOutcome(OPTIMAL, out.optimizer, out.value, iterations, basis)
            if worst.size > 2 * self.d:
                worst = worst[np.argsort(-viol[worst], kind="stable")[: 2 * self.d]]
            old_basis = [int(ws[j]) for j in out.basis] if out.basis is not None else None
            ws = np.union1d(ws, worst)
            self._ws = ws
            local_warm = np.searchsorted(ws, old_basis) if old_basis is not None else None

    def _most_aligned(self, c, exclude, count) -> np.ndarray:
        norms = np.linalg.norm(self.A, axis=1)
        score = np.where(norms > 0, self.A @ c / np.where(norms > 0, norms, 1.0), -np.inf)
        score[exclude] = -np.inf
        order = np.argsort(-score, kind="stable")
        order = order[np.isfinite(score[order])][:count]
        return np.sort(order)

    def is_feasible(self) -> bool:
        if self._feasible is None:
            solve = self._solve_active_set if self.active_set else self._solve_direct
            out = solve(np.zeros(self.d), None)
            if out.status == ITERATION_LIMIT:
                raise LPError("iteration limit reached during feasibility check", out)
            self._feasible = out.status == OPTIMAL
        return self._feasible

    # -- internals --------------------------------------------------------

    def _solve_cold(self, c) -> LpOutcome:
        tab = _Tableau(self, c)
        status = tab.phase1()
        if status != OPTIMAL:
            return LpOutcome(status, iterations=tab.iterations)
        status = tab.primal_phase2()
        return tab.finish(status)

    def _solve_warm(self, c, warm_basis) -> LpOutcome | None:
        basis = [int(j) for j in warm_basis]
        if len(set(basis)) != self.d or min(basis) < 0 or max(basis) >= self.k:
            return None
        tab = _Tableau(self, c, basis=basis)
        if not tab.ok:
            return None
        neg_rhs = tab.rhs < -self.tol
        neg_red = tab.red[: self.k] < -self.tol
        if not neg_rhs.any():
            status = tab.primal_phase2()
        elif not neg_red.any():
            status = tab.dual_phase()
            if status == "dual_infeasible":
                return LpOutcome("dual_infeasible", iterations=tab.iterations)
            if status == OPTIMAL:
                status = tab.primal_phase2()
        else:
            return None
        return tab.finish(status)


class _Tableau:
    """Simplex tableau on the equality-form dual ``A.T y = c, y >= 0``.

    Columns ``0..k-1`` are dual variables (one per primal constraint) and
    ``k..k+d-1`` are phase-1 artificials.
    """

    def __init__(self, solver: DenseSimplex, c, basis=None):
        self.s = solver
        self.k, self.d = solver.k, solver.d
        self.tol = solver.tol
        self.c = c
        self.iterations = 0
        self.ok = True
        sign = np.where(c < 0, -1.0, 1.0)
        self.full = np.hstack([solver.A.T * sign[:, None], np.eye(self.d)])
        self.rhs0 = c * sign
        self.rows = np.arange(self.d)
        self.cost = np.concatenate([solver.b, np.zeros(self.d)])
        if basis is None:
            self.tab = self.full.copy()
            self.rhs = self.rhs0.copy()
            self.basis = list(range(self.k, self.k + self.d))
        else:
            self.basis = list(basis)
            self.ok = self._refactor()
            if self.ok:
                self._compute_reduced(self.cost)

    def _refactor(self) -> bool:
        B = self.full[np.ix_(self.rows, self.basis)]
        try:
            self.tab = np.linalg.solve(B, self.full[self.rows])
            self.rhs = np.linalg.solve(B, self.rhs0[self.rows])
        except np.linalg.LinAlgError:
            return False
        if not (np.all(np.isfinite(self.tab)) and np.all(np.isfinite(self.rhs))):
            return False
        self.tab[:, self.basis] = np.eye(len(self.basis))
        return True

    def _compute_reduced(self, cost):
        self.red = cost - cost[self.basis] @ self.tab
        self.red[self.basis] = 0.0

    def _pivot(self, r, j):
        tab = self.tab
        piv = tab[r, j]
        tab[r] /= piv
        self.rhs[r] /= piv
        col = tab[:, j].copy()
        col[r] = 0.0
        tab -= np.outer(col, tab[r])
        self.rhs -= col * self.rhs[r]
        self.red -= self.red[j] * tab[r]
        self.red[j] = 0.0
        tab[:, j] = 0.0
        tab[r, j] = 1.0
        self.basis[r] = j
        self.iterations += 1
        if self.iterations % _REFACTOR_EVERY == 0:
            cost = self._cur_cost
            if self._refactor():
                self._compute_reduced(cost)

    def _ratio_row(self, j):
        col = self.tab[:, j]
        mask = col > _PIVOT_TOL
        if not mask.any():
            return None
        idx = np.flatnonzero(mask)
        ratios = np.maximum(self.rhs[idx], 0.0) / col[idx]
        best = ratios.min()
        ties = idx[ratios <= best + 1e-12 * max(1.0, abs(best))]
        # Bland: among tied rows leave the smallest basic index
        return min(ties, key=lambda i: self.basis[i])

    def _primal_loop(self, ncols) -> str:
        while True:
            if self.iterations >= self.s.max_iter:
                return ITERATION_LIMIT
            cand = np.flatnonzero(self.red[:ncols] < -self.tol)
            if cand.size == 0:
                return OPTIMAL
            j = int(cand[0])
            r = self._ratio_row(j)
            if r is None:
                return "unbounded_dual"
            self._pivot(r, j)

    def phase1(self) -> str:
        cost = np.concatenate([np.zeros(self.k), np.ones(self.d)])
        self._cur_cost = cost
        self._compute_reduced(cost)
        status = self._primal_loop(self.k + self.d)
        if status == ITERATION_LIMIT:
            return status
        if status != OPTIMAL:  # phase-1 objective is bounded below by zero
            raise LPError("phase 1 reported an unbounded direction")
        infeas = float(np.sum(self.rhs[np.array(self.basis) >= self.k]))
        if infeas > self.tol * max(1.0, self.d):
            return "dual_infeasible"
        self._drive_out_artificials()
        self._cur_cost = self.cost
        self._compute_reduced(self.cost)
        return OPTIMAL

    def _drive_out_artificials(self):
        r = 0
        while r < len(self.basis):
            if self.basis[r] < self.k:
                r += 1
                continue
            row = self.tab[r, : self.k]
            nz = np.flatnonzero(np.abs(row) > 1e-8)
            if nz.size:
                self._pivot(r, int(nz[0]))
                r += 1
            else:
                # redundant equality: drop the row
                keep = np.ones(len(self.basis), dtype=bool)
                keep[r] = False
                self.tab = self.tab[keep]
                self.rhs = self.rhs[keep]
                self.rows = self.rows[keep]
                del self.basis[r]

    def primal_phase2(self) -> str:
        self._cur_cost = self.cost
        status = self._primal_loop(self.k)
        return INFEASIBLE if status == "unbounded_dual" else status

    def dual_phase(self) -> str:
        """Dual simplex pivots on the dual LP from a basis with red >= 0."""
        self._cur_cost = self.cost
        while True:
            if self.iterations >= self.s.max_iter:
                return ITERATION_LIMIT
            bad = np.flatnonzero(self.rhs < -self.tol)
            if bad.size == 0:
                return OPTIMAL
            r = int(min(bad, key=lambda i: self.basis[i]))
            row = self.tab[r, : self.k]
            idx = np.flatnonzero(row < -_PIVOT_TOL)
            if idx.size == 0:
                return "dual_infeasible"
            ratios = np.maximum(self.red[idx], 0.0) / -row[idx]
            best = ratios.min()
            j = int(idx[ratios <= best + 1e-12 * max(1.0, abs(best))][0])
            self._pivot(r, j)

    def finish(self, status) -> LpOutcome:
        if status != OPTIMAL:
            return LpOutcome(status, iterations=self.iterations)
        # polish: refactor once and confirm optimality with fresh numbers
        for _ in range(3):
            if not self._refactor():
                break
            self._compute_reduced(self.cost)
            if (self.rhs >= -self.tol).all() and (self.red[: self.k] >= -self.tol).all():
                break
            status = self.primal_phase2() if (self.rhs >= -self.tol).all() else self.dual_phase()
            if status != OPTIMAL:
                return LpOutcome(status, iterations=self.iterations)
        # sorted so the vertex solve is bitwise independent of the pivot path
        tight = np.sort(np.array(self.basis))
        A_t = self.s.A[tight]
        b_t = self.s.b[tight]
        if len(tight) == self.d:
            try:
                x = np.linalg.solve(A_t, b_t)
            except np.linalg.LinAlgError:
                x = np.linalg.lstsq(A_t, b_t, rcond=None)[0]
        else:
            x = np.linalg.lstsq(A_t, b_t, rcond=None)[0]
        value = float(self.c @ x)
        basis = tuple(int(j) for j in self.basis) if len(self.basis) == self.d else None
        return LpOutcome(OPTIMAL, x, value, self.iterations, basis)


def solve_lp(lp: LinearProgram, warm_basis=None, max_iter: int | None = None) -> LpOutcome:
    """Solve ``lp`` with the dense two-phase simplex method.

    Returns an :class:`LpOutcome` whose status is ``optimal``, ``unbounded``,
    ``infeasible`` or ``iteration_limit``; only ``optimal`` outcomes carry an
    optimizer.
    """
    solver = DenseSimplex(lp.A, lp.b, max_iter=max_iter)
    if lp.sense == "maximize":
        return solver.maximize(lp.c, warm_basis)
    return solver.minimize(lp.c, warm_basis)
