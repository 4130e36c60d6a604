"""
Linear programming for the intersection simulator
Dense bounded-variable primal simplex (two phase, Bland's rule) and a
HiGHS engine through scipy for long horizons
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from intersection.errors import ContractViolation

logger = logging.getLogger(__name__)

EPS_LP = 1e-8
PIVOT_TOL = 1e-9
# consecutive degenerate pivots before Dantzig pricing falls back to Bland
DEGENERATE_STREAK = 50
REFRESH_EVERY = 64

Matrix = Union[np.ndarray, sp.spmatrix]


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    STALLED = "stalled"


class Pricing(str, Enum):
    BLAND = "bland"
    DANTZIG = "dantzig"


class LpEngine(str, Enum):
    SIMPLEX = "simplex"
    HIGHS = "highs"


def _dense(matrix: Optional[Matrix], n: int) -> np.ndarray:
    if matrix is None:
        return np.zeros((0, n))
    if sp.issparse(matrix):
        return matrix.toarray().astype(float)
    return np.asarray(matrix, dtype=float).reshape(-1, n)


@dataclass
class LinearProgram:
    """maximize c.x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  lo <= x <= hi

    Bounds default to [0, +inf); either side may be infinite.
    """

    objective: np.ndarray
    A_eq: Optional[Matrix] = None
    b_eq: Optional[np.ndarray] = None
    A_le: Optional[Matrix] = None
    b_le: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        if n == 0:
            raise ContractViolation("linear program has no variables")
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel()
        if self.lo.size != n or self.hi.size != n:
            raise ContractViolation(f"bounds have length {self.lo.size}/{self.hi.size}, expected {n}")

        for name in ("eq", "le"):
            A = getattr(self, f"A_{name}")
            if A is not None and not sp.issparse(A):
                A = np.asarray(A, dtype=float)
                if A.size == 0:
                    A = A.reshape(0, n)
                setattr(self, f"A_{name}", A)
            b = getattr(self, f"b_{name}")
            rows = 0 if A is None else A.shape[0]
            b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
            if A is not None and (A.ndim != 2 or A.shape[1] != n):
                raise ContractViolation(f"A_{name} has shape {A.shape}, expected (*, {n})")
            if b.size != rows:
                raise ContractViolation(f"b_{name} has length {b.size}, expected {rows}")
            setattr(self, f"b_{name}", b)

        if not np.all(np.isfinite(self.objective)):
            raise ContractViolation("objective has non-finite coefficients")
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise ContractViolation("bounds contain NaN")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_eq(self) -> int:
        return self.b_eq.size

    @property
    def n_le(self) -> int:
        return self.b_le.size

    def dense_eq(self) -> np.ndarray:
        return _dense(self.A_eq, self.n_vars)

    def dense_le(self) -> np.ndarray:
        return _dense(self.A_le, self.n_vars)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x``"""
        worst = 0.0
        if self.n_eq:
            worst = max(worst, float(np.abs(self.A_eq @ x - self.b_eq).max()))
        if self.n_le:
            worst = max(worst, float(np.maximum(self.A_le @ x - self.b_le, 0.0).max()))
        worst = max(worst, float(np.maximum(self.lo - x, 0.0).max()))
        worst = max(worst, float(np.maximum(x - self.hi, 0.0).max()))
        return worst

    def scale(self) -> float:
        rhs = np.concatenate([self.b_eq, self.b_le, np.zeros(1)])
        return 1.0 + float(np.abs(rhs).max())


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_value: float = float("nan")
    iterations: int = 0
    engine: LpEngine = LpEngine.SIMPLEX

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass
class _StandardForm:
    """A y = b, 0 <= y <= u; original x = offset + scatter(sign * y[:k])"""

    A: np.ndarray
    b: np.ndarray
    upper: np.ndarray
    cost: np.ndarray
    column_var: np.ndarray
    column_sign: np.ndarray
    offset: np.ndarray

    def recover(self, y: np.ndarray) -> np.ndarray:
        x = self.offset.copy()
        k = self.column_var.size
        np.add.at(x, self.column_var, self.column_sign * y[:k])
        return x


def _standardize(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    offset = np.zeros(n)
    column_var, column_sign, upper = [], [], []
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        if np.isfinite(lo) and np.isfinite(hi) and hi - lo <= 0.0:
            offset[j] = lo  # fixed variable, no column
        elif np.isfinite(lo):
            offset[j] = lo
            column_var.append(j)
            column_sign.append(1.0)
            upper.append(hi - lo)
        elif np.isfinite(hi):
            offset[j] = hi
            column_var.append(j)
            column_sign.append(-1.0)
            upper.append(np.inf)
        else:
            column_var.extend((j, j))
            column_sign.extend((1.0, -1.0))
            upper.extend((np.inf, np.inf))

    column_var = np.asarray(column_var, dtype=int)
    column_sign = np.asarray(column_sign, dtype=float)
    A_eq, A_le = lp.dense_eq(), lp.dense_le()
    m_eq, m_le = A_eq.shape[0], A_le.shape[0]

    A = np.vstack([
        np.hstack([A_eq[:, column_var] * column_sign, np.zeros((m_eq, m_le))]),
        np.hstack([A_le[:, column_var] * column_sign, np.eye(m_le)]),
    ])
    b = np.concatenate([lp.b_eq - A_eq @ offset, lp.b_le - A_le @ offset])
    upper = np.concatenate([np.asarray(upper, dtype=float), np.full(m_le, np.inf)])
    cost = np.concatenate([lp.objective[column_var] * column_sign, np.zeros(m_le)])
    return _StandardForm(A=A, b=b, upper=upper, cost=cost, column_var=column_var,
                         column_sign=column_sign, offset=offset)


class _BoundedSimplex:
    """Tableau simplex over A y = b, 0 <= y <= u with one artificial per row"""

    def __init__(self, A: np.ndarray, b: np.ndarray, upper: np.ndarray,
                 pricing: Pricing, max_iterations: int):
        m, n = A.shape
        sign = np.where(b < 0, -1.0, 1.0)
        self.m, self.n = m, n
        self.columns = np.hstack([A * sign[:, None], np.eye(m)])
        self.tableau = self.columns.copy()
        self.b = b * sign
        self.upper = np.concatenate([upper, np.full(m, np.inf)])
        self.x = np.concatenate([np.zeros(n), self.b])
        self.basis = np.arange(n, n + m)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[n:] = True
        self.at_upper = np.zeros(n + m, dtype=bool)
        self.pricing = pricing
        self.max_iterations = max_iterations
        self.iterations = 0

    def refresh(self):
        """Recompute basic values from B^-1, which sits in the artificial columns"""
        if self.m == 0:
            return
        binv = self.tableau[:, self.n:]
        nonbasic = ~self.is_basic
        rhs = self.b - self.columns[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = binv @ rhs

    def _ratio_test(self, alpha: np.ndarray, entering: int):
        own = self.upper[entering]
        if self.m == 0:
            return own, None, False
        xb = self.x[self.basis]
        ub = self.upper[self.basis]
        ratios = np.full(self.m, np.inf)
        falling = alpha > PIVOT_TOL
        ratios[falling] = np.maximum(xb[falling], 0.0) / alpha[falling]
        rising = (alpha < -PIVOT_TOL) & np.isfinite(ub)
        ratios[rising] = np.maximum(ub[rising] - xb[rising], 0.0) / -alpha[rising]
        best = float(ratios.min())
        if own <= best:
            return own, None, False
        if not np.isfinite(best):
            return np.inf, None, False
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL)
        row = int(ties[np.argmin(self.basis[ties])])
        return best, row, bool(rising[row])

    def _pivot(self, row: int, entering: int, leave_upper: bool):
        leaving = self.basis[row]
        T = self.tableau
        T[row] /= T[row, entering]
        column = T[:, entering].copy()
        column[row] = 0.0
        T -= np.outer(column, T[row])
        self.basis[row] = entering
        self.is_basic[leaving] = False
        self.is_basic[entering] = True
        self.at_upper[leaving] = leave_upper
        self.x[leaving] = self.upper[leaving] if leave_upper else 0.0
        self.at_upper[entering] = False

    def run(self, cost: np.ndarray) -> LpStatus:
        streak = 0
        while True:
            if self.iterations >= self.max_iterations:
                return LpStatus.STALLED
            if self.iterations % REFRESH_EVERY == 0:
                self.refresh()

            reduced = cost - cost[self.basis] @ self.tableau if self.m else cost.copy()
            movable = ~self.is_basic & (self.upper > PIVOT_TOL)
            rising = movable & ~self.at_upper & (reduced > PIVOT_TOL)
            falling = movable & self.at_upper & (reduced < -PIVOT_TOL)
            candidates = np.flatnonzero(rising | falling)
            if candidates.size == 0:
                self.refresh()
                return LpStatus.OPTIMAL

            if self.pricing is Pricing.BLAND or streak >= DEGENERATE_STREAK:
                entering = int(candidates[0])
            else:
                entering = int(candidates[np.argmax(np.abs(reduced[candidates]))])
            direction = 1.0 if rising[entering] else -1.0
            alpha = direction * self.tableau[:, entering]

            step, row, leave_upper = self._ratio_test(alpha, entering)
            if not np.isfinite(step):
                return LpStatus.UNBOUNDED
            self.iterations += 1
            streak = streak + 1 if step <= PIVOT_TOL else 0

            self.x[entering] += direction * step
            if self.m:
                self.x[self.basis] -= step * alpha
            if row is None:
                self.at_upper[entering] = not self.at_upper[entering]
                self.x[entering] = self.upper[entering] if self.at_upper[entering] else 0.0
                continue
            self._pivot(row, entering, leave_upper)

    def drive_out_artificials(self):
        for row in range(self.m):
            if self.basis[row] < self.n:
                continue
            weights = np.abs(self.tableau[row, :self.n])
            candidates = np.flatnonzero(~self.is_basic[:self.n] & (weights > 1e-7))
            if candidates.size:
                self._pivot(row, int(candidates[0]), False)
        # redundant rows keep their artificial basic, pinned at zero
        self.upper[self.n:] = 0.0
        self.refresh()


def solve(lp: LinearProgram, engine: LpEngine = LpEngine.SIMPLEX,
          pricing: Pricing = Pricing.BLAND, max_iterations: Optional[int] = None) -> LpSolution:
    """Solve ``lp``; outcomes are reported through ``LpSolution.status``"""
    engine = LpEngine(engine)
    if np.any(lp.lo > lp.hi):
        return LpSolution(status=LpStatus.INFEASIBLE, engine=engine)
    if engine is LpEngine.HIGHS:
        return solve_highs(lp)
    return solve_simplex(lp, pricing=Pricing(pricing), max_iterations=max_iterations)


def solve_simplex(lp: LinearProgram, pricing: Pricing = Pricing.BLAND,
                  max_iterations: Optional[int] = None) -> LpSolution:
    form = _standardize(lp)
    m, n = form.A.shape
    cap = max_iterations if max_iterations is not None else 50 * (m + n)
    solver = _BoundedSimplex(form.A, form.b, form.upper, pricing, cap)

    phase_one = np.concatenate([np.zeros(n), -np.ones(m)])
    status = solver.run(phase_one)
    if status is LpStatus.STALLED:
        logger.warning(f"⚠️ Simplex phase 1 hit the iteration cap ({cap})")
        return LpSolution(status=status, iterations=solver.iterations)
    residual = float(solver.x[n:].sum())
    if residual > EPS_LP * lp.scale():
        logger.debug(f"phase 1 residual {residual:.3e}: infeasible")
        return LpSolution(status=LpStatus.INFEASIBLE, iterations=solver.iterations)

    solver.drive_out_artificials()
    status = solver.run(np.concatenate([form.cost, np.zeros(m)]))
    if status is not LpStatus.OPTIMAL:
        if status is LpStatus.STALLED:
            logger.warning(f"⚠️ Simplex phase 2 hit the iteration cap ({cap})")
        return LpSolution(status=status, iterations=solver.iterations)

    x = form.recover(solver.x[:n])
    violation = lp.max_violation(x)
    if violation > 1e-6 * lp.scale():
        logger.warning(f"⚠️ Simplex answer violates constraints by {violation:.3e}, reporting stalled")
        return LpSolution(status=LpStatus.STALLED, x=x, iterations=solver.iterations)
    return LpSolution(status=LpStatus.OPTIMAL, x=x, objective_value=float(lp.objective @ x),
                      iterations=solver.iterations)


_HIGHS_STATUS = {
    0: LpStatus.OPTIMAL,
    1: LpStatus.STALLED,
    2: LpStatus.INFEASIBLE,
    3: LpStatus.UNBOUNDED,
    4: LpStatus.STALLED,
}


def solve_highs(lp: LinearProgram) -> LpSolution:
    bounds = [
        (None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi)
        for lo, hi in zip(lp.lo, lp.hi)
    ]
    result = linprog(
        -lp.objective,
        A_ub=lp.A_le if lp.n_le else None,
        b_ub=lp.b_le if lp.n_le else None,
        A_eq=lp.A_eq if lp.n_eq else None,
        b_eq=lp.b_eq if lp.n_eq else None,
        bounds=bounds,
        method="highs",
    )
    status = _HIGHS_STATUS.get(result.status, LpStatus.STALLED)
    if status is not LpStatus.OPTIMAL:
        logger.debug(f"highs finished with status {result.status}: {result.message}")
        return LpSolution(status=status, iterations=int(getattr(result, "nit", 0)),
                          engine=LpEngine.HIGHS)
    x = np.asarray(result.x, dtype=float)
    return LpSolution(status=status, x=x, objective_value=float(lp.objective @ x),
                      iterations=int(result.nit), engine=LpEngine.HIGHS)
