"""Linear programs, solved with HiGHS through scipy.

Programs are stated in maximization form::

    maximize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                lb <= x <= ub

For infeasible programs a Farkas-type certificate is computed from the
phase-1 problem that minimizes the total constraint violation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .report import SolveReport, SolverError

PRIMAL_FEAS_TOL = 1e-10
DUAL_FEAS_TOL = 1e-10


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | float | None = 0.0
    ub: np.ndarray | float | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        for mat, vec, label in ((self.A_ub, self.b_ub, "inequality"), (self.A_eq, self.b_eq, "equality")):
            if (mat is None) != (vec is None):
                raise ValueError(f"{label} matrix and right-hand side must be given together")
            if mat is not None:
                mat = np.asarray(mat, dtype=float)
                if mat.ndim != 2 or mat.shape[1] != n or mat.shape[0] != np.asarray(vec).size:
                    raise ValueError(f"{label} constraints have inconsistent shapes")
                if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(vec))):
                    raise ValueError(f"{label} constraints contain non-finite entries")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective contains non-finite entries")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def bounds(self) -> list[tuple[float | None, float | None]]:
        lb = np.broadcast_to(np.asarray(np.nan if self.lb is None else self.lb, dtype=float), (self.n_vars,))
        ub = np.broadcast_to(np.asarray(np.nan if self.ub is None else self.ub, dtype=float), (self.n_vars,))
        return [(None if np.isnan(lo) else lo, None if np.isnan(hi) else hi) for lo, hi in zip(lb, ub)]


@dataclass
class LPSolution:
    x: np.ndarray | None
    report: SolveReport
    dual_ub: np.ndarray | None = None
    dual_eq: np.ndarray | None = None
    certificate: dict | None = None

    @property
    def objective(self) -> float:
        return self.report.primal_objective


def _farkas_certificate(lp: LinearProgram) -> dict:
    """Phase-1 duals proving infeasibility.

    Minimizes the summed violation ``1 @ (s_ub + s_eq_pos + s_eq_neg)``; its
    optimal duals ``(y_ub <= 0, y_eq)`` give a combination of the constraints
    whose implied bound is violated by ``violation > 0``.
    """
    n = lp.n_vars
    m_ub = 0 if lp.A_ub is None else len(lp.b_ub)
    m_eq = 0 if lp.A_eq is None else len(lp.b_eq)
    n_slack = m_ub + 2 * m_eq
    c = np.concatenate([np.zeros(n), np.ones(n_slack)])
    a_ub = b_ub = a_eq = b_eq = None
    if m_ub:
        a_ub = np.hstack([lp.A_ub, -np.eye(m_ub), np.zeros((m_ub, 2 * m_eq))])
        b_ub = lp.b_ub
    if m_eq:
        a_eq = np.hstack([lp.A_eq, np.zeros((m_eq, m_ub)), np.eye(m_eq), -np.eye(m_eq)])
        b_eq = lp.b_eq
    bounds = lp.bounds() + [(0, None)] * n_slack
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    return {
        "violation": float(res.fun) if res.status == 0 else float("nan"),
        "y_ub": None if not m_ub else np.asarray(res.ineqlin.marginals),
        "y_eq": None if not m_eq else np.asarray(res.eqlin.marginals),
    }


def solve_lp(lp: LinearProgram, time_limit: float | None = None) -> LPSolution:
    """Solve with the HiGHS dual simplex; vertex solutions, deterministic pivoting."""
    options = {
        "primal_feasibility_tolerance": PRIMAL_FEAS_TOL,
        "dual_feasibility_tolerance": DUAL_FEAS_TOL,
        "presolve": True,
    }
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = linprog(
        -lp.c,
        A_ub=lp.A_ub,
        b_ub=lp.b_ub,
        A_eq=lp.A_eq,
        b_eq=lp.b_eq,
        bounds=lp.bounds(),
        method="highs-ds",
        options=options,
    )
    if res.status == 0:
        x = np.asarray(res.x)
        # HiGHS marginals are sensitivities of the minimized objective; flip
        # them so that they are the duals of the maximization.
        dual_ub = None if lp.A_ub is None else -np.asarray(res.ineqlin.marginals)
        dual_eq = None if lp.A_eq is None else -np.asarray(res.eqlin.marginals)
        primal = float(lp.c @ x)
        dual = 0.0
        if dual_ub is not None:
            dual += float(dual_ub @ lp.b_ub)
        if dual_eq is not None:
            dual += float(dual_eq @ lp.b_eq)
        # bound constraints contribute through reduced costs
        lower = np.asarray(res.lower.marginals)
        upper = np.asarray(res.upper.marginals)
        bnds = lp.bounds()
        for j, (lo, hi) in enumerate(bnds):
            if lo is not None and lower[j] != 0:
                dual -= lower[j] * lo
            if hi is not None and upper[j] != 0:
                dual -= upper[j] * hi
        report = SolveReport("optimal", primal, dual, abs(dual - primal), int(res.nit), res.message)
        return LPSolution(x, report, dual_ub, dual_eq)
    if res.status == 2:
        cert = _farkas_certificate(lp)
        report = SolveReport("infeasible", float("nan"), float("nan"), float("nan"), int(res.nit), res.message)
        return LPSolution(None, report, certificate=cert)
    if res.status == 3:
        report = SolveReport("unbounded", float("inf"), float("inf"), float("nan"), int(res.nit), res.message)
        return LPSolution(None, report)
    if res.status == 1:
        report = SolveReport("max-iterations", float("nan"), float("nan"), float("nan"), int(res.nit), res.message)
        return LPSolution(None, report)
    raise SolverError(f"HiGHS failed: {res.message}")
