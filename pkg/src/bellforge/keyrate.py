"""Expected key rates of honest implementations.

An honest i.i.d. run is summarized by its asymptotic behavior: the Bell value
``beta`` of the chosen functional, the key-round error rate and the range of
the single-round Bell estimator. The finite-size rate at ``N`` rounds plugs
these expected statistics into :func:`key_length`, with the sampling fractions
``xi`` and ``eta`` tuned per ``N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .behavior import BehaviorVector
from .finitekey import (
    DEFAULT_EPS_C,
    DEFAULT_EPS_S,
    KeyLengthReport,
    NoRootError,
    ProtocolParams,
    gamma_range,
    key_length,
    uniform_inputs,
)
from .conic import SolverError
from .npa import guessing_probability
from .polytope import BellFunctional, optimal_hyperplane
from .quantum import QuantumSetup, born_probabilities, key_qber

PgFunction = Callable[[float], float]

LOG_FRACTION_BOUNDS = (-9.0, -0.4)


@dataclass
class AsymptoticModel:
    functional: BellFunctional
    beta: float
    qber: float
    gamma: float
    behavior: BehaviorVector | None = None
    key_setting: int = 0

    @property
    def d(self) -> int:
        return self.functional.scenario.d


def asymptotic_model(setup: QuantumSetup, functional: BellFunctional | None = None) -> AsymptoticModel:
    """Expected statistics of ``setup``; the functional defaults to the optimal hyperplane.

    Raises :class:`InfeasibleClassical` when the behavior has a local model.
    """
    P = born_probabilities(setup)
    f = optimal_hyperplane(P) if functional is None else functional
    s = f.scenario
    return AsymptoticModel(
        functional=f,
        beta=f.value(P),
        qber=key_qber(setup),
        gamma=gamma_range(f, uniform_inputs(s.m_a, s.m_b)),
        behavior=P,
    )


class GuessingCurve:
    """Guessing probability sampled on a grid, with concavity-based bounds.

    ``G(beta)`` is concave and nonincreasing above the classical bound ``c``.
    The grid is ``beta_max - (beta_max - c) * 2**-j`` for ``j = 0..levels`` plus
    ``beta_max``, which is dense near ``beta_max`` where large-``N`` rates are
    evaluated. Grid points where the solver fails are dropped. :meth:`upper`
    combines monotonicity with extended secants and never underestimates
    ``G``; :meth:`lower` is the chord interpolation.
    """

    def __init__(
        self,
        functional: BellFunctional,
        beta_max: float,
        levels: int = 14,
        key_setting: int = 0,
        solver: PgFunction | None = None,
    ):
        c = functional.c
        if beta_max <= c:
            raise ValueError("beta_max must exceed the classical bound")
        if solver is None:
            def solver(beta):
                return guessing_probability(functional, beta, key_setting).pg
        betas = sorted({beta_max - (beta_max - c) * 2.0**-j for j in range(levels + 1)} | {beta_max})
        kept, values = [], []
        for b in betas:
            try:
                values.append(1.0 if b <= c else solver(b))
            except SolverError:
                # points on the boundary of the quantum set may not solve;
                # the remaining samples still bound G from above
                continue
            kept.append(b)
        if len(kept) < 2:
            raise SolverError("guessing curve has fewer than two solved points")
        self.functional = functional
        self.betas = np.array(kept)
        self.values = np.array(values)
        # enforce the monotone shape against solver noise, conservatively
        self.values = np.maximum.accumulate(self.values[::-1])[::-1]
        self.floor = 1.0 / functional.scenario.d

    def _secant(self, i: int, beta: float) -> float:
        b0, b1 = self.betas[i], self.betas[i + 1]
        g0, g1 = self.values[i], self.values[i + 1]
        return g0 + (g1 - g0) * (beta - b0) / (b1 - b0)

    def upper(self, beta: float) -> float:
        b, g = self.betas, self.values
        if beta <= b[0]:
            return 1.0
        k = len(b) - 1
        if beta >= b[k]:
            val = self._secant(k - 1, beta) if k >= 1 else g[k]
            return float(min(g[k], max(val, self.floor)))
        i = int(np.searchsorted(b, beta, side="right")) - 1
        cands = [g[i]]
        if i >= 1:
            cands.append(self._secant(i - 1, beta))
        if i + 2 <= k:
            cands.append(self._secant(i + 1, beta))
        return float(min(1.0, max(min(cands), self.floor)))

    def lower(self, beta: float) -> float:
        return float(np.interp(beta, self.betas, self.values, left=1.0, right=self.values[-1]))


@dataclass
class RatePoint:
    N: float
    xi: float
    eta: float
    beta_eff: float
    report: KeyLengthReport | None
    raw_rate: float = float("-inf")

    @property
    def rate(self) -> float:
        return 0.0 if self.report is None else self.report.rate

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "xi": self.xi,
            "eta": self.eta,
            "beta_eff": self.beta_eff,
            "rate": self.rate,
            "raw_rate": self.raw_rate,
        }


@dataclass
class RateSettings:
    eps_c: float = DEFAULT_EPS_C
    eps_s: float = DEFAULT_EPS_S
    overrides: dict = field(default_factory=dict)

    def params(self, N: float, xi: float, eta: float, d: int) -> ProtocolParams:
        return ProtocolParams.from_budget(N, xi, eta, d, self.eps_c, self.eps_s, **self.overrides)


def evaluate_rate(
    model: AsymptoticModel,
    N: float,
    xi: float,
    eta: float,
    pg_fn: PgFunction,
    settings: RateSettings | None = None,
) -> RatePoint:
    """Key rate with expected statistics at fixed sampling fractions."""
    settings = settings or RateSettings()
    params = settings.params(N, xi, eta, model.d)
    if params.n_pe_subset < 1 or (params.gamma_est is None and params.n_sample < 1):
        return RatePoint(N, xi, eta, float("nan"), None)
    d_est, d_con = params.deltas(model.gamma)
    beta_eff = model.beta - d_est - d_con
    pg = pg_fn(beta_eff) if beta_eff > model.functional.c else 1.0
    try:
        rep = key_length(params, pg, model.qber)
    except NoRootError:
        return RatePoint(N, xi, eta, beta_eff, None)
    return RatePoint(N, xi, eta, beta_eff, rep, rep.raw / N)


def tune_fractions(
    model: AsymptoticModel,
    N: float,
    pg_fn: PgFunction,
    settings: RateSettings | None = None,
    grid: int = 9,
) -> RatePoint:
    """Maximize the rate over ``(xi, eta)`` on a log grid, then refine with Nelder-Mead."""
    lo, hi = LOG_FRACTION_BOUNDS
    lo_n = max(lo, math.log10(3.0 / N))  # keep each subset nonempty

    def point(u: float, v: float) -> RatePoint:
        u = min(max(u, lo_n), hi)
        v = min(max(v, lo_n), hi)
        return evaluate_rate(model, N, 10.0**u, 10.0**v, pg_fn, settings)

    def score(pt: RatePoint) -> float:
        return pt.raw_rate if np.isfinite(pt.raw_rate) else -1e9

    axis = np.linspace(lo_n, hi, grid)
    best = max((point(u, v) for u in axis for v in axis), key=score)
    if not np.isfinite(best.raw_rate):
        return best
    start = np.log10([best.xi, best.eta])
    res = minimize(
        lambda z: -score(point(*z)),
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-3, "fatol": 1e-9, "maxiter": 200, "initial_simplex": [start, start + [0.3, 0], start + [0, 0.3]]},
    )
    refined = point(*res.x)
    return refined if score(refined) >= score(best) else best


def rate_curve(
    model: AsymptoticModel,
    N_grid,
    pg_fn: PgFunction | None = None,
    settings: RateSettings | None = None,
    levels: int = 14,
) -> list[RatePoint]:
    """Tuned rates along ``N_grid``; ``pg_fn`` defaults to a :class:`GuessingCurve` upper bound."""
    if pg_fn is None:
        curve = GuessingCurve(model.functional, model.beta, levels, model.key_setting)
        pg_fn = curve.upper
    return [tune_fractions(model, float(N), pg_fn, settings) for N in N_grid]


def zero_crossing(points: list[RatePoint]) -> float:
    """Smallest ``N`` on the grid with a positive rate (``inf`` if none)."""
    for pt in points:
        if pt.rate > 0:
            return pt.N
    return float("inf")
