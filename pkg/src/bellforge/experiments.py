"""Reproducible experiment drivers shared by the command line and the demos."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .conic import SolverError
from .finitekey import DEFAULT_EPS_C, DEFAULT_EPS_S
from .keyrate import (
    AsymptoticModel,
    GuessingCurve,
    RatePoint,
    RateSettings,
    asymptotic_model,
    evaluate_rate,
    rate_curve,
    tune_fractions,
    zero_crossing,
)
from .npa import guessing_probability, chsh_guessing_probability
from .polytope import BellFunctional, InfeasibleClassical, chsh_functional, symmetry_permutations
from .protocol import thread_count, trial_seeds
from .quantum import (
    QuantumSetup,
    explicit_presets,
    born_probabilities,
    chain3_setup,
    chsh_setup,
    cglmp_setup,
    classical_uniform_setup,
    key_qber,
    random_qubit_setup,
    random_qudit_setup,
    setup_from_dict,
)

PRESETS = (
    "chsh",
    "chain3",
    "cglmp3",
    "cglmp3-nonmax",
    "cglmp4",
    "cglmp5",
    "classical-uniform",
    "explicit3",
    "explicit2",
    "explicit2-ext",
)


def preset_setup(name: str, p: float = 0.0, theta: float = 0.0) -> QuantumSetup:
    if name == "chsh":
        return chsh_setup(p)
    if name == "chain3":
        return chain3_setup(p, theta)
    if name == "cglmp3-nonmax":
        return cglmp_setup(3, state="nonmax")
    if name.startswith("cglmp") and name[5:].isdigit():
        return cglmp_setup(int(name[5:]), p)
    if name == "classical-uniform":
        return classical_uniform_setup()
    if name.startswith("explicit"):
        presets = explicit_presets(p)
        if name in presets:
            return presets[name]
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def resolve_setup(spec, p: float = 0.0, theta: float = 0.0) -> QuantumSetup:
    """A preset name or an inline setup dictionary."""
    if isinstance(spec, dict):
        return setup_from_dict(spec)
    return preset_setup(str(spec), p, theta)


def log_grid(start: float, stop: float, step: float) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return 10.0 ** np.linspace(start, start + (n - 1) * step, n)


# ----------------------------------------------------------- key-rate curves


@dataclass
class CurveResult:
    label: str
    model: AsymptoticModel
    points: list[RatePoint]

    @property
    def zero_crossing(self) -> float:
        return zero_crossing(self.points)

    def rates(self) -> np.ndarray:
        return np.array([pt.rate for pt in self.points])


def keyrate_curves(setups: dict[str, QuantumSetup], N_grid, settings: RateSettings | None = None, levels: int = 14):
    """Tuned finite-size rate curves for each labelled setup."""
    out = {}
    for label, setup in setups.items():
        model = asymptotic_model(setup)
        out[label] = CurveResult(label, model, rate_curve(model, N_grid, settings=settings, levels=levels))
    return out


def theta_sweep(thetas, N: float = 1e10, p: float = 0.02, settings: RateSettings | None = None, levels: int = 12):
    """Rate at fixed ``N`` for the tilted three-setting family, one point per angle."""
    out = []
    for th in thetas:
        try:
            model = asymptotic_model(chain3_setup(p, float(th)))
        except InfeasibleClassical:
            out.append((float(th), 0.0))
            continue
        pt = rate_curve(model, [N], settings=settings, levels=levels)[0]
        out.append((float(th), pt.rate))
    return out


# ---------------------------------------------------------- random settings


@dataclass
class TrialResult:
    violated: bool
    positive: bool
    rate: float = 0.0
    solver_failure: bool = False


def classify_key(
    setup: QuantumSetup,
    N: float = 1e12,
    settings: RateSettings | None = None,
) -> TrialResult:
    """Whether an honest run of ``setup`` yields a positive key at ``N`` rounds.

    Fractions are tuned against the chord between ``(c, 1)`` and one solved
    point just below the observed Bell value (concavity makes the chord an
    optimistic model), then the rate is evaluated with the guessing
    probability solved exactly at the tuned corrected Bell value.
    """
    try:
        model = asymptotic_model(setup)
    except InfeasibleClassical:
        return TrialResult(False, False)
    f = model.functional
    try:
        probe = model.beta - 1e-3 * (model.beta - f.c)
        g_probe = guessing_probability(f, probe).pg
        slope = (1.0 - g_probe) / (probe - f.c)

        def chord(beta):
            return max(1.0 / model.d, 1.0 - slope * (beta - f.c))

        tuned = tune_fractions(model, N, chord, settings)
        if tuned.report is None or tuned.rate <= 0:
            return TrialResult(True, False)
        exact = evaluate_rate(
            model, N, tuned.xi, tuned.eta, lambda b: guessing_probability(f, b).pg, settings
        )
    except SolverError:
        return TrialResult(True, False, solver_failure=True)
    return TrialResult(True, exact.rate > 0, exact.rate)


@dataclass
class FractionCell:
    label: str
    p: float
    n_trials: int
    n_violated: int
    n_positive: int
    n_solver_failures: int

    @property
    def fraction(self) -> float:
        return float(self.n_positive / self.n_trials)

    def wilson(self) -> tuple[float, float]:
        ci = binomtest(self.n_positive, self.n_trials).proportion_ci(0.95, method="wilson")
        return float(ci.low), float(ci.high)

    def to_dict(self) -> dict:
        lo, hi = self.wilson()
        return {
            "cell": self.label,
            "p": self.p,
            "trials": self.n_trials,
            "violated": self.n_violated,
            "positive": self.n_positive,
            "fraction": self.fraction,
            "wilson_low": lo,
            "wilson_high": hi,
            "solver_failures": self.n_solver_failures,
        }


def random_settings_fraction(
    kind: str,
    size: int,
    p: float,
    n_trials: int,
    seed=None,
    N: float = 1e12,
    settings: RateSettings | None = None,
    workers: int | None = None,
) -> FractionCell:
    """Fraction of random settings that give a positive key.

    ``kind="qubit"``: ``size`` settings per party on the noisy Bell state.
    ``kind="qudit"``: two settings per party on noisy maximally entangled
    qudits of dimension ``size``. Key settings are fixed to the computational
    basis; every other setting is Haar random.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if kind == "qubit":
        def make(rng):
            return random_qubit_setup(size, p, rng)
        label = f"[{size},2]"
    elif kind == "qudit":
        def make(rng):
            return random_qudit_setup(size, p, rng)
        label = f"[2,{size}]"
    else:
        raise ValueError(f"unknown kind {kind!r}")

    def one(ss):
        return classify_key(make(np.random.default_rng(ss)), N, settings)

    seeds = trial_seeds(seed, n_trials)
    workers = thread_count() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    return FractionCell(
        label,
        p,
        n_trials,
        int(sum(r.violated for r in results)),
        int(sum(r.positive for r in results)),
        int(sum(r.solver_failure for r in results)),
    )


# ------------------------------------------------------ subset comparisons


def chsh_variants() -> np.ndarray:
    """All relabelings of the CHSH coefficient table."""
    chsh = chsh_functional()
    return np.unique(chsh.h[symmetry_permutations(chsh.scenario)], axis=0)


@dataclass
class SubsetModel:
    settings_alice: tuple[int, int]
    settings_bob: tuple[int, int]
    model: AsymptoticModel


def best_chsh_subsets(setup: QuantumSetup) -> list[SubsetModel]:
    """Every two-setting-per-party subset containing Alice's key setting, with its best CHSH form.

    Subsets without a violation are dropped.
    """
    P = born_probabilities(setup)
    if P.scenario.d != 2:
        raise ValueError("CHSH subsets need two outcomes")
    variants = chsh_variants()
    base = chsh_functional()
    qber = key_qber(setup)
    out = []
    for xs in itertools.combinations(range(P.scenario.m_a), 2):
        if 0 not in xs:
            continue
        for ys in itertools.combinations(range(P.scenario.m_b), 2):
            sub = P.restrict(xs, ys)
            vals = variants @ sub.entries
            k = int(np.argmax(vals))
            if vals[k] <= base.c:
                continue
            f = BellFunctional(base.scenario, variants[k], base.c)
            out.append(SubsetModel(xs, ys, AsymptoticModel(f, float(vals[k]), qber, 8.0, sub)))
    return out


def subset_rate_curve(setup: QuantumSetup, N_grid, settings: RateSettings | None = None) -> list[float]:
    """Best rate over CHSH subsets (analytic CHSH guessing bound) per ``N``."""
    subsets = best_chsh_subsets(setup)
    rates = []
    for N in N_grid:
        best = 0.0
        for s in subsets:
            best = max(best, tune_fractions(s.model, float(N), chsh_guessing_probability, settings).rate)
        rates.append(best)
    return rates


def normalized_rates(points: list[RatePoint], d: int) -> np.ndarray:
    return np.array([pt.rate for pt in points]) / math.log2(d)


def default_settings(eps_c: float = DEFAULT_EPS_C, eps_s: float = DEFAULT_EPS_S, **overrides) -> RateSettings:
    return RateSettings(eps_c, eps_s, overrides)


__all__ = [
    "PRESETS",
    "CurveResult",
    "FractionCell",
    "GuessingCurve",
    "SubsetModel",
    "TrialResult",
    "best_chsh_subsets",
    "chsh_variants",
    "classify_key",
    "default_settings",
    "keyrate_curves",
    "log_grid",
    "normalized_rates",
    "preset_setup",
    "random_settings_fraction",
    "resolve_setup",
    "subset_rate_curve",
    "theta_sweep",
]
