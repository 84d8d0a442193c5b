"""Level-2 moment relaxation and device-independent guessing probability.

Operators are projectors ``A[x, a]`` and ``B[y, b]`` with ``a, b < d - 1``;
the last outcome of every setting is eliminated through completeness. The
basis holds the identity, single projectors, Alice-Bob products and ordered
products of two Alice (or two Bob) projectors belonging to different
settings. Words are reduced with idempotency, orthogonality within a setting
and commutation between the parties.

By default a word and its adjoint share one real variable. This real
symmetric relaxation is exact for the problems solved here: the objective and
constraints are real, so the real part of any feasible complex moment matrix
is feasible with the same value. The Hermitian form (``real=False``) keeps
separate real and imaginary parts and goes through the doubling embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .behavior import BehaviorVector, Scenario
from .conic import SemidefiniteProgram, SolveReport, SolverError, complex_program, solve_sdp
from .polytope import BellFunctional

# Symbols are (party, setting, outcome); party 0 = Alice, 1 = Bob.
Symbol = tuple[int, int, int]
Word = tuple[Symbol, ...]

PG_CLIP_TOL = 1e-6


class BetaAboveQuantumMaximum(SolverError):
    """The requested Bell value is not attainable by the relaxation."""


def _reduce_party(word: Word) -> Word | None:
    """Apply idempotency and orthogonality to a single-party word; None if zero."""
    out: list[Symbol] = []
    for s in word:
        if out and out[-1][1] == s[1]:
            if out[-1][2] == s[2]:
                continue
            return None
        out.append(s)
    return tuple(out)


def reduce_word(word: Word) -> Word | None:
    """Canonical form: Alice symbols first (Alice and Bob commute), then reduce."""
    alice = _reduce_party(tuple(s for s in word if s[0] == 0))
    if alice is None:
        return None
    bob = _reduce_party(tuple(s for s in word if s[0] == 1))
    if bob is None:
        return None
    return alice + bob


def adjoint(word: Word) -> Word:
    alice = tuple(s for s in word if s[0] == 0)[::-1]
    bob = tuple(s for s in word if s[0] == 1)[::-1]
    return alice + bob


@dataclass(frozen=True)
class MonomialBasis:
    scenario: Scenario
    words: tuple[Word, ...]

    @property
    def size(self) -> int:
        return len(self.words)

    def index(self, word: Word) -> int:
        return self.words.index(word)


def build_basis(scenario: Scenario) -> MonomialBasis:
    """Identity, A, B, AB, AA' and BB' words (ordered, different settings)."""
    d = scenario.d
    alice = [(0, x, a) for x in range(scenario.m_a) for a in range(d - 1)]
    bob = [(1, y, b) for y in range(scenario.m_b) for b in range(d - 1)]
    words: list[Word] = [()]
    words += [(s,) for s in alice]
    words += [(s,) for s in bob]
    words += [(sa, sb) for sa in alice for sb in bob]
    words += [(s, t) for s in alice for t in alice if s[1] != t[1]]
    words += [(s, t) for s in bob for t in bob if s[1] != t[1]]
    return MonomialBasis(scenario, tuple(words))


def basis_size(scenario: Scenario) -> int:
    """``1 + n_A + n_B + n_A n_B`` plus the ordered cross-setting pairs."""
    d1 = scenario.d - 1
    n_a, n_b = scenario.m_a * d1, scenario.m_b * d1
    cross_a = scenario.m_a * (scenario.m_a - 1) * d1 * d1
    cross_b = scenario.m_b * (scenario.m_b - 1) * d1 * d1
    return 1 + n_a + n_b + n_a * n_b + cross_a + cross_b


@dataclass(frozen=True)
class MomentStructure:
    """Variable layout of one moment matrix.

    ``entries`` lists ``(row, col, var, coeff)`` for the upper triangle:
    ``Gamma[row, col] = sum coeff * y[var]`` (coeff is complex for the
    imaginary parts in the Hermitian form). ``behavior_map`` is the
    ``(D, n_vars)`` matrix sending moments to behavior entries and
    ``marginal_map[x]`` the ``(d, n_vars)`` matrix giving ``P(a | x)``.
    """

    basis: MonomialBasis
    n_vars: int
    entries: tuple
    behavior_map: np.ndarray
    marginal_map: np.ndarray
    real: bool
    var_words: tuple = field(default=())

    @property
    def identity_var(self) -> int:
        return 0


@lru_cache(maxsize=16)
def moment_structure(scenario: Scenario, real: bool = True) -> MomentStructure:
    basis = build_basis(scenario)
    n = basis.size
    var_of: dict[Word, int] = {(): 0}
    var_words: list[Word] = [()]
    imag_of: dict[Word, int] = {}
    entries = []

    def var_for(word: Word) -> list[tuple[int, complex]]:
        adj = reduce_word(adjoint(word))
        key = min(word, adj)
        if key not in var_of:
            var_of[key] = len(var_words)
            var_words.append(key)
        terms = [(var_of[key], 1.0)]
        if not real and adj != word:
            if key not in imag_of:
                imag_of[key] = len(var_words)
                var_words.append(("imag",) + key)  # type: ignore[operator]
            terms.append((imag_of[key], 1j if word == key else -1j))
        return terms

    for r in range(n):
        for c in range(r, n):
            w = reduce_word(adjoint(basis.words[r]) + basis.words[c])
            if w is None:
                continue
            for var, coeff in var_for(w):
                entries.append((r, c, var, coeff))
    n_vars = len(var_words)

    def moment(word: Word) -> np.ndarray:
        vec = np.zeros(n_vars)
        w = reduce_word(word)
        if w is None:
            return vec
        adj = reduce_word(adjoint(w))
        vec[var_of[min(w, adj)]] = 1.0
        return vec

    d = scenario.d

    def proj_terms(party: int, setting: int, outcome: int):
        # Pi_{d-1} = 1 - sum_{k<d-1} Pi_k
        if outcome < d - 1:
            return [((party, setting, outcome), 1.0)]
        return [(None, 1.0)] + [((party, setting, k), -1.0) for k in range(d - 1)]

    beh = np.zeros((scenario.dim, n_vars))
    for x in range(scenario.m_a):
        for y in range(scenario.m_b):
            for a in range(d):
                for b in range(d):
                    row = scenario.index(x, y, a, b)
                    for sa, ca in proj_terms(0, x, a):
                        for sb, cb in proj_terms(1, y, b):
                            word = tuple(s for s in (sa, sb) if s is not None)
                            beh[row] += ca * cb * moment(word)
    marg = np.zeros((scenario.m_a, d, n_vars))
    for x in range(scenario.m_a):
        for a in range(d):
            for s, ca in proj_terms(0, x, a):
                marg[x, a] += ca * moment(() if s is None else (s,))
    return MomentStructure(basis, n_vars, tuple(entries), beh, marg, real, tuple(var_words))


def _coefficient_map(struct: MomentStructure, offset: int, m_total: int):
    """Sparse map for ``Z = -sum y_i A_i = Gamma`` of one block (C = 0)."""
    n = struct.basis.size
    rows, cols, vals = [], [], []
    for r, c, var, coeff in struct.entries:
        coeff = complex(coeff)
        if r == c:
            rows.append(offset + var)
            cols.append(r * n + c)
            vals.append(-coeff)
        else:
            rows += [offset + var, offset + var]
            cols += [r * n + c, c * n + r]
            vals += [-coeff, -coeff.conjugate()]
    if struct.real:
        return sp.csr_matrix((np.real(vals), (rows, cols)), shape=(m_total, n * n))
    mats = np.zeros((m_total, n, n), dtype=complex)
    for i, col, v in zip(rows, cols, vals):
        mats[i, col // n, col % n] += v
    return mats


@dataclass
class GuessingBound:
    functional: BellFunctional
    beta: float
    key_setting: int
    pg: float
    hmin: float
    report: SolveReport | None
    behavior: BehaviorVector | None = None

    @property
    def hmin_normalized(self) -> float:
        return self.hmin / math.log2(self.functional.scenario.d)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "key_setting": self.key_setting,
            "pg": self.pg,
            "hmin": self.hmin,
            "hmin_normalized": self.hmin_normalized,
            "report": None if self.report is None else self.report.to_dict(),
        }


def _assemble(struct: MomentStructure, n_blocks: int, objective_rows, eq_rows, eq_rhs):
    m_one = struct.n_vars
    m_total = n_blocks * m_one
    n = struct.basis.size
    maps = [_coefficient_map(struct, k * m_one, m_total) for k in range(n_blocks)]
    b = np.concatenate(objective_rows)
    E = np.array([np.concatenate(row) for row in eq_rows])
    e = np.asarray(eq_rhs, dtype=float)
    if struct.real:
        return SemidefiniteProgram([n] * n_blocks, b, maps, None, E, e)
    return complex_program([n] * n_blocks, b, maps, None, E, e)


def _behavior_from(struct: MomentStructure, y_total: np.ndarray, n_blocks: int) -> BehaviorVector | None:
    y_sum = y_total.reshape(n_blocks, struct.n_vars).sum(axis=0)
    p = struct.behavior_map @ y_sum
    p = np.clip(p, 0.0, None)
    sums = p.reshape(struct.basis.scenario.shape).sum(axis=(2, 3), keepdims=True)
    p = (p.reshape(struct.basis.scenario.shape) / sums).reshape(-1)
    try:
        return BehaviorVector(struct.basis.scenario, p)
    except ValueError:
        return None


def guessing_probability(
    f: BellFunctional,
    beta: float,
    key_setting: int = 0,
    scenario: Scenario | None = None,
    real: bool = True,
    tol: float = 1e-8,
) -> GuessingBound:
    """Upper bound on Eve's probability of guessing Alice's key-setting outcome.

    One sub-normalized moment matrix per guess ``e``; constraints
    ``sum_e Gamma_e[1, 1] = 1`` and ``sum_e <G>_e = beta``; objective
    ``sum_e P_e(a = e | key_setting)``. Values of ``beta`` at or below the
    classical bound give the trivial bound 1 without solving.
    """
    scenario = f.scenario if scenario is None else scenario
    if scenario != f.scenario:
        raise ValueError("functional and scenario disagree")
    if not 0 <= key_setting < scenario.m_a:
        raise ValueError(f"key setting {key_setting} out of range")
    if beta <= f.c:
        return GuessingBound(f, beta, key_setting, 1.0, 0.0, None)
    struct = moment_structure(scenario, real)
    d = scenario.d
    m_one = struct.n_vars
    zeros = np.zeros(m_one)
    ident = np.zeros(m_one)
    ident[0] = 1.0
    bell_row = f.h @ struct.behavior_map
    objective = [struct.marginal_map[key_setting, e] for e in range(d)]
    prob = _assemble(struct, d, objective, [[ident] * d, [bell_row] * d], [1.0, beta])
    sol = solve_sdp(prob, tol=tol)
    rep = sol.report
    if rep.status == "infeasible":
        raise BetaAboveQuantumMaximum(f"Bell value {beta} is above the quantum maximum", rep)
    if rep.status != "optimal":
        # accept a slightly loose solve when it is clearly converged enough
        if not (rep.status in ("max-iterations", "numerical-error") and rep.gap < 1e-5 * (1 + abs(rep.primal_objective))):
            raise SolverError(f"guessing-probability SDP ended with status {rep.status}", rep)
    # the upper bound from the minimization side is the conservative value
    pg_raw = max(rep.primal_objective, rep.dual_objective) if np.isfinite(rep.dual_objective) else rep.primal_objective
    if pg_raw > 1 + PG_CLIP_TOL or pg_raw < 1 / d - PG_CLIP_TOL:
        raise SolverError(f"guessing probability {pg_raw} outside [1/d, 1]", rep)
    pg = float(min(1.0, max(1.0 / d, pg_raw)))
    return GuessingBound(f, beta, key_setting, pg, -math.log2(pg), rep, _behavior_from(struct, sol.y, d))


def quantum_maximum(f: BellFunctional, scenario: Scenario | None = None, real: bool = True, tol: float = 1e-9) -> float:
    """Level-2 upper bound on ``max h @ P`` over quantum behaviors."""
    scenario = f.scenario if scenario is None else scenario
    struct = moment_structure(scenario, real)
    ident = np.zeros(struct.n_vars)
    ident[0] = 1.0
    prob = _assemble(struct, 1, [f.h @ struct.behavior_map], [[ident]], [1.0])
    sol = solve_sdp(prob, tol=tol)
    rep = sol.report
    if rep.status != "optimal" and not rep.gap < 1e-6 * (1 + abs(rep.primal_objective)):
        raise SolverError(f"quantum-maximum SDP ended with status {rep.status}", rep)
    return float(rep.dual_objective)


def chsh_guessing_probability(beta: float) -> float:
    """Analytic CHSH bound ``1/2 + 1/2 sqrt(2 - beta^2 / 4)`` (clipped to 1 below 2)."""
    if beta <= 2:
        return 1.0
    return 0.5 + 0.5 * math.sqrt(max(0.0, 2 - beta * beta / 4))
