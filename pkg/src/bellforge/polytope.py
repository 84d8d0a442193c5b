"""Local polytope, classicality test and maximally violated Bell inequalities.

A Bell functional is a pair ``(h, c)``: ``h`` is a coefficient vector on
behaviors (same flat ``(x, y, a, b)`` order as :class:`BehaviorVector`) and
``c`` is its classical bound, ``max_v h @ v`` over the deterministic vertices.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .behavior import BehaviorVector, Scenario
from .conic import LinearProgram, SolverError, solve_lp

VERTEX_CAP = 2**20
VIOLATION_TOL = 1e-9
COEFF_TOL = 1e-9
CLASSICAL_TOL = 1e-9


class InfeasibleClassical(ValueError):
    """The behavior lies in the local polytope; no Bell inequality separates it."""

    def __init__(self, message: str, weights: np.ndarray | None = None, objective: float = 0.0):
        super().__init__(message)
        self.weights = weights
        self.objective = objective


# ---------------------------------------------------------------- vertices


@dataclass(frozen=True)
class DeterministicVertex:
    scenario: Scenario
    alice: tuple[int, ...]
    bob: tuple[int, ...]

    @property
    def vector(self) -> np.ndarray:
        s = self.scenario
        v = np.zeros(s.shape)
        for x, a in enumerate(self.alice):
            for y, b in enumerate(self.bob):
                v[x, y, a, b] = 1.0
        return v.reshape(-1)


def _check_cap(scenario: Scenario, cap: int):
    if scenario.n_vertices > cap:
        raise ValueError(f"{scenario.n_vertices} vertices exceed the cap of {cap}")


def enumerate_vertices(scenario: Scenario, cap: int = VERTEX_CAP):
    """All ``d**(m_a + m_b)`` deterministic strategies, last input fastest."""
    _check_cap(scenario, cap)
    for assign in itertools.product(range(scenario.d), repeat=scenario.m_a + scenario.m_b):
        yield DeterministicVertex(scenario, tuple(assign[: scenario.m_a]), tuple(assign[scenario.m_a :]))


@lru_cache(maxsize=32)
def vertex_matrix(scenario: Scenario, cap: int = VERTEX_CAP) -> np.ndarray:
    """Dense ``(n_vertices, D)`` 0/1 matrix with rows in :func:`enumerate_vertices` order."""
    _check_cap(scenario, cap)
    m_a, m_b, d = scenario.m_a, scenario.m_b, scenario.d
    assign = np.array(list(itertools.product(range(d), repeat=m_a + m_b)), dtype=np.int64).reshape(-1, m_a + m_b)
    n = assign.shape[0]
    out = np.zeros((n, m_a, m_b, d, d))
    rows = np.arange(n)
    for x in range(m_a):
        for y in range(m_b):
            out[rows, x, y, assign[:, x], assign[:, m_a + y]] = 1.0
    out = out.reshape(n, -1)
    out.setflags(write=False)
    return out


# --------------------------------------------------------------- functional


@dataclass(frozen=True)
class BellFunctional:
    """Hyperplane ``h @ P <= c`` valid for every local behavior."""

    scenario: Scenario
    h: np.ndarray
    c: float
    violation: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if h.size != self.scenario.dim:
            raise ValueError(f"functional has {h.size} coefficients, scenario needs {self.scenario.dim}")
        if np.max(np.abs(h), initial=0.0) > 1 + COEFF_TOL:
            raise ValueError("coefficients must lie in [-1, 1]")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "c", float(self.c))
        if self.scenario.n_vertices <= VERTEX_CAP:
            top = self.max_vertex_value()
            if top > self.c + VIOLATION_TOL:
                raise ValueError(f"classical bound {self.c} is exceeded by a vertex ({top})")

    @property
    def table(self) -> np.ndarray:
        return self.h.reshape(self.scenario.shape)

    def vertex_values(self) -> np.ndarray:
        return vertex_matrix(self.scenario) @ self.h

    def max_vertex_value(self) -> float:
        return float(self.vertex_values().max())

    def value(self, P: BehaviorVector) -> float:
        return bell_value(self, P)

    @classmethod
    def from_table(cls, scenario: Scenario, h, c: float | None = None) -> "BellFunctional":
        """Functional with ``c`` defaulting to the tight classical bound."""
        h = np.asarray(h, dtype=float).reshape(-1)
        if c is None:
            c = float((vertex_matrix(scenario) @ h).max())
        return cls(scenario, h, c)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "index_order": "x, y, a, b (row-major, 0-based)",
            "h": self.h.tolist(),
            "c": self.c,
            "violation": None if math.isnan(self.violation) else self.violation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BellFunctional":
        viol = data.get("violation")
        return cls(
            Scenario.from_dict(data["scenario"]),
            np.asarray(data["h"], dtype=float),
            float(data["c"]),
            float("nan") if viol is None else float(viol),
        )

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "BellFunctional":
        return cls.from_dict(json.loads(Path(path).read_text()))


def bell_value(f: BellFunctional, P: BehaviorVector) -> float:
    """``h @ P``."""
    if f.scenario != P.scenario:
        raise ValueError(f"functional scenario {f.scenario} does not match behavior scenario {P.scenario}")
    return float(f.h @ P.entries)


# ------------------------------------------------------------- classicality


@lru_cache(maxsize=32)
def _affine_hull(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and orthonormal basis of the local polytope's affine hull."""
    V = vertex_matrix(scenario)
    center = V.mean(axis=0)
    _, sv, vt = np.linalg.svd(V - center, full_matrices=False)
    rank = int(np.sum(sv > 1e-9 * sv[0]))
    basis = vt[:rank]
    center.setflags(write=False)
    basis.setflags(write=False)
    return center, basis


def no_signalling_projection(P: BehaviorVector) -> BehaviorVector:
    """Orthogonal projection onto the no-signalling subspace.

    This subspace is the affine hull of the local polytope. Entries pushed
    below zero by the projection are clipped and each block renormalized.
    """
    center, basis = _affine_hull(P.scenario)
    q = center + basis.T @ (basis @ (P.entries - center))
    q = np.clip(q, 0.0, None).reshape(P.scenario.shape)
    q = q / q.sum(axis=(2, 3), keepdims=True)
    return BehaviorVector(P.scenario, q.reshape(-1), kind=P.kind, counts=P.counts)


@dataclass
class ClassicalityResult:
    classical: bool
    distance: float
    weights: np.ndarray | None = None
    witness: BellFunctional | None = None

    def __bool__(self) -> bool:
        return self.classical


def is_classical(P: BehaviorVector, tol: float = CLASSICAL_TOL) -> ClassicalityResult:
    """Decide membership in the local polytope.

    Solves ``min ||V^T lam - P||_1`` over the probability simplex. A zero
    optimum (within ``tol``) returns the convex weights; otherwise the optimal
    duals form a Bell functional ``(h, c)`` with ``|h_i| <= 1`` and
    ``h @ P - c`` equal to the L1 distance.
    """
    s = P.scenario
    V = vertex_matrix(s)
    n, D = V.shape
    # variables: lam (n), s_plus (D), s_minus (D); maximize -(sum of slacks)
    obj = np.concatenate([np.zeros(n), -np.ones(2 * D)])
    a_eq = np.zeros((D + 1, n + 2 * D))
    a_eq[:D, :n] = V.T
    a_eq[:D, n : n + D] = np.eye(D)
    a_eq[:D, n + D :] = -np.eye(D)
    a_eq[D, :n] = 1.0
    b_eq = np.concatenate([P.entries, [1.0]])
    sol = solve_lp(LinearProgram(obj, A_eq=a_eq, b_eq=b_eq, lb=0.0))
    if not sol.report.ok:
        raise SolverError(f"classicality LP ended with status {sol.report.status}", sol.report)
    distance = max(0.0, -sol.objective)
    lam = np.clip(sol.x[:n], 0.0, None)
    if distance <= tol:
        return ClassicalityResult(True, distance, weights=lam / lam.sum())
    # duals of the maximization: y (D) and t; h = -y, c = t
    y, t = sol.dual_eq[:D], sol.dual_eq[D]
    h = np.clip(-y, -1.0, 1.0)
    c = float((V @ h).max())
    witness = BellFunctional(s, h, c, violation=float(h @ P.entries - c))
    return ClassicalityResult(False, distance, witness=witness)


def optimal_hyperplane(P: BehaviorVector, tol: float = VIOLATION_TOL) -> BellFunctional:
    """Maximally violated Bell inequality with coefficients in ``[-1, 1]``.

    LP over ``(h, c)``: maximize ``h @ P - c`` subject to ``h @ v <= c`` for all
    vertices. Raises :class:`InfeasibleClassical` when the optimum is not
    strictly positive.
    """
    s = P.scenario
    V = vertex_matrix(s)
    n, D = V.shape
    obj = np.concatenate([P.entries, [-1.0]])
    a_ub = np.hstack([V, -np.ones((n, 1))])
    lb = np.concatenate([-np.ones(D), [np.nan]])
    ub = np.concatenate([np.ones(D), [np.nan]])
    sol = solve_lp(LinearProgram(obj, A_ub=a_ub, b_ub=np.zeros(n), lb=lb, ub=ub))
    if not sol.report.ok:
        raise SolverError(f"Bell LP ended with status {sol.report.status}", sol.report)
    h = np.clip(sol.x[:D], -1.0, 1.0)
    h[np.abs(h) < 1e-12] = 0.0
    c = float((V @ h).max())
    violation = float(h @ P.entries - c)
    if violation <= tol:
        raise InfeasibleClassical(f"behavior is classical (optimal violation {violation:.3e})", objective=violation)
    return BellFunctional(s, h, c, violation=violation, meta={"lp_iterations": sol.report.iterations})


# ---------------------------------------------------------------- symmetry


def symmetry_permutations(scenario: Scenario, party_swap: bool = True) -> np.ndarray:
    """Index permutations of behavior vectors under relabelings.

    Rows are permutations ``pi`` such that ``h[pi]`` is the relabeled
    functional. Generated by outcome permutations per setting, setting
    permutations per party and (for ``m_a == m_b``) exchanging the parties.
    """
    m_a, m_b, d = scenario.m_a, scenario.m_b, scenario.d
    idx = np.arange(scenario.dim).reshape(scenario.shape)
    outcome_perms = list(itertools.permutations(range(d)))
    perms = []
    swaps = [False, True] if party_swap and m_a == m_b else [False]
    for sa in itertools.permutations(range(m_a)):
        for sb in itertools.permutations(range(m_b)):
            base = idx[np.ix_(sa, sb)]
            for oa in itertools.product(outcome_perms, repeat=m_a):
                t1 = np.stack([base[x][:, list(oa[x]), :] for x in range(m_a)])
                for ob in itertools.product(outcome_perms, repeat=m_b):
                    t2 = np.stack([t1[:, y][:, :, list(ob[y])] for y in range(m_b)], axis=1)
                    for swap in swaps:
                        t = t2.transpose(1, 0, 3, 2) if swap else t2
                        perms.append(t.reshape(-1))
    return np.unique(np.array(perms), axis=0)


def equivalent(f: BellFunctional, g: BellFunctional, tol: float = 1e-7, party_swap: bool = True) -> bool:
    """True if ``g`` is a relabeling of ``f`` up to positive scale and offsets.

    Offsets that vanish on no-signalling behaviors are absorbed by comparing
    ``h @ v - c`` on every deterministic vertex rather than the raw
    coefficients.
    """
    if f.scenario != g.scenario:
        return False
    V = vertex_matrix(f.scenario)
    target = V @ g.h - g.c
    perms = symmetry_permutations(f.scenario, party_swap)
    vals = V @ f.h[perms].T - f.c  # (n_vertices, n_perms)
    tnorm = float(target @ target)
    if tnorm == 0.0:
        return bool(np.all(np.abs(vals) <= tol))
    scale = (target @ vals) / tnorm
    resid = np.linalg.norm(vals - np.outer(target, scale), axis=0)
    ok = (scale > 0) & (resid <= tol * np.maximum(1.0, np.linalg.norm(vals, axis=0)))
    return bool(np.any(ok))


# ----------------------------------------------------------------- tables


def _fmt(v: float) -> str:
    text = repr(float(v))
    if text.endswith(".0"):
        text = text[:-2]
    return "0" if text == "-0" else text


def render_tabular(f: BellFunctional) -> str:
    """Block table with ``m_a * d`` rows and ``m_b * d`` columns.

    Block ``(x, y)`` holds ``h[x, y, a, b]`` with ``a`` down the rows and ``b``
    across the columns. The first line records the scenario and the bound.
    """
    s = f.scenario
    t = f.table
    cells = [[_fmt(t[x, y, a, b]) for y in range(s.m_b) for b in range(s.d)] for x in range(s.m_a) for a in range(s.d)]
    width = max(len(c) for row in cells for c in row)
    lines = [f"# m_a={s.m_a} m_b={s.m_b} d={s.d} c={_fmt(f.c)}"]
    for r, row in enumerate(cells):
        if r and r % s.d == 0:
            lines.append("-+-".join("-" * ((width + 1) * s.d - 1) for _ in range(s.m_b)))
        groups = [" ".join(c.rjust(width) for c in row[y * s.d : (y + 1) * s.d]) for y in range(s.m_b)]
        lines.append(" | ".join(groups))
    return "\n".join(lines) + "\n"


def parse_tabular(text: str, d: int | None = None, c: float | None = None) -> BellFunctional:
    """Inverse of :func:`render_tabular`.

    Without a header line, ``d`` must be given (or is inferred from the ``|``
    column groups) and ``c`` defaults to the tight classical bound.
    """
    header = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    header[k] = v
            continue
        if set(line) <= set("-+ "):
            continue
        groups = [g.split() for g in line.split("|")]
        rows.append(groups)
    if not rows:
        raise ValueError("no table rows found")
    if "d" in header:
        d = int(header["d"])
    elif d is None:
        d = len(rows[0][0])
    m_b = len(rows[0])
    if any(len(r) != m_b or any(len(g) != d for g in r) for r in rows):
        raise ValueError("ragged table")
    if len(rows) % d:
        raise ValueError(f"{len(rows)} rows is not a multiple of d={d}")
    m_a = len(rows) // d
    scen = Scenario(m_a, m_b, d)
    h = np.zeros(scen.shape)
    for r, groups in enumerate(rows):
        x, a = divmod(r, d)
        for y, g in enumerate(groups):
            for b, tok in enumerate(g):
                h[x, y, a, b] = float(tok)
    if c is None and "c" in header:
        c = float(header["c"])
    return BellFunctional.from_table(scen, h, c)


# ------------------------------------------------------- reference tables

CHSH_TABLE = """
 1 -1 |  1 -1
-1  1 | -1  1
------+------
 1 -1 | -1  1
-1  1 |  1 -1
"""

CGLMP3_TABLE = """
 1 -1  0 | -1  1  0
 0  1 -1 |  0 -1  1
-1  0  1 |  1  0 -1
---------+---------
 1  0 -1 |  1 -1  0
-1  1  0 |  0  1 -1
 0 -1  1 | -1  0  1
"""


def chsh_functional() -> BellFunctional:
    """CHSH in the +/-1 coefficient form, classical bound 2."""
    return parse_tabular(CHSH_TABLE, d=2)


def cglmp3_functional() -> BellFunctional:
    """Three-outcome two-setting functional equivalent to CGLMP."""
    return parse_tabular(CGLMP3_TABLE, d=3)
