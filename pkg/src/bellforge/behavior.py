"""Bell scenarios and behavior vectors.

A behavior is stored as a flat vector of length ``m_a * m_b * d**2`` indexed by
``(x, y, a, b)`` in row-major order: ``x`` slowest, then ``y``, ``a``, ``b``.
All indices are 0-based; outcome index 0 is the outcome labelled "1" in the
usual 1-based notation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BLOCK_SUM_TOL = 1e-9
NO_SIGNALLING_TOL = 1e-10


@dataclass(frozen=True)
class Scenario:
    """A bipartite ``[(m_a, m_b), d]`` Bell scenario."""

    m_a: int
    m_b: int
    d: int

    def __post_init__(self):
        if self.m_a < 1 or self.m_b < 1:
            raise ValueError(f"need at least one setting per party, got {self.m_a}, {self.m_b}")
        if self.d < 2:
            raise ValueError(f"need at least two outcomes, got d={self.d}")

    @property
    def dim(self) -> int:
        """Length of a behavior vector, ``m_a * m_b * d**2``."""
        return self.m_a * self.m_b * self.d * self.d

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.m_a, self.m_b, self.d, self.d)

    @property
    def n_vertices(self) -> int:
        return self.d ** (self.m_a + self.m_b)

    def index(self, x: int, y: int, a: int, b: int) -> int:
        return int(np.ravel_multi_index((x, y, a, b), self.shape))

    def to_dict(self) -> dict:
        return {"m_a": self.m_a, "m_b": self.m_b, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(int(data["m_a"]), int(data["m_b"]), int(data["d"]))


@dataclass(frozen=True)
class BehaviorVector:
    """Joint conditional probabilities or empirical frequencies ``P(a, b | x, y)``.

    ``kind`` is ``"probabilities"`` for exact Born-rule values and
    ``"frequencies"`` for values estimated from counts.
    """

    scenario: Scenario
    entries: np.ndarray
    kind: str = "probabilities"
    counts: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float).reshape(-1)
        if entries.size != self.scenario.dim:
            raise ValueError(f"behavior has {entries.size} entries, scenario needs {self.scenario.dim}")
        if self.kind not in ("probabilities", "frequencies"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if np.any(entries < 0):
            raise ValueError("behavior has negative entries")
        sums = entries.reshape(self.scenario.shape).sum(axis=(2, 3))
        if np.max(np.abs(sums - 1)) > BLOCK_SUM_TOL:
            raise ValueError("each (x, y) block of a behavior must sum to 1")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def table(self) -> np.ndarray:
        """View with shape ``(m_a, m_b, d, d)``."""
        return self.entries.reshape(self.scenario.shape)

    @classmethod
    def from_counts(cls, scenario: Scenario, counts: np.ndarray) -> "BehaviorVector":
        """Frequencies ``N(a, b, x, y) / N_{x,y}``; raises if some input pair was never seen."""
        counts = np.asarray(counts).reshape(scenario.shape)
        n_xy = counts.sum(axis=(2, 3))
        if np.any(n_xy == 0):
            raise ValueError("some input pair (x, y) has no rounds")
        freqs = counts / n_xy[:, :, None, None]
        return cls(scenario, freqs.reshape(-1), kind="frequencies", counts=counts.copy())

    @classmethod
    def uniform(cls, scenario: Scenario) -> "BehaviorVector":
        return cls(scenario, np.full(scenario.dim, 1.0 / scenario.d**2))

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Alice marginals ``P_A[x, y, a]`` and Bob marginals ``P_B[x, y, b]``."""
        t = self.table
        return t.sum(axis=3), t.sum(axis=2)

    def signalling_gap(self) -> float:
        """Largest violation of the no-signalling conditions."""
        pa, pb = self.marginals()
        gap_a = np.max(np.abs(pa - pa[:, :1, :])) if self.scenario.m_b > 1 else 0.0
        gap_b = np.max(np.abs(pb - pb[:1, :, :])) if self.scenario.m_a > 1 else 0.0
        return float(max(gap_a, gap_b))

    def is_no_signalling(self, tol: float = NO_SIGNALLING_TOL) -> bool:
        return self.signalling_gap() <= tol

    def restrict(self, settings_alice, settings_bob) -> "BehaviorVector":
        """Sub-behavior on a subset of the inputs (order as given)."""
        sa, sb = list(settings_alice), list(settings_bob)
        sub = self.table[np.ix_(sa, sb)]
        scen = Scenario(len(sa), len(sb), self.scenario.d)
        counts = None if self.counts is None else self.counts[np.ix_(sa, sb)]
        return BehaviorVector(scen, sub.reshape(-1), kind=self.kind, counts=counts)
