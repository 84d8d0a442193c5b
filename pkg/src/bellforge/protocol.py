"""Monte-Carlo simulation of honest protocol runs.

Each round is a key round (``t = 0``, inputs ``(0, key)``) or, with
probability ``xi``, a parameter-estimation round with uniform inputs. The
parameter-estimation rounds are split in transcript order into three sets:
the first fixes the Bell functional, the second estimates its value and the
third tests that estimate. A sample of ``N * eta`` key rounds, drawn without
replacement, estimates the error rate.

Two modes produce the same distribution of outcomes. ``"transcript"`` draws
every round explicitly; ``"counts"`` draws the multinomial and hypergeometric
counts directly and scales to very large ``N``.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import binomtest

from .behavior import BehaviorVector, Scenario
from .conic import SolverError
from .finitekey import KeyLengthReport, NoRootError, ProtocolParams, gamma_range, key_length
from .npa import guessing_probability, quantum_maximum
from .polytope import BellFunctional, InfeasibleClassical, no_signalling_projection, optimal_hyperplane
from .quantum import QuantumSetup, born_probabilities

ABORT_REASONS = ("empty-pe-pair", "classical-P1", "bell-test-failed", "qber-test-failed")
THREADS_ENV = "BELLFORGE_THREADS"
TRANSCRIPT_MAX_ROUNDS = 2_000_000
# keep the corrected Bell value strictly inside the quantum set
QMAX_MARGIN = 1e-6

RECORD_DTYPE = np.dtype([("t", np.uint8), ("x", np.int16), ("y", np.int16), ("a", np.int16), ("b", np.int16)])


class RoundRecord(NamedTuple):
    t: int
    x: int
    y: int
    a: int
    b: int


def thread_count() -> int:
    """Worker count from ``BELLFORGE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_setup(setup: QuantumSetup):
    if setup.bob.n_settings < 2:
        raise ValueError("Bob needs at least one test setting plus the key setting")


def _joint_table(setup: QuantumSetup) -> np.ndarray:
    """``P[x, y, a, b]`` over all of Alice's and all of Bob's settings, key included."""
    full = born_probabilities(setup, range(setup.alice.n_settings), range(setup.bob.n_settings))
    # drop rounding-level probabilities so that impossible outcomes never occur
    table = np.where(full.table < 1e-14, 0.0, full.table)
    return table / table.sum(axis=(2, 3), keepdims=True)


def _sample_outcomes(table: np.ndarray, x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    d = table.shape[2]
    cum = np.cumsum(table.reshape(table.shape[0], table.shape[1], d * d), axis=2)
    cum[..., -1] = 1.0
    u = rng.random(x.size)
    flat = np.empty(x.size, dtype=np.int64)
    # sample pair by pair to avoid materializing an (N, d^2) array
    for xi in range(table.shape[0]):
        for yi in range(table.shape[1]):
            sel = (x == xi) & (y == yi)
            if np.any(sel):
                flat[sel] = np.searchsorted(cum[xi, yi], u[sel], side="right")
    return flat // d, flat % d


def simulate_rounds(setup: QuantumSetup, params: ProtocolParams, seed=None) -> np.ndarray:
    """Full transcript as a structured array with fields ``t, x, y, a, b``."""
    _check_setup(setup)
    N = int(params.N)
    if N > TRANSCRIPT_MAX_ROUNDS:
        raise ValueError(f"transcripts are limited to {TRANSCRIPT_MAX_ROUNDS} rounds; use counts mode")
    rng = _rng(seed)
    m_a, m_key = setup.alice.n_settings, setup.bob.n_settings - 1
    t = rng.random(N) < params.xi
    x = np.where(t, rng.integers(0, m_a, N), 0)
    y = np.where(t, rng.integers(0, m_key, N), m_key)
    a, b = _sample_outcomes(_joint_table(setup), x, y, rng)
    out = np.empty(N, dtype=RECORD_DTYPE)
    out["t"], out["x"], out["y"], out["a"], out["b"] = t, x, y, a, b
    return out


def iter_records(transcript: np.ndarray):
    for row in transcript:
        yield RoundRecord(*(int(v) for v in row))


# ----------------------------------------------------------------- outcome


@dataclass
class RunOutcome:
    status: str
    reason: str | None = None
    functional: BellFunctional | None = None
    b2: float = float("nan")
    b3: float = float("nan")
    q_hat: float = float("nan")
    delta_est: float = float("nan")
    delta_con: float = float("nan")
    beta: float = float("nan")
    pg: float = float("nan")
    report: KeyLengthReport | None = None
    counts: dict = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def to_dict(self) -> dict:
        def num(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "status": self.status,
            "reason": self.reason,
            "functional": None if self.functional is None else self.functional.to_dict(),
            "b2": num(self.b2),
            "b3": num(self.b3),
            "q_hat": num(self.q_hat),
            "delta_est": num(self.delta_est),
            "delta_con": num(self.delta_con),
            "beta": num(self.beta),
            "pg": num(self.pg),
            "report": None if self.report is None else self.report.to_dict(),
            "counts": self.counts,
        }


@dataclass
class _Statistics:
    """Sufficient statistics of one run, however they were produced."""

    pe_counts: list[np.ndarray]  # three (m_a, m_b, d, d) count arrays
    n_key_rounds: int
    n_sampled: int
    sample_errors: int
    remaining_errors: int


def _split_sizes(n: int) -> tuple[int, int, int]:
    third = n // 3
    return third, third, n - 2 * third


def _statistics_from_transcript(tr: np.ndarray, scen: Scenario, params: ProtocolParams, rng) -> _Statistics:
    pe = tr[tr["t"] == 1]
    sizes = _split_sizes(pe.size)
    bounds = np.cumsum((0,) + sizes)
    sets = []
    for k in range(3):
        part = pe[bounds[k] : bounds[k + 1]]
        c = np.zeros(scen.shape, dtype=np.int64)
        np.add.at(c, (part["x"], part["y"], part["a"], part["b"]), 1)
        sets.append(c)
    key = tr[tr["t"] == 0]
    n_s = min(int(round(params.n_sample)), key.size)
    order = rng.permutation(key.size)
    errors = key["a"] != key["b"]
    sample_err = int(errors[order[:n_s]].sum())
    return _Statistics(sets, key.size, n_s, sample_err, int(errors.sum()) - sample_err)


def _statistics_from_counts(table: np.ndarray, scen: Scenario, params: ProtocolParams, rng) -> _Statistics:
    N = int(params.N)
    n_pe = int(rng.binomial(N, params.xi))
    m_a, m_b, d = scen.m_a, scen.m_b, scen.d
    pe_table = table[:, :m_b]
    sets = []
    for size in _split_sizes(n_pe):
        pairs = rng.multinomial(size, np.full(m_a * m_b, 1.0 / (m_a * m_b))).reshape(m_a, m_b)
        c = np.zeros(scen.shape, dtype=np.int64)
        for x in range(m_a):
            for y in range(m_b):
                c[x, y] = rng.multinomial(pairs[x, y], pe_table[x, y].reshape(-1)).reshape(d, d)
        sets.append(c)
    n_key = N - n_pe
    key_joint = table[0, m_b].reshape(-1)
    key_counts = rng.multinomial(n_key, key_joint)
    errors = int(key_counts.sum() - np.trace(key_counts.reshape(d, d)))
    n_s = min(int(round(params.n_sample)), n_key)
    sample_err = int(rng.hypergeometric(errors, n_key - errors, n_s)) if n_s > 0 and n_key > 0 else 0
    return _Statistics(sets, n_key, n_s, sample_err, errors - sample_err)


def _frequencies(scen: Scenario, counts: np.ndarray) -> BehaviorVector | None:
    if np.any(counts.sum(axis=(2, 3)) == 0):
        return None
    return BehaviorVector.from_counts(scen, counts)


def run_protocol(
    setup: QuantumSetup,
    params: ProtocolParams,
    seed=None,
    mode: str = "auto",
    transcript: np.ndarray | None = None,
) -> RunOutcome:
    """One honest run: functional from set 1, estimate on set 2, test on set 3, QBER sample, key length.

    ``mode`` is ``"transcript"``, ``"counts"`` or ``"auto"`` (transcript up to
    ``TRANSCRIPT_MAX_ROUNDS`` rounds). A supplied ``transcript`` is used as is.
    """
    _check_setup(setup)
    if setup.d != params.d:
        raise ValueError(f"setup has {setup.d} outcomes but params say d={params.d}")
    rng = _rng(seed)
    scen = setup.pe_scenario
    if transcript is not None:
        mode = "transcript"
    elif mode == "auto":
        mode = "transcript" if params.N <= TRANSCRIPT_MAX_ROUNDS else "counts"
    if mode == "transcript":
        if transcript is None:
            transcript = simulate_rounds(setup, params, rng)
        stats = _statistics_from_transcript(transcript, scen, params, rng)
    elif mode == "counts":
        stats = _statistics_from_counts(_joint_table(setup), scen, params, rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    counts = {
        "pe_sets": [int(c.sum()) for c in stats.pe_counts],
        "key_rounds": stats.n_key_rounds,
        "qber_sample": stats.n_sampled,
        "mode": mode,
    }
    freqs = [_frequencies(scen, c) for c in stats.pe_counts]
    if any(f is None for f in freqs):
        return RunOutcome("aborted", "empty-pe-pair", counts=counts)
    p1, p2, p3 = freqs

    # signalling components of the frequencies are sampling noise; without
    # the projection almost every finite sample would look nonlocal
    try:
        f = optimal_hyperplane(no_signalling_projection(p1))
    except InfeasibleClassical:
        return RunOutcome("aborted", "classical-P1", counts=counts)

    # estimator range from the input frequencies of set 1, fixed before sets 2 and 3 are read
    n_xy = stats.pe_counts[0].sum(axis=(2, 3))
    gamma = gamma_range(f, n_xy / n_xy.sum())
    d_est, d_con = params.deltas(gamma)
    b2, b3 = f.value(p2), f.value(p3)
    out = RunOutcome("aborted", None, f, b2, b3, delta_est=d_est, delta_con=d_con, counts=counts)
    if b3 < b2 - d_est:
        out.reason = "bell-test-failed"
        return out

    if stats.n_sampled < 1:
        raise ValueError("no key rounds were sampled for the error rate; increase eta")
    out.q_hat = stats.sample_errors / stats.n_sampled
    try:
        width = params.qber_width(out.q_hat)
    except NoRootError:
        out.reason = "qber-test-failed"
        return out
    n_rest = stats.n_key_rounds - stats.n_sampled
    remaining = stats.remaining_errors / n_rest if n_rest > 0 else 0.0
    # error correction fails when the unsampled error rate exceeds the bound
    if remaining > out.q_hat + width:
        out.reason = "qber-test-failed"
        return out

    beta = b2 - d_est - d_con
    if beta > f.c:
        qmax = quantum_maximum(f)
        beta = min(beta, qmax - QMAX_MARGIN * (qmax - f.c))
        pg = guessing_probability(f, beta).pg
    else:
        pg = 1.0
    out.beta, out.pg = beta, pg
    out.report = key_length(params, pg, out.q_hat)
    out.status = "completed"
    return out


# ----------------------------------------------------------------- batches


@dataclass
class AbortStatistics:
    n_trials: int
    n_aborted: int
    ci_low: float
    ci_high: float
    reasons: dict
    solver_failures: int = 0

    @property
    def fraction(self) -> float:
        return self.n_aborted / self.n_trials

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_aborted": self.n_aborted,
            "fraction": self.fraction,
            "wilson95": [self.ci_low, self.ci_high],
            "reasons": self.reasons,
            "solver_failures": self.solver_failures,
        }


def trial_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent per-trial streams derived from ``seed``."""
    return np.random.SeedSequence(seed).spawn(n)


def abort_statistics(
    setup: QuantumSetup,
    params: ProtocolParams,
    n_trials: int,
    seed=None,
    mode: str = "auto",
    workers: int | None = None,
) -> AbortStatistics:
    """Fraction of aborted honest runs with a Wilson 95% interval.

    Runs whose final SDP fails are counted separately and not as aborts.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    seeds = trial_seeds(seed, n_trials)

    def one(ss):
        try:
            return run_protocol(setup, params, np.random.default_rng(ss), mode).reason or "completed"
        except SolverError:
            return "solver-failure"

    workers = thread_count() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    tally = Counter(results)
    failures = tally.pop("solver-failure", 0)
    n_valid = n_trials - failures
    aborted = sum(v for k, v in tally.items() if k != "completed")
    if n_valid:
        ci = binomtest(aborted, n_valid).proportion_ci(confidence_level=0.95, method="wilson")
        lo, hi = float(ci.low), float(ci.high)
    else:
        lo, hi = 0.0, 1.0
    return AbortStatistics(n_valid, aborted, lo, hi, dict(sorted(tally.items())), failures)
