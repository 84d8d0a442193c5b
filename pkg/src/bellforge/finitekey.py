"""Statistical corrections and the finite-size key length.

Entropic quantities are in bits. Hoeffding bounds use natural logarithms.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .polytope import BellFunctional

DEFAULT_EPS_C = 1e-2
DEFAULT_EPS_S = 1e-5
DEFAULT_EPS_EC = 1e-10
GAMMA_EST_TOL = 1e-10


class NoRootError(ValueError):
    """The QBER tail equation has no sign change on its bracket."""


# ------------------------------------------------------------ Bell values


def gamma_range(f: BellFunctional, input_dist) -> float:
    """Range ``q_max - q_min`` of the single-round estimator ``h[x, y, a, b] / p(x, y)``."""
    s = f.scenario
    p = np.asarray(input_dist, dtype=float).reshape(s.m_a, s.m_b)
    table = f.table
    used = np.any(table != 0, axis=(2, 3))
    if np.any(used & (p <= 0)):
        raise ValueError("zero input probability on a setting pair with nonzero coefficients")
    if not np.any(used):
        return 0.0
    q = table[used] / p[used][:, None, None]
    # unused pairs still produce the estimator value 0
    lo, hi = float(q.min()), float(q.max())
    if not np.all(used):
        lo, hi = min(lo, 0.0), max(hi, 0.0)
    return hi - lo


def uniform_inputs(m_a: int, m_b: int) -> np.ndarray:
    return np.full((m_a, m_b), 1.0 / (m_a * m_b))


def _check_hoeffding(n_rounds: float, gamma: float):
    if not n_rounds >= 1:
        raise ValueError(f"need at least one round, got {n_rounds}")
    if not gamma > 0:
        raise ValueError(f"estimator range must be positive, got {gamma}")


def hoeffding_delta(epsilon: float, n_rounds: float, gamma: float) -> float:
    """Width ``delta`` with ``exp(-2 n delta^2 / gamma^2) = epsilon``."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    _check_hoeffding(n_rounds, gamma)
    return gamma * math.sqrt(math.log(1.0 / epsilon) / (2.0 * n_rounds))


def hoeffding_epsilon(delta: float, n_rounds: float, gamma: float) -> float:
    if not delta >= 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    _check_hoeffding(n_rounds, gamma)
    return math.exp(-2.0 * n_rounds * delta * delta / (gamma * gamma))


# ------------------------------------------------------------ QBER tail


def _stirling_remainder(n: float) -> float:
    """``ln Gamma(n + 1) - (n ln n - n)``, accurate for all ``n >= 0``."""
    if n < 10:
        return float(gammaln(n + 1.0)) - (n * math.log(n) - n if n > 0 else 0.0)
    inv = 1.0 / n
    inv2 = inv * inv
    return 0.5 * math.log(2.0 * math.pi * n) + inv * (1 / 12 - inv2 * (1 / 360 - inv2 / 1260))


def _phi(t: float) -> float:
    """``(1 + t) ln(1 + t) - t`` without cancellation near ``t = 0``."""
    if abs(t) < 1e-2:
        term, total = t * t, 0.0
        for k in range(2, 10):
            total += term / (k * (k - 1))
            term *= -t
        return total
    if t <= -1.0:
        return 1.0
    return (1.0 + t) * math.log1p(t) - t


def _tail_equation(n_key, n_sample, q_hat, eps):
    # ln C(n, k) = n h(k / n) + r(n) - r(k) - r(n - k), with h the entropy in
    # nats and r the Stirling remainder. The entropy parts combine into
    # -[b D(c || m) + a D(c + gamma || m)] with m the pooled rate, written in
    # terms of gamma directly so that nothing large cancels.
    a, b, c = float(n_key), float(n_sample), float(q_hat)
    r = _stirling_remainder
    base = r(b) - r(b * c) - r(b - b * c) + r(a) - r(a + b) - math.log(eps)

    def g(gam: float) -> float:
        cp = c + gam
        m = (b * c + a * cp) / (a + b)
        shift = gam / (a + b)  # m - c = a * shift, cp - m = b * shift
        div = 0.0
        if m > 0:
            div += b * m * _phi(-a * shift / m) + a * m * _phi(b * shift / m)
        if m < 1:
            div += b * (1 - m) * _phi(a * shift / (1 - m)) + a * (1 - m) * _phi(-b * shift / (1 - m))
        rem = -r(a * cp) - r(a - a * cp) + r(b * c + a * cp) + r(a + b - b * c - a * cp)
        return base + rem - div

    return g


def gamma_est(n_key: float, n_sample: float, q_hat: float, eps: float, tol: float = GAMMA_EST_TOL) -> float:
    """Upper-tail width for the unsampled error rate given a sampled rate ``q_hat``.

    Root in ``gamma`` of::

        ln C(b, b c) + ln C(a, a (c + gamma)) = ln C(a + b, (a + b) c + a gamma) + ln eps

    with ``(a, b, c) = (n_key, n_sample, q_hat)`` and ``C(n, k)`` the log-gamma
    extension of the binomial coefficient. Found by bisection on
    ``[0, 1 - q_hat]`` to relative width ``tol``. Returns 0 when the equation is
    already satisfied at ``gamma = 0`` (``eps`` close to 1).
    """
    if not (n_key >= 1 and n_sample >= 1):
        raise ValueError("n_key and n_sample must be at least 1")
    if not 0 <= q_hat < 1:
        raise ValueError(f"q_hat must lie in [0, 1), got {q_hat}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    g = _tail_equation(n_key, n_sample, q_hat, eps)
    hi = 1.0 - q_hat
    if g(0.0) <= 0:
        return 0.0
    if g(hi) > 1e-12:  # exact zeros at the bracket end round either way
        raise NoRootError(f"no root on [0, {hi}] for n_key={n_key}, n_sample={n_sample}, q_hat={q_hat}, eps={eps}")
    # halve the bracket until it straddles the root, so that the relative
    # tolerance stays meaningful for very small roots
    floor = hi * 2.0**-300
    while hi > floor and g(hi / 2) <= 0:
        hi /= 2
    lo = hi / 2
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi


# ------------------------------------------------------------ key length


def binary_entropy(q: float) -> float:
    if q <= 0 or q >= 1:
        return 0.0
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def f_entropy(q: float, d: int = 2) -> float:
    """``h(q) + q log2(d - 1)``, the error-correction cost per key round."""
    if not 0 <= q <= 1:
        raise ValueError(f"error rate must lie in [0, 1], got {q}")
    return binary_entropy(q) + q * math.log2(d - 1)


def f_envelope(q: float, d: int = 2) -> float:
    """Nondecreasing envelope of :func:`f_entropy`, capped at ``log2 d``."""
    return f_entropy(min(max(q, 0.0), (d - 1) / d), d)


def budget_epsilons(eps_c: float = DEFAULT_EPS_C, eps_s: float = DEFAULT_EPS_S, eps_ec: float = DEFAULT_EPS_EC) -> dict:
    """Split completeness and soundness targets into individual error terms.

    Completeness ``eps_est + eps_gamma_est`` is split in halves; soundness
    ``2 eps_EC + eps_s + eps_PA`` keeps ``eps_EC`` fixed and halves the rest.
    """
    if not (0 < eps_c < 1 and 0 < eps_s < 1):
        raise ValueError("targets must lie in (0, 1)")
    rest = eps_s - 2 * eps_ec
    if rest <= 0:
        raise ValueError(f"soundness target {eps_s} does not cover 2 * eps_EC = {2 * eps_ec}")
    half_c = eps_c / 2
    return {
        "eps_est": half_c,
        "eps_gamma_est": half_c,
        "eps_con": half_c,
        "eps_ECc": half_c,
        "eps_EC": eps_ec,
        "eps_EC_prime": eps_ec,
        "eps_s": rest / 2,
        "eps_PA": rest / 2,
    }


@dataclass(frozen=True)
class ProtocolParams:
    """Round counts, sampling fractions and error parameters.

    ``delta_est``, ``delta_con`` and ``gamma_est`` are derived from their
    epsilons when left as ``None``.
    """

    N: float
    xi: float
    eta: float
    d: int = 2
    eps_s: float = (DEFAULT_EPS_S - 2 * DEFAULT_EPS_EC) / 2
    eps_EC: float = DEFAULT_EPS_EC
    eps_EC_prime: float = DEFAULT_EPS_EC
    eps_ECc: float = DEFAULT_EPS_C / 2
    eps_est: float = DEFAULT_EPS_C / 2
    eps_con: float = DEFAULT_EPS_C / 2
    eps_gamma_est: float = DEFAULT_EPS_C / 2
    eps_PA: float = (DEFAULT_EPS_S - 2 * DEFAULT_EPS_EC) / 2
    delta_est: float | None = None
    delta_con: float | None = None
    gamma_est: float | None = None

    def __post_init__(self):
        if not self.N >= 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        if not (self.xi >= 0 and self.eta >= 0 and self.xi + self.eta <= 1):
            raise ValueError(f"need xi, eta >= 0 and xi + eta <= 1, got {self.xi}, {self.eta}")
        if self.d < 2:
            raise ValueError("d must be at least 2")
        for name in ("eps_s", "eps_EC", "eps_EC_prime", "eps_ECc", "eps_est", "eps_con", "eps_gamma_est", "eps_PA"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    @classmethod
    def from_budget(
        cls,
        N: float,
        xi: float,
        eta: float,
        d: int = 2,
        eps_c: float = DEFAULT_EPS_C,
        eps_s: float = DEFAULT_EPS_S,
        eps_ec: float = DEFAULT_EPS_EC,
        **overrides,
    ) -> "ProtocolParams":
        values = budget_epsilons(eps_c, eps_s, eps_ec)
        values.update(overrides)
        return cls(N=N, xi=xi, eta=eta, d=d, **values)

    def with_(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)

    @property
    def n_pe_subset(self) -> float:
        """Rounds in each of the three parameter-estimation subsets."""
        return self.N * self.xi / 3

    @property
    def n_key(self) -> float:
        return self.N * (1 - self.xi - self.eta)

    @property
    def n_sample(self) -> float:
        return self.N * self.eta

    def deltas(self, gamma: float) -> tuple[float, float]:
        """``(delta_est, delta_con)`` for an estimator with range ``gamma``."""
        d_est, d_con = self.delta_est, self.delta_con
        if d_est is None:
            d_est = hoeffding_delta(self.eps_est, self.n_pe_subset, gamma)
        if d_con is None:
            d_con = hoeffding_delta(self.eps_con, self.n_pe_subset, gamma)
        return d_est, d_con

    def qber_width(self, q_hat: float) -> float:
        if self.gamma_est is not None:
            return self.gamma_est
        if self.n_sample < 1:
            raise ValueError("no QBER sample (N * eta < 1); pass gamma_est explicitly")
        return gamma_est(self.n_key, self.n_sample, q_hat, self.eps_gamma_est)

    @property
    def completeness(self) -> float:
        return self.eps_est + self.eps_gamma_est

    @property
    def soundness(self) -> float:
        return 2 * self.eps_EC + self.eps_s + self.eps_PA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolParams":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names - {"eps_c", "eps_s_target"}
        if unknown:
            raise ValueError(f"unknown protocol parameters: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in names})

    @classmethod
    def load(cls, path) -> "ProtocolParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class KeyLengthReport:
    l: float
    rate: float
    hmin_term: float
    ec_term: float
    sqrtN_term: float
    constant_term: float
    completeness: float
    soundness: float
    pg: float
    q_hat: float
    gamma_est: float

    @property
    def raw(self) -> float:
        """Unclamped length ``hmin - ec - sqrtN - constant``."""
        return self.hmin_term - self.ec_term - self.sqrtN_term - self.constant_term

    def to_dict(self) -> dict:
        return asdict(self)


def finite_size_penalties(params: ProtocolParams) -> tuple[float, float]:
    """The ``sqrt(N)`` and constant penalty terms of the key length."""
    p = params
    chi = 4 * math.log2(2 * math.sqrt(p.d) + 1)
    sqrt_term = math.sqrt(p.N) * chi * (
        math.sqrt(math.log2(8 / p.eps_EC_prime**2)) + math.sqrt(math.log2(2 / p.eps_s**2))
    )
    const = (
        math.log2(8 / p.eps_EC_prime**2 + 2 / (2 - p.eps_EC_prime))
        + math.log2(1 / p.eps_EC)
        + 2 * math.log2(1 / (2 * p.eps_PA))
    )
    return sqrt_term, const


def key_length(params: ProtocolParams, pg: float, q_hat: float) -> KeyLengthReport:
    """Achievable key length for guessing bound ``pg`` and sampled QBER ``q_hat``.

    ``pg`` must already be evaluated at the corrected Bell value
    ``B[P2] - delta_est - delta_con``. The error-correction rate uses
    ``f(q_hat + gamma_est)`` through its nondecreasing envelope.
    """
    if not 0 < pg <= 1:
        raise ValueError(f"guessing probability must lie in (0, 1], got {pg}")
    p = params
    gam = p.qber_width(q_hat)
    hmin_term = p.N * -math.log2(pg)
    ec_term = p.N * ((1 - p.xi - p.eta) * f_envelope(q_hat + gam, p.d) + (p.xi + p.eta) * math.log2(p.d))
    sqrt_term, const = finite_size_penalties(p)
    raw = hmin_term - ec_term - sqrt_term - const
    length = max(0.0, raw)
    return KeyLengthReport(
        l=length,
        rate=length / p.N,
        hmin_term=hmin_term,
        ec_term=ec_term,
        sqrtN_term=sqrt_term,
        constant_term=const,
        completeness=p.completeness,
        soundness=p.soundness,
        pg=pg,
        q_hat=q_hat,
        gamma_est=gam,
    )
