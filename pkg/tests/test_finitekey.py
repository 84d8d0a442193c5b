import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bellforge.behavior import Scenario
from bellforge.finitekey import (
    NoRootError,
    ProtocolParams,
    budget_epsilons,
    f_entropy,
    f_envelope,
    gamma_est,
    gamma_range,
    hoeffding_delta,
    hoeffding_epsilon,
    key_length,
    uniform_inputs,
)
from bellforge.polytope import BellFunctional, chsh_functional


class TestGammaRange:
    def test_all_signs_uniform_inputs(self):
        assert gamma_range(chsh_functional(), uniform_inputs(2, 2)) == pytest.approx(8.0)

    def test_zero_functional(self):
        f = BellFunctional(Scenario(2, 2, 2), np.zeros(16), 0.0)
        assert gamma_range(f, uniform_inputs(2, 2)) == 0.0

    def test_nonuniform_inputs(self):
        p = np.array([[0.1, 0.2], [0.3, 0.4]])
        # max 1/0.1, min -1/0.1
        assert gamma_range(chsh_functional(), p) == pytest.approx(20.0)

    def test_zero_probability_on_used_pair(self):
        with pytest.raises(ValueError):
            gamma_range(chsh_functional(), np.array([[0.5, 0.5], [0.0, 0.0]]))


class TestHoeffding:
    def test_unit_substitution(self):
        assert hoeffding_epsilon(8.0, 1, 8.0) == pytest.approx(math.exp(-2))

    def test_reference_value(self):
        assert hoeffding_delta(1e-5, 1e6, 8.0) == pytest.approx(8 * math.sqrt(math.log(1e5) / 2e6), rel=1e-12)
        assert hoeffding_delta(1e-5, 1e6, 8.0) == pytest.approx(0.01920, abs=1e-5)

    @given(
        st.floats(1e-12, 0.999),
        st.floats(1, 1e15),
        st.floats(1e-3, 100),
    )
    def test_round_trip(self, eps, n, gamma):
        assert hoeffding_epsilon(hoeffding_delta(eps, n, gamma), n, gamma) == pytest.approx(eps, rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("args", [(0.0, 10, 1), (1.0, 10, 1), (0.1, 0.5, 1), (0.1, 10, 0)])
    def test_domain(self, args):
        with pytest.raises(ValueError):
            hoeffding_delta(*args)


class TestGammaEst:
    def test_vacuous_as_eps_to_one(self):
        assert gamma_est(50, 50, 0.1, 1 - 1e-12) == pytest.approx(0.0, abs=1e-6)

    def test_root_satisfies_equation(self):
        from scipy.special import gammaln

        def lb(n, k):
            return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)

        a, b, c, eps = 200, 100, 0.1, 0.01
        g = gamma_est(a, b, c, eps)
        lhs = lb(b, b * c) + lb(a, a * (c + g))
        rhs = lb(a + b, (a + b) * c + a * g) + math.log(eps)
        assert lhs == pytest.approx(rhs, abs=1e-6)

    def test_decreases_with_sample_size(self):
        widths = [gamma_est(50, n, 0.1, 0.01) for n in (20, 50, 100, 400)]
        assert all(w1 > w2 for w1, w2 in zip(widths, widths[1:]))

    def test_large_counts(self):
        g = gamma_est(1e14, 1e12, 0.0, 5e-3)
        assert 0 < g < 1e-10

    def test_no_root_reported(self):
        with pytest.raises(NoRootError):
            gamma_est(5, 5, 0.2, 0.01)

    @pytest.mark.parametrize("args", [(0, 5, 0.1, 0.1), (5, 5, 1.0, 0.1), (5, 5, 0.1, 0.0)])
    def test_domain(self, args):
        with pytest.raises(ValueError):
            gamma_est(*args)

    @given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 59), st.floats(1e-4, 0.5))
    def test_output_in_bracket(self, a, b, k, eps):
        q = min(k, b - 1) / b
        try:
            g = gamma_est(a, b, q, eps)
        except NoRootError:
            return
        assert 0 <= g <= 1 - q


class TestEntropy:
    def test_values(self):
        assert f_entropy(0.0, 5) == 0.0
        assert f_entropy(0.5, 2) == pytest.approx(1.0)
        assert f_entropy(2 / 3, 3) == pytest.approx(math.log2(3))

    def test_envelope_is_monotone_and_capped(self):
        qs = np.linspace(0, 1, 201)
        for d in (2, 3, 4):
            vals = [f_envelope(q, d) for q in qs]
            assert np.all(np.diff(vals) >= -1e-15)
            assert max(vals) == pytest.approx(math.log2(d))

    def test_domain(self):
        with pytest.raises(ValueError):
            f_entropy(1.5)


class TestBudget:
    def test_split(self):
        b = budget_epsilons(1e-2, 1e-5, 1e-10)
        assert b["eps_est"] == b["eps_gamma_est"] == 5e-3
        assert b["eps_s"] == b["eps_PA"] == pytest.approx((1e-5 - 2e-10) / 2)
        assert b["eps_con"] == b["eps_est"] and b["eps_EC_prime"] == b["eps_EC"]

    def test_aggregates(self):
        p = ProtocolParams.from_budget(1e8, 0.01, 0.01, eps_c=1e-2, eps_s=1e-5)
        assert p.completeness == pytest.approx(1e-2)
        assert p.soundness == pytest.approx(1e-5)

    def test_infeasible_soundness(self):
        with pytest.raises(ValueError):
            budget_epsilons(1e-2, 1e-10, 1e-10)


class TestParams:
    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            ProtocolParams(1e6, 0.7, 0.5)
        with pytest.raises(ValueError):
            ProtocolParams(0.5, 0.1, 0.1)
        with pytest.raises(ValueError):
            ProtocolParams(1e6, 0.1, 0.1, eps_s=0.0)

    def test_deltas_use_thirds(self):
        p = ProtocolParams.from_budget(3e6, 0.1, 0.01)
        d_est, d_con = p.deltas(8.0)
        assert d_est == pytest.approx(hoeffding_delta(p.eps_est, 1e5, 8.0))
        assert d_con == pytest.approx(hoeffding_delta(p.eps_con, 1e5, 8.0))

    def test_json_round_trip(self):
        p = ProtocolParams.from_budget(1e9, 0.02, 0.001, d=3)
        assert ProtocolParams.from_dict(p.to_dict()) == p

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            ProtocolParams.from_dict({"N": 10, "xi": 0.1, "eta": 0.1, "bogus": 1})


class TestKeyLength:
    params = ProtocolParams.from_budget(1e10, 0.01, 0.001)

    def test_no_violation_gives_nothing(self):
        rep = key_length(self.params, 1.0, 0.0)
        assert rep.l == 0.0 and rep.rate == 0.0

    def test_terms_sum_to_length(self):
        rep = key_length(self.params, 0.6, 0.01)
        assert rep.l == pytest.approx(max(0.0, rep.hmin_term - rep.ec_term - rep.sqrtN_term - rep.constant_term))
        assert rep.l > 0
        assert rep.rate <= 1.0

    def test_term_values(self):
        p = self.params
        rep = key_length(p, 0.5, 0.0)
        assert rep.hmin_term == pytest.approx(p.N)
        chi = 4 * math.log2(2 * math.sqrt(2) + 1)
        expect = math.sqrt(p.N) * chi * (math.sqrt(math.log2(8 / p.eps_EC_prime**2)) + math.sqrt(math.log2(2 / p.eps_s**2)))
        assert rep.sqrtN_term == pytest.approx(expect)
        const = math.log2(8 / p.eps_EC_prime**2 + 2 / (2 - p.eps_EC_prime)) + math.log2(1 / p.eps_EC) + 2 * math.log2(1 / (2 * p.eps_PA))
        assert rep.constant_term == pytest.approx(const)
        ec = p.N * ((1 - p.xi - p.eta) * f_entropy(rep.gamma_est, 2) + (p.xi + p.eta))
        assert rep.ec_term == pytest.approx(ec)

    def test_asymptotic_limit(self):
        N = 1e30
        p = ProtocolParams.from_budget(N, 0.0, 0.0, gamma_est=0.0)
        rep = key_length(p, 0.6, 0.02)
        assert rep.rate == pytest.approx(-math.log2(0.6) - f_entropy(0.02), abs=1e-9)

    @given(st.floats(0.5, 0.99), st.floats(0.5, 0.99), st.floats(0.0, 0.1), st.floats(0.0, 0.1))
    def test_monotone_in_pg_and_qber(self, pg1, pg2, q1, q2):
        p = self.params
        lo_pg, hi_pg = sorted((pg1, pg2))
        lo_q, hi_q = sorted((q1, q2))
        assert key_length(p, hi_pg, lo_q).l <= key_length(p, lo_pg, lo_q).l + 1e-6
        assert key_length(p, lo_pg, hi_q).l <= key_length(p, lo_pg, lo_q).l + 1e-6

    def test_monotone_in_rounds(self):
        ls = [key_length(ProtocolParams.from_budget(N, 0.01, 0.01), 0.6, 0.01).l for N in 10 ** np.arange(5, 14.5, 0.5)]
        assert np.all(np.diff(ls) >= 0)

    def test_report_json(self):
        d = key_length(self.params, 0.7, 0.0).to_dict()
        assert set(d) >= {"l", "rate", "hmin_term", "ec_term", "sqrtN_term", "constant_term", "completeness", "soundness"}

    def test_invalid_pg(self):
        with pytest.raises(ValueError):
            key_length(self.params, 0.0, 0.0)
