import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import chsh_pg

from bellforge.finitekey import f_entropy
from bellforge.keyrate import (
    GuessingCurve,
    RateSettings,
    asymptotic_model,
    evaluate_rate,
    rate_curve,
    tune_fractions,
    zero_crossing,
)
from bellforge.polytope import InfeasibleClassical, chsh_functional
from bellforge.quantum import chsh_setup, classical_uniform_setup

CHSH_CURVE = GuessingCurve(chsh_functional(), 2 * math.sqrt(2), levels=12, solver=chsh_pg)


def test_asymptotic_model():
    m = asymptotic_model(chsh_setup(0.0))
    assert m.beta == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    assert m.qber == pytest.approx(0.0, abs=1e-12)
    assert m.gamma == pytest.approx(8.0)
    assert m.d == 2


def test_classical_model_raises():
    with pytest.raises(InfeasibleClassical):
        asymptotic_model(classical_uniform_setup())


class TestGuessingCurve:
    @given(st.floats(1.5, 2 * math.sqrt(2)))
    def test_brackets_concave_function(self, beta):
        assert CHSH_CURVE.upper(beta) >= chsh_pg(beta) - 1e-12
        assert CHSH_CURVE.lower(beta) <= chsh_pg(beta) + 1e-12

    def test_exact_at_nodes(self):
        for b, g in zip(CHSH_CURVE.betas, CHSH_CURVE.values):
            assert CHSH_CURVE.upper(b) == pytest.approx(g)

    def test_monotone(self):
        bs = np.linspace(2.0, 2.83, 200)
        ups = [CHSH_CURVE.upper(b) for b in bs]
        assert np.all(np.diff(ups) <= 1e-12)

    def test_needs_violation(self):
        with pytest.raises(ValueError):
            GuessingCurve(chsh_functional(), 2.0, solver=chsh_pg)

    def test_sdp_backed(self):
        curve = GuessingCurve(chsh_functional(), 2.8, levels=4)
        for b in (2.3, 2.6, 2.79):
            assert curve.upper(b) >= chsh_pg(b) - 1e-4


class TestRates:
    model = asymptotic_model(chsh_setup(0.0))

    def test_large_n_limit(self):
        pt = evaluate_rate(self.model, 1e40, 1e-12, 1e-12, chsh_pg)
        assert pt.rate == pytest.approx(1.0, abs=1e-4)

    def test_noisy_limit(self):
        model = asymptotic_model(chsh_setup(0.05))
        pt = evaluate_rate(model, 1e40, 1e-12, 1e-12, chsh_pg, RateSettings(overrides={"gamma_est": 0.0}))
        expect = -math.log2(chsh_pg(model.beta)) - f_entropy(model.qber)
        assert pt.rate == pytest.approx(expect, abs=1e-4)

    def test_degenerate_fractions(self):
        pt = evaluate_rate(self.model, 100, 1e-3, 1e-3, chsh_pg)
        assert pt.report is None and pt.rate == 0.0

    def test_tuning_beats_grid_corners(self):
        best = tune_fractions(self.model, 1e10, chsh_pg)
        for xi, eta in [(0.1, 0.1), (0.01, 0.001), (0.3, 1e-5)]:
            assert best.rate >= evaluate_rate(self.model, 1e10, xi, eta, chsh_pg).rate - 1e-12

    def test_curve_monotone_and_bounded(self):
        grid = 10 ** np.arange(5.0, 15.5, 1.0)
        pts = rate_curve(self.model, grid, chsh_pg)
        rates = [p.rate for p in pts]
        assert np.all(np.diff(rates) >= -1e-9)
        assert rates[-1] < 1.0
        assert 1e5 <= zero_crossing(pts) <= 1e7

    def test_zero_crossing_none(self):
        assert zero_crossing([evaluate_rate(self.model, 100, 0.1, 0.1, chsh_pg)]) == math.inf

    def test_point_json(self):
        d = tune_fractions(self.model, 1e9, chsh_pg).to_dict()
        assert set(d) == {"N", "xi", "eta", "beta_eff", "rate", "raw_rate"}
