import math

import numpy as np
import pytest
from oracles import chsh_pg

from bellforge.behavior import Scenario
from bellforge.conic import SolverError
from bellforge.npa import (
    BetaAboveQuantumMaximum,
    adjoint,
    basis_size,
    build_basis,
    chsh_guessing_probability,
    guessing_probability,
    moment_structure,
    quantum_maximum,
    reduce_word,
)
from bellforge.polytope import BellFunctional, InfeasibleClassical, cglmp3_functional, chsh_functional, optimal_hyperplane
from bellforge.quantum import (
    DensityMatrix,
    MeasurementFamily,
    QuantumSetup,
    born_probabilities,
    cglmp_setup,
    haar_random_qubit_observable,
    haar_random_unitary,
)

A0, A1 = (0, 0, 0), (0, 1, 0)
B0, B1 = (1, 0, 0), (1, 1, 0)


class TestWords:
    def test_idempotency_and_orthogonality(self):
        assert reduce_word((A0, A0)) == (A0,)
        assert reduce_word(((0, 0, 0), (0, 0, 1))) is None
        assert reduce_word((A0, A1, A1, A0)) == (A0, A1, A0)

    def test_parties_commute(self):
        assert reduce_word((B0, A0, B1, A1)) == (A0, A1, B0, B1)

    def test_adjoint(self):
        assert adjoint((A0, A1, B0, B1)) == (A1, A0, B1, B0)
        assert reduce_word(adjoint(adjoint((A0, B1)))) == (A0, B1)

    @pytest.mark.parametrize("s", [Scenario(2, 2, 2), Scenario(2, 2, 3), Scenario(3, 2, 2), Scenario(3, 3, 3)])
    def test_basis_invariants(self, s):
        basis = build_basis(s)
        assert basis.words[0] == ()
        assert basis.size == basis_size(s) == len(set(basis.words))
        for w in basis.words:
            assert reduce_word(w) == w
            parties = [sym[0] for sym in w]
            assert parties == sorted(parties)
            for u, v in zip(w, w[1:]):
                assert u != v
                assert not (u[0] == v[0] and u[1] == v[1])

    def test_counts(self):
        assert basis_size(Scenario(2, 2, 2)) == 13
        # n_A = n_B = 4 projectors for two settings of three outcomes
        assert basis_size(Scenario(2, 2, 3)) == 1 + 4 + 4 + 16 + 8 + 8


class TestMoments:
    def test_behavior_map_normalization(self):
        s = Scenario(2, 2, 3)
        st = moment_structure(s)
        y = np.zeros(st.n_vars)
        y[0] = 1.0
        sums = (st.behavior_map @ y).reshape(s.shape).sum(axis=(2, 3))
        assert np.allclose(sums, 1.0)

    def test_hermitian_has_more_variables(self):
        s = Scenario(2, 2, 2)
        assert moment_structure(s, real=False).n_vars > moment_structure(s, real=True).n_vars


class TestGuessing:
    f = chsh_functional()

    def test_classical_point(self):
        g = guessing_probability(self.f, 2.0)
        assert g.pg == 1.0 and g.hmin == 0.0

    @pytest.mark.parametrize("beta", [2.1, 2.2, 2.5, 2.7, 2.8])
    def test_matches_analytic(self, beta):
        g = guessing_probability(self.f, beta)
        assert g.pg == pytest.approx(chsh_pg(beta), abs=1e-3)
        assert 0 <= g.hmin_normalized <= 1

    def test_reference_value(self):
        assert guessing_probability(self.f, 2.5).pg == pytest.approx(0.8307, abs=1e-3)

    def test_tsirelson_point(self):
        assert guessing_probability(self.f, 2 * math.sqrt(2)).pg == pytest.approx(0.5, abs=1e-3)

    def test_hermitian_form_agrees(self):
        real = guessing_probability(self.f, 2.4).pg
        herm = guessing_probability(self.f, 2.4, real=False).pg
        assert herm == pytest.approx(real, abs=1e-5)

    def test_above_quantum_maximum(self):
        with pytest.raises(BetaAboveQuantumMaximum):
            guessing_probability(self.f, 2.9)

    def test_recovered_behavior(self):
        g = guessing_probability(self.f, 2.6)
        assert g.behavior is not None
        assert g.behavior.signalling_gap() <= 1e-7
        assert self.f.value(g.behavior) == pytest.approx(2.6, abs=1e-6)

    def test_monotone_chsh(self):
        betas = np.linspace(2.0, 2.82, 12)
        pgs = [guessing_probability(self.f, b).pg for b in betas]
        assert all(p2 <= p1 + 1e-6 for p1, p2 in zip(pgs, pgs[1:]))

    def test_monotone_three_outcomes(self):
        f = cglmp3_functional()
        qmax = quantum_maximum(f)
        betas = f.c + (qmax - f.c) * np.array([0.1, 0.4, 0.7, 0.95])
        pgs = [guessing_probability(f, b).pg for b in betas]
        assert all(p2 <= p1 + 1e-6 for p1, p2 in zip(pgs, pgs[1:]))
        assert all(1 / 3 - 1e-9 <= p <= 1 for p in pgs)

    def test_key_setting_range(self):
        with pytest.raises(ValueError):
            guessing_probability(self.f, 2.5, key_setting=2)

    def test_relaxation_soundness(self):
        # the bound must dominate what Eve gets from the honest strategy itself
        rng = np.random.default_rng(9)
        checked = 0
        while checked < 20:
            psi = haar_random_unitary(4, rng)[:, 0]
            state = DensityMatrix.from_vector(psi, (2, 2))
            alice = MeasurementFamily.from_settings([haar_random_qubit_observable(rng) for _ in range(2)])
            bob = MeasurementFamily.from_settings([haar_random_qubit_observable(rng) for _ in range(3)])
            setup = QuantumSetup(state, alice, bob)
            P = born_probabilities(setup)
            try:
                f = optimal_hyperplane(P)
            except InfeasibleClassical:
                continue
            beta = f.value(P)
            try:
                pg = guessing_probability(f, beta).pg
            except SolverError:
                continue
            explicit = P.table[0, 0].sum(axis=1).max()
            assert pg >= explicit - 1e-6
            checked += 1


class TestQuantumMaximum:
    def test_tsirelson(self):
        assert quantum_maximum(chsh_functional()) == pytest.approx(2 * math.sqrt(2), abs=1e-5)

    def test_single_setting_is_classical(self):
        s = Scenario(1, 1, 2)
        rng = np.random.default_rng(4)
        h = rng.uniform(-1, 1, s.dim)
        f = BellFunctional.from_table(s, h.reshape(s.shape))
        assert quantum_maximum(f) == pytest.approx(f.c, abs=1e-6)

    @pytest.mark.parametrize("state", ["max", "nonmax"])
    def test_three_outcome_bound_dominates_born(self, state):
        f = cglmp3_functional()
        setup = cglmp_setup(3, state=state)
        assert quantum_maximum(f) >= f.value(born_probabilities(setup)) - 1e-7

    def test_analytic_helper(self):
        assert chsh_guessing_probability(1.5) == 1.0
        assert chsh_guessing_probability(2.5) == pytest.approx(chsh_pg(2.5))
