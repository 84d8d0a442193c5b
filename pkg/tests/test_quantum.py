import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import born

from bellforge.quantum import (
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    MeasurementFamily,
    QuantumSetup,
    explicit_presets,
    bloch_observable,
    born_probabilities,
    cglmp_measurements,
    cglmp_setup,
    chain3_setup,
    chsh_setup,
    haar_random_qubit_observable,
    haar_random_qubit_unitary,
    haar_random_unitary,
    key_qber,
    load_setup,
    nearest_involution,
    noisy_bell_state,
    noisy_max_entangled_qudit,
    nonmax_qutrit_state,
    projectors_from_observable,
    random_qubit_setup,
    random_qudit_setup,
    setup_from_dict,
    setup_to_dict,
)


def phi_plus():
    return np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


class TestStates:
    def test_bell_state_limits(self):
        psi = phi_plus()
        assert np.allclose(noisy_bell_state(0.0).matrix, np.outer(psi, psi.conj()))
        assert np.allclose(noisy_bell_state(1.0).matrix, np.eye(4) / 4)

    def test_overlap(self):
        psi = phi_plus()
        rho = noisy_bell_state(0.02).matrix
        assert np.real(psi.conj() @ rho @ psi) == pytest.approx(0.985)

    @pytest.mark.parametrize("p", [0.0, 0.1, 0.7])
    def test_qudit_matches_bell(self, p):
        assert np.allclose(noisy_max_entangled_qudit(2, p).matrix, noisy_bell_state(p).matrix)

    def test_qutrit_limits(self):
        rho = noisy_max_entangled_qudit(3, 0.0).matrix
        assert np.linalg.matrix_rank(rho, tol=1e-10) == 1
        assert np.trace(rho).real == pytest.approx(1.0)
        assert np.allclose(noisy_max_entangled_qudit(3, 1.0).matrix, np.eye(9) / 9)

    def test_nonmax_overlap(self):
        rho = nonmax_qutrit_state().matrix
        psi = np.eye(3).reshape(-1) / math.sqrt(3)
        # fidelity with the maximally entangled qutrit
        assert np.real(psi @ rho @ psi) == pytest.approx((2 + 0.7923) ** 2 / (3 * (2 + 0.7923**2)), rel=1e-12)
        assert np.real(psi @ rho @ psi) == pytest.approx(0.98906, abs=1e-5)
        schmidt = np.sqrt(np.sort(np.linalg.eigvalsh(rho.reshape(3, 3, 3, 3).trace(axis1=1, axis2=3))))
        assert schmidt[0] == pytest.approx(0.7923 / math.sqrt(2.62773929), rel=1e-12)

    @pytest.mark.parametrize(
        "mat",
        [np.diag([0.5, 0.6, 0, 0]), np.diag([1.5, -0.5, 0, 0]), np.array([[0.5, 1], [0, 0.5]])],
    )
    def test_invalid(self, mat):
        dims = (2, 2) if mat.shape[0] == 4 else (1, 2)
        with pytest.raises(ValueError):
            DensityMatrix(mat, dims)

    @pytest.mark.parametrize("p", [-0.1, 1.1])
    def test_noise_range(self, p):
        with pytest.raises(ValueError):
            noisy_bell_state(p)


class TestMeasurements:
    def test_bloch(self):
        assert np.allclose(bloch_observable(0.0), [np.diag([1, 0]), np.diag([0, 1])])
        assert np.allclose(bloch_observable(np.pi / 2), [(np.eye(2) + SIGMA_X) / 2, (np.eye(2) - SIGMA_X) / 2])
        assert np.allclose(bloch_observable(np.pi / 4), projectors_from_observable((SIGMA_X + SIGMA_Z) / math.sqrt(2)))

    def test_generic_observable_order(self):
        proj = projectors_from_observable(np.diag([0.1, 2.0, -1.0]))
        assert np.allclose(proj[0], np.diag([0, 1, 0]))
        assert np.allclose(proj[2], np.diag([0, 0, 1]))

    def test_family_invariants_checked(self):
        bad = np.stack([np.diag([1, 0]), np.diag([1, 1])])[None]
        with pytest.raises(ValueError):
            MeasurementFamily(bad)
        nonorth = np.stack([np.diag([1, 0]), np.array([[0.5, 0.5], [0.5, 0.5]])])[None]
        with pytest.raises(ValueError):
            MeasurementFamily(nonorth)

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_cglmp_families(self, d):
        for fam in cglmp_measurements(d):
            assert fam.n_outcomes == d
            ranks = [np.linalg.matrix_rank(p, tol=1e-9) for s in fam.projectors for p in s]
            assert set(ranks) == {1}

    def test_cglmp_key_correlation(self):
        setup = cglmp_setup(3)
        assert key_qber(setup) == pytest.approx(0.0, abs=1e-12)
        # brute force over the explicit key projectors
        rho = setup.state.matrix
        agree = sum(born(rho, setup.alice.projectors[0, a], setup.bob.projectors[2, a]) for a in range(3))
        assert agree == pytest.approx(1.0, abs=1e-12)

    def test_nearest_involution(self):
        obs = nearest_involution(np.array([[0.7019, 0.5167 - 0.4903j], [0.5167 + 0.4903j, -0.7019]]))
        assert np.allclose(obs @ obs, np.eye(2), atol=1e-12)
        assert np.allclose(obs, obs.conj().T)


class TestHaar:
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_unitarity(self, seed, d):
        rng = np.random.default_rng(seed)
        u = haar_random_unitary(d, rng)
        assert np.allclose(u @ u.conj().T, np.eye(d), atol=1e-10)
        q = haar_random_qubit_unitary(rng)
        assert np.allclose(q @ q.conj().T, np.eye(2), atol=1e-10)

    def test_column_uniformity(self):
        rng = np.random.default_rng(7)
        vals = [np.real(haar_random_qubit_observable(rng)[0][0, 0]) for _ in range(10_000)]
        assert np.mean(vals) == pytest.approx(0.5, abs=0.02)
        # cos^2 of the polar angle is uniform, so the variance is 1/12
        assert np.var(vals) == pytest.approx(1 / 12, abs=0.01)

    def test_seed_determinism(self):
        a = random_qubit_setup(3, 0.05, np.random.default_rng(11))
        b = random_qubit_setup(3, 0.05, np.random.default_rng(11))
        assert np.array_equal(a.alice.projectors, b.alice.projectors)
        assert np.array_equal(a.bob.projectors, b.bob.projectors)

    def test_random_setups_pin_key_settings(self):
        s = random_qubit_setup(2, 0.0, np.random.default_rng(1))
        assert np.allclose(s.alice.projectors[0], [np.diag([1, 0]), np.diag([0, 1])])
        assert np.allclose(s.bob.projectors[-1], [np.diag([1, 0]), np.diag([0, 1])])
        q = random_qudit_setup(3, 0.0, np.random.default_rng(1))
        assert key_qber(q) == pytest.approx(0.0, abs=1e-12)


class TestBorn:
    def test_maximally_mixed(self):
        setup = chsh_setup(1.0)
        P = born_probabilities(setup)
        assert np.allclose(P.entries, 0.25)

    def test_perfect_correlation(self):
        P = born_probabilities(chsh_setup(0.0), [0], [2]).table[0, 0]
        assert np.allclose(P, [[0.5, 0], [0, 0.5]])

    def test_chsh_entry(self):
        P = born_probabilities(chsh_setup(0.0))
        assert P.table[0, 0, 0, 0] == pytest.approx((2 + math.sqrt(2)) / 8, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_against_kronecker_oracle(self, seed, p):
        setup = random_qubit_setup(2, p, np.random.default_rng(seed))
        P = born_probabilities(setup).table
        rho = setup.state.matrix
        for x in range(2):
            for y in range(2):
                for a in range(2):
                    for b in range(2):
                        ref = born(rho, setup.alice.projectors[x, a], setup.bob.projectors[y, b])
                        assert P[x, y, a, b] == pytest.approx(ref, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.floats(0, 1))
    def test_no_signalling_and_normalized(self, seed, d, p):
        P = born_probabilities(random_qudit_setup(d, p, np.random.default_rng(seed)))
        assert P.signalling_gap() <= 1e-10
        assert np.allclose(P.table.sum(axis=(2, 3)), 1.0, atol=1e-12)

    def test_missing_setting(self):
        with pytest.raises(ValueError):
            born_probabilities(chsh_setup(), [5], [0])

    def test_mismatched_dimensions(self):
        with pytest.raises(ValueError):
            QuantumSetup(noisy_max_entangled_qudit(3, 0), chsh_setup().alice, chsh_setup().bob)


class TestPresets:
    @pytest.mark.parametrize("setup", [chsh_setup(0.02), chain3_setup(0.0, 0.1), cglmp_setup(4, 0.01)])
    def test_shapes(self, setup):
        assert setup.bob.n_settings == setup.alice.n_settings + 1
        assert setup.pe_scenario.m_b == setup.alice.n_settings

    def test_chsh_qber(self):
        assert key_qber(chsh_setup(0.0)) == pytest.approx(0.0, abs=1e-15)
        assert key_qber(chsh_setup(0.1)) == pytest.approx(0.05)

    def test_explicit_shapes(self):
        pre = explicit_presets()
        assert pre["explicit3"].pe_scenario.m_a == 3 and pre["explicit3"].pe_scenario.m_b == 3
        assert pre["explicit2"].pe_scenario.m_a == 2 and pre["explicit2"].pe_scenario.m_b == 2
        assert pre["explicit2-ext"].pe_scenario.m_a == 3 and pre["explicit2-ext"].pe_scenario.m_b == 3


class TestSerialization:
    def test_round_trip(self, tmp_path):
        setup = cglmp_setup(3, 0.05)
        path = tmp_path / "setup.json"
        import json

        path.write_text(json.dumps(setup_to_dict(setup)))
        back = load_setup(path)
        assert np.allclose(back.state.matrix, setup.state.matrix)
        assert np.allclose(back.bob.projectors, setup.bob.projectors)

    def test_setting_forms(self):
        data = {
            "state": {"kind": "bell", "p": 0.0},
            "alice": [{"bloch": 0.0}, {"observable": [[0, 1], [1, 0]]}],
            "bob": [
                {"bloch": math.pi / 4},
                {"bloch": -math.pi / 4},
                {"unitary": [[1, 0], [0, 1]]},
            ],
        }
        setup = setup_from_dict(data)
        P = born_probabilities(setup)
        assert np.allclose(P.entries, born_probabilities(chsh_setup()).entries)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            setup_from_dict({"state": {"kind": "ghz"}, "alice": [], "bob": []})
