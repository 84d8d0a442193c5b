import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import lp_vertex_oracle

from bellforge.conic import (
    LinearProgram,
    SemidefiniteProgram,
    SolveReport,
    complex_program,
    hermitian_to_real,
    real_to_hermitian,
    solve_lp,
    solve_sdp,
)


def dense_map(mats):
    """Coefficient map rows from a list of square matrices."""
    return sp.csr_matrix(np.array([np.asarray(m, dtype=float).reshape(-1) for m in mats]))


class TestLP:
    def test_trivial(self):
        sol = solve_lp(LinearProgram([1.0], A_ub=[[1.0]], b_ub=[3.0], lb=None))
        assert sol.report.ok
        assert sol.objective == pytest.approx(3.0)

    def test_vertex_feasibility(self):
        # convex weights reproducing a point of the simplex
        V = np.eye(3)
        target = V[1]
        sol = solve_lp(LinearProgram(np.zeros(3), A_eq=np.vstack([V.T, np.ones(3)]), b_eq=np.append(target, 1.0)))
        assert sol.report.ok
        assert np.allclose(sol.x, target)

    def test_infeasible(self):
        sol = solve_lp(LinearProgram([1.0], A_ub=[[1.0], [-1.0]], b_ub=[0.0, -1.0], lb=None))
        assert sol.report.status == "infeasible"
        assert sol.certificate["violation"] == pytest.approx(1.0)

    def test_unbounded(self):
        sol = solve_lp(LinearProgram([1.0], lb=0.0))
        assert sol.report.status == "unbounded"

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            LinearProgram([1.0, 2.0], A_ub=[[1.0]], b_ub=[1.0])
        with pytest.raises(ValueError):
            LinearProgram([1.0], A_ub=[[1.0]])
        with pytest.raises(ValueError):
            LinearProgram([np.inf])

    def test_random_against_vertex_oracle(self):
        rng = np.random.default_rng(2024)
        n_infeasible = 0
        for _ in range(1000):
            n = int(rng.integers(1, 5))
            k = int(rng.integers(0, 5))
            box = np.vstack([np.eye(n), -np.eye(n)])
            A = np.vstack([box, rng.normal(size=(k, n))])
            b = np.concatenate([rng.uniform(0.5, 2, 2 * n), rng.normal(size=k)])
            c = rng.normal(size=n)
            ref = lp_vertex_oracle(c, A, b)
            sol = solve_lp(LinearProgram(c, A_ub=A, b_ub=b, lb=None))
            if ref == -np.inf:
                assert sol.report.status == "infeasible"
                n_infeasible += 1
                continue
            assert sol.report.ok
            assert sol.objective == pytest.approx(ref, abs=1e-7)
            assert sol.report.dual_objective == pytest.approx(ref, abs=1e-7)
        assert n_infeasible > 0

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(8, 4))
        lp = LinearProgram(rng.normal(size=4), A_ub=A, b_ub=np.ones(8), lb=-1.0, ub=1.0)
        assert np.array_equal(solve_lp(lp).x, solve_lp(lp).x)


class TestSDP:
    def test_eigenvalue_condition(self):
        # maximize -t subject to [[t, 1], [1, t]] >= 0
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        prob = SemidefiniteProgram([2], [-1.0], [dense_map([-np.eye(2)])], [C])
        sol = solve_sdp(prob)
        assert sol.report.ok
        assert sol.y[0] == pytest.approx(1.0, abs=1e-6)

    def test_trace_with_bounded_diagonal(self):
        # moments y = (X11, X22, X12); X >= 0, 1 - X22 >= 0, X11 = 1, X12 = 0
        e11 = np.diag([1.0, 0.0])
        e22 = np.diag([0.0, 1.0])
        e12 = np.array([[0.0, 1.0], [1.0, 0.0]])
        A0 = dense_map([-e11, -e22, -e12])
        A1 = dense_map([[[0.0]], [[1.0]], [[0.0]]])
        prob = SemidefiniteProgram(
            [2, 1], [1.0, 1.0, 0.0], [A0, A1], [np.zeros((2, 2)), np.ones((1, 1))],
            E=np.array([[1.0, 0, 0], [0, 0, 1.0]]), e=np.array([1.0, 0.0]),
        )
        sol = solve_sdp(prob)
        assert sol.report.ok
        assert sol.objective == pytest.approx(2.0, abs=1e-6)

    def test_infeasible(self):
        # y >= 1 and y <= 0
        prob = SemidefiniteProgram([1, 1], [1.0], [dense_map([[[-1.0]]]), dense_map([[[1.0]]])], [-np.ones((1, 1)), np.zeros((1, 1))])
        assert solve_sdp(prob).report.status == "infeasible"

    def test_dependent_constraints_unbounded(self):
        # y1 and y2 enter only through y1 - y2, and b rewards y1 + y2
        M = np.array([[1.0, 0.0], [0.0, -1.0]])
        A = dense_map([M, -M])
        prob = SemidefiniteProgram([2, 2], [1.0, 1.0], [A, -A], [np.eye(2), np.eye(2)])
        sol = solve_sdp(prob)
        assert sol.report.status == "unbounded"
        # the reported point is feasible and improves on y = 0 along the kernel
        for Z in prob.slack(sol.y):
            assert np.linalg.eigvalsh(Z).min() >= -1e-9
        assert prob.b @ sol.y > 0

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(1, 4))
    def test_weak_duality_and_feasibility(self, seed, n, m):
        rng = np.random.default_rng(seed)
        mats = [(lambda g: g + g.T)(rng.normal(size=(n, n))) for _ in range(m)]
        C = np.eye(n)
        A = dense_map(mats)
        prob = SemidefiniteProgram([n, n], rng.normal(size=m), [A, -A], [C, C])
        sol = solve_sdp(prob)
        rep = sol.report
        if np.linalg.matrix_rank(np.array([M.ravel() for M in mats])) < m:
            # a kernel direction of y leaves both slacks fixed, so b.y is unbounded
            assert rep.status == "unbounded"
            return
        assert rep.ok
        assert rep.dual_objective >= rep.primal_objective - rep.gap - 1e-12
        for Z in prob.slack(sol.y):
            assert np.linalg.eigvalsh(Z).min() >= -1e-7
        again = solve_sdp(prob)
        assert np.array_equal(again.y, sol.y)


class TestHermitianEmbedding:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        h = g + g.conj().T
        emb = hermitian_to_real(h)
        assert np.allclose(emb, emb.T)
        assert np.allclose(real_to_hermitian(emb), h)
        # each eigenvalue appears twice
        assert np.allclose(np.sort(np.repeat(np.linalg.eigvalsh(h), 2)), np.linalg.eigvalsh(emb))

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(1, 4))
    def test_random_programs_certified(self, seed, n, m):
        rng = np.random.default_rng(seed)

        def herm():
            g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            return g + g.conj().T

        mats = np.array([herm() for _ in range(m)])
        b = rng.normal(size=m)
        C = np.eye(n, dtype=complex)
        prob = complex_program([n, n], b, [mats, -mats], [C, C])
        sol = solve_sdp(prob)
        assert sol.report.ok
        y = sol.y
        S = np.tensordot(y, mats, axes=1)
        # complex dual feasibility: -C <= sum y_i A_i <= C
        assert np.linalg.eigvalsh(C - S).min() >= -1e-7
        assert np.linalg.eigvalsh(C + S).min() >= -1e-7
        # complex primal certificate with the same value
        X = [real_to_hermitian(x) for x in sol.X]
        for x in X:
            assert np.linalg.eigvalsh(x).min() >= -1e-7
        lhs = 2 * np.array([np.real(np.trace(a @ X[0]) - np.trace(a @ X[1])) for a in mats])
        assert np.allclose(lhs, b, atol=1e-6)
        value = 2 * np.real(np.trace(C @ X[0]) + np.trace(C @ X[1]))
        assert value == pytest.approx(b @ y, abs=1e-6)


def test_report_status_checked():
    with pytest.raises(ValueError):
        SolveReport("weird", 0.0, 0.0, 0.0, 0)
    rep = SolveReport("optimal", 1.0, 1.0, 0.0, 3)
    assert rep.ok and rep.to_dict()["iterations"] == 3
