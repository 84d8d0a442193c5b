"""Dense primal-dual interior-point solver for block-diagonal SDPs.

Problem pair (all blocks real symmetric)::

    primal:  minimize    sum_j <C_j, X_j> + e @ w
             subject to  sum_j <A_ij, X_j> + (E.T @ w)_i = b_i,   X_j >= 0

    dual:    maximize    b @ y
             subject to  Z_j = C_j - sum_i y_i A_ij >= 0,          E @ y = e

The maximization is the natural home of moment-matrix relaxations: ``y``
holds the moments, ``Z_j`` the moment matrices and ``E`` extra linear
constraints. Reports list ``b @ y`` as the primal objective and the
minimization value (an upper bound) as the dual objective.

The method is an infeasible-start path-following scheme with Nesterov-Todd
scaling and a Mehrotra predictor-corrector. The Schur complement
``M_ik = sum_j <A_ij, W_j A_kj W_j>`` is assembled from the sparse
coefficient maps and factored per connected group of variables, so that
problems made of independent blocks tied together only by ``E`` stay cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .report import SolveReport

log = logging.getLogger(__name__)


@dataclass
class SemidefiniteProgram:
    """Block-diagonal SDP in the form documented at module level.

    ``A[j]`` is a sparse ``(m, n_j**2)`` matrix whose row ``i`` is the
    row-major vectorization of ``A_ij`` (symmetrized on construction).
    """

    block_sizes: list[int]
    b: np.ndarray
    A: list
    C: list | None = None
    E: np.ndarray | None = None
    e: np.ndarray | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        m = self.b.size
        if len(self.A) != len(self.block_sizes):
            raise ValueError("need one coefficient map per block")
        sym = []
        for n, a in zip(self.block_sizes, self.A):
            a = sp.csr_matrix(a, dtype=float)
            if a.shape != (m, n * n):
                raise ValueError(f"coefficient map has shape {a.shape}, expected {(m, n * n)}")
            perm = np.arange(n * n).reshape(n, n).T.reshape(-1)
            a = ((a + a[:, perm]) * 0.5).tocsr()
            a.eliminate_zeros()
            sym.append(a)
        self.A = sym
        if self.C is None:
            self.C = [np.zeros((n, n)) for n in self.block_sizes]
        else:
            self.C = [0.5 * (np.asarray(c, dtype=float) + np.asarray(c, dtype=float).T) for c in self.C]
        if (self.E is None) != (self.e is None):
            raise ValueError("equality matrix and right-hand side must be given together")
        if self.E is None:
            self.E = np.zeros((0, m))
            self.e = np.zeros(0)
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.e = np.asarray(self.e, dtype=float).reshape(-1)
        if self.E.shape != (self.e.size, m):
            raise ValueError("equality constraints have inconsistent shapes")

    @property
    def n_vars(self) -> int:
        return self.b.size

    def adjoint(self, y) -> list[np.ndarray]:
        """``sum_i y_i A_ij`` for every block."""
        return [(a.T @ y).reshape(n, n) for n, a in zip(self.block_sizes, self.A)]

    def apply(self, X) -> np.ndarray:
        """``(sum_j <A_ij, X_j>)_i``."""
        out = np.zeros(self.n_vars)
        for a, x in zip(self.A, X):
            out += a @ x.reshape(-1)
        return out

    def slack(self, y) -> list[np.ndarray]:
        return [c - s for c, s in zip(self.C, self.adjoint(y))]


@dataclass
class SDPSolution:
    y: np.ndarray
    X: list[np.ndarray]
    Z: list[np.ndarray]
    w: np.ndarray
    report: SolveReport
    history: list[dict] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.report.primal_objective


# ------------------------------------------------------------ embedding


def hermitian_to_real(mat) -> np.ndarray:
    """Real symmetric image ``[[Re, -Im], [Im, Re]]`` of a Hermitian matrix."""
    mat = np.asarray(mat)
    re, im = mat.real, mat.imag
    return np.block([[re, -im], [im, re]])


def real_to_hermitian(mat) -> np.ndarray:
    """Inverse of :func:`hermitian_to_real` (averaging the redundant copies)."""
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0] // 2
    re = 0.5 * (mat[:n, :n] + mat[n:, n:])
    im = 0.5 * (mat[n:, :n] - mat[:n, n:])
    return re + 1j * im


def complex_program(block_sizes, b, A_complex, C_complex=None, E=None, e=None) -> SemidefiniteProgram:
    """Embed a Hermitian block SDP with real multipliers ``y``.

    ``A_complex[j]`` is a list of ``m`` Hermitian matrices (or a dense array of
    shape ``(m, n, n)``). Each block doubles in size; ``<A, X>`` becomes
    ``2 Re<A, X>`` on the embedded side while the dual objective ``b @ y`` is
    untouched.
    """
    sizes, blocks, cs = [], [], []
    for j, n in enumerate(block_sizes):
        mats = np.asarray(A_complex[j], dtype=complex)
        emb = np.stack([hermitian_to_real(mm) for mm in mats]).reshape(len(mats), -1)
        sizes.append(2 * n)
        blocks.append(sp.csr_matrix(emb))
        cmat = np.zeros((n, n), dtype=complex) if C_complex is None else np.asarray(C_complex[j], dtype=complex)
        cs.append(hermitian_to_real(cmat))
    return SemidefiniteProgram(sizes, b, blocks, cs, E, e)


# -------------------------------------------------------------- solver


class _Groups:
    """Connected components of the variable/block incidence graph."""

    def __init__(self, prob: SemidefiniteProgram):
        m = prob.n_vars
        parent = np.arange(m + len(prob.A))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for j, a in enumerate(prob.A):
            rows = np.unique(a.nonzero()[0])
            for i in rows:
                ri, rj = find(i), find(m + j)
                if ri != rj:
                    parent[ri] = rj
        roots = np.array([find(i) for i in range(m)])
        self.members = [np.flatnonzero(roots == r) for r in np.unique(roots)]
        self.blocks = []
        for idx in self.members:
            touching = [j for j, a in enumerate(prob.A) if a[idx].nnz > 0]
            self.blocks.append(touching)


def _schur_block(a_sub: sp.csr_matrix, W: np.ndarray) -> np.ndarray:
    """``M_ik = <A_i, W A_k W>`` for the rows of ``a_sub``.

    With ``B_i = A_i W`` (non-zero only on the rows where ``A_i`` has
    entries), ``M_ik = tr(B_i B_k) = vec(B_i) . vec(B_k^T)``; both factors are
    assembled as sparse matrices.
    """
    n = W.shape[0]
    coo = a_sub.tocoo()
    i, pq, v = coo.row, coo.col, coo.data
    p, q = pq // n, pq % n
    # one row of B per distinct (i, p): sum_q v W[q, :]
    key = i * n + p
    uniq, inv = np.unique(key, return_inverse=True)
    K = sp.csr_matrix((v, (inv, q)), shape=(uniq.size, n))
    rows = K @ W  # dense (n_rows, n)
    ri, rp = uniq // n, uniq % n
    r = np.arange(n)
    data = rows.reshape(-1)
    row_idx = np.repeat(ri, n)
    B = sp.csr_matrix((data, (row_idx, (rp[:, None] * n + r[None, :]).reshape(-1))), shape=(a_sub.shape[0], n * n))
    Bt = sp.csr_matrix((data, (row_idx, (r[None, :] * n + rp[:, None]).reshape(-1))), shape=(a_sub.shape[0], n * n))
    M = (B @ Bt.T).toarray()
    return 0.5 * (M + M.T)


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest ``alpha`` with ``L L^T + alpha D >= 0``."""
    Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    S = Li @ D @ Li.T
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _chol(mat: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None


class _NTScaling:
    def __init__(self, X: np.ndarray, Z: np.ndarray, LX: np.ndarray, LZ: np.ndarray):
        U, s, Qt = np.linalg.svd(LZ.T @ LX)
        self.v = s
        inv_sqrt = 1.0 / np.sqrt(s)
        self.G = (LX @ Qt.T) * inv_sqrt
        self.W = self.G @ self.G.T
        # G^{-1} = diag(sqrt s) Q^T LX^{-1}
        LXinv = sla.solve_triangular(LX, np.eye(LX.shape[0]), lower=True)
        self.Ginv = (Qt @ LXinv) * np.sqrt(s)[:, None]

    def scaled(self, dX: np.ndarray, dZ: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.Ginv @ dX @ self.Ginv.T, self.G.T @ dZ @ self.G

    def rc(self, sigma_mu: float, corr: np.ndarray | None) -> np.ndarray:
        v = self.v
        rhs = -corr if corr is not None else np.zeros((v.size, v.size))
        rhs = rhs + np.diag(sigma_mu - v * v)
        S = rhs / (0.5 * (v[:, None] + v[None, :]))
        return self.G @ S @ self.G.T


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _kernel_ray(prob: SemidefiniteProgram, rel_tol: float = 1e-10) -> np.ndarray | None:
    """Unit ``d`` with ``A*(d) = 0``, ``E d = 0`` and ``b.d > 0``, if the constraint map has one."""
    G = prob.E.T @ prob.E
    for a in prob.A:
        G = G + (a @ a.T).toarray()
    vals, vecs = np.linalg.eigh(G)
    null = vecs[:, vals <= rel_tol * max(vals.max(initial=0.0), 1.0)]
    if null.shape[1] == 0:
        return None
    d = null @ (null.T @ prob.b)
    norm = np.linalg.norm(d)
    if norm <= 1e-8 * max(np.linalg.norm(prob.b), 1.0):
        return None
    return d / norm


def _is_feasible(prob: SemidefiniteProgram, y: np.ndarray, tol: float = 1e-9) -> bool:
    if not np.all(np.isfinite(y)):
        return False
    if np.linalg.norm(prob.E @ y - prob.e) > tol * (1 + np.linalg.norm(prob.e)):
        return False
    return all(np.linalg.eigvalsh(z).min() >= -tol for z in prob.slack(y))


def solve_sdp(
    prob: SemidefiniteProgram,
    tol: float = 1e-8,
    max_iter: int = 100,
    infeas_tol: float = 1e-8,
    keep_history: bool = False,
    refine_steps: int = 2,
    accept_gap: float = 1e-6,
    accept_feas: float = 1e-7,
) -> SDPSolution:
    """Primal-dual path following with NT scaling and Mehrotra correction.

    Status ``optimal`` means relative gap and both relative residuals are
    below ``tol``, or, when the iteration stalls numerically, that the best
    iterate seen has relative gap below ``accept_gap`` and residuals below
    ``accept_feas``. ``infeasible`` (the maximization over ``y`` has no feasible
    point) and ``unbounded`` are declared from approximate certificates whose
    normalized residual drops below ``infeas_tol``.
    """
    sizes = prob.block_sizes
    nb = len(sizes)
    m = prob.n_vars
    groups = _Groups(prob)
    n_total = sum(sizes)

    norm_b = np.linalg.norm(prob.b)
    norm_C = max(np.linalg.norm(c) for c in prob.C) if nb else 0.0
    norm_e = np.linalg.norm(prob.e)
    a_norms = np.zeros(m)
    for a in prob.A:
        a_norms = np.sqrt(a_norms**2 + np.asarray(a.multiply(a).sum(axis=1)).ravel())
    x0 = max(10.0, np.sqrt(max(sizes)), float(np.max((1 + np.abs(prob.b)) / (1 + a_norms))))
    z0 = max(10.0, np.sqrt(max(sizes)), norm_C, float(a_norms.max(initial=0.0)))
    X = [x0 * np.eye(n) for n in sizes]
    Z = [z0 * np.eye(n) for n in sizes]
    y = np.zeros(m)
    w = np.zeros(prob.E.shape[0])

    history = []
    status = "max-iterations"
    message = ""
    it = 0
    pobj = dobj = np.nan
    stall = 0
    best = None
    since_best = 0

    for it in range(max_iter + 1):
        AX = prob.apply(X)
        rp = prob.b - AX - prob.E.T @ w
        Rd = [c - z - s for c, z, s in zip(prob.C, Z, prob.adjoint(y))]
        re = prob.e - prob.E @ y
        xz = sum(float(np.sum(x * z)) for x, z in zip(X, Z))
        mu = xz / n_total
        pobj = sum(float(np.sum(c * x)) for c, x in zip(prob.C, X)) + float(prob.e @ w)
        dobj = float(prob.b @ y)
        rel_gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / (1 + norm_b)
        dinf = (np.sqrt(sum(float(np.sum(r * r)) for r in Rd)) + np.linalg.norm(re)) / (1 + norm_C + norm_e)
        history.append({"iter": it, "pobj": pobj, "dobj": dobj, "gap": rel_gap, "pinf": pinf, "dinf": dinf, "mu": mu})
        log.debug("it %d pobj %.9g dobj %.9g gap %.2e pinf %.2e dinf %.2e", it, pobj, dobj, rel_gap, pinf, dinf)

        if rel_gap < tol and pinf < tol and dinf < tol:
            status = "optimal"
            break

        merit = max(rel_gap / accept_gap, pinf / accept_feas, dinf / accept_feas)
        if best is None or merit < best["merit"]:
            best = {"merit": merit, "gap": rel_gap, "pinf": pinf, "dinf": dinf, "pobj": pobj, "dobj": dobj,
                    "X": X, "Z": Z, "y": y, "w": w, "it": it}
            since_best = 0
        else:
            since_best += 1
        # near the optimum the Newton systems lose accuracy before the gap
        # closes; once progress stops, settle for the best iterate
        if since_best >= 5 and best["merit"] <= 1:
            break

        # infeasibility certificates
        # (a) max over y infeasible: X, w with A(X) + E^T w ~ 0 and <C,X> + e.w < 0
        cert_p = -pobj
        if cert_p > 0:
            resid = np.linalg.norm(AX + prob.E.T @ w) / cert_p
            if resid < infeas_tol and dinf > tol:
                status = "infeasible"
                message = f"dual-infeasibility certificate, normalized residual {resid:.2e}"
                break
        # (b) max over y unbounded: y with -A*(y) >= 0 (up to Z), E y ~ 0, b.y > 0
        if dobj > 0:
            ady = prob.adjoint(y)
            resid = (
                np.sqrt(sum(float(np.sum(np.minimum(np.linalg.eigvalsh(-s), 0) ** 2)) for s in ady))
                + np.linalg.norm(prob.E @ y)
            ) / dobj
            if resid < infeas_tol and pinf > tol:
                status = "unbounded"
                message = f"unboundedness certificate, normalized residual {resid:.2e}"
                break
        if it == max_iter:
            break
        if not (np.isfinite(pobj) and np.isfinite(dobj) and np.isfinite(mu)):
            status = "numerical-error"
            message = "iterates diverged"
            break

        LX = [_chol(x) for x in X]
        LZ = [_chol(z) for z in Z]
        if any(L is None for L in LX + LZ):
            status = "numerical-error"
            message = "iterate lost positive definiteness"
            break
        scal = [_NTScaling(x, z, lx, lz) for x, z, lx, lz in zip(X, Z, LX, LZ)]

        # Schur complement, one dense factor per variable group
        factors, mats = [], []
        for idx, blks in zip(groups.members, groups.blocks):
            M = np.zeros((idx.size, idx.size))
            for j in blks:
                M += _schur_block(prob.A[j][idx], scal[j].W)
            try:
                cf = ("chol", sla.cho_factor(M, lower=True, check_finite=False))
            except np.linalg.LinAlgError:
                if best is not None and best["merit"] <= 1:
                    cf = None
                    break
                # numerically semidefinite: pivoted LU copes with the
                # rounding-level indefiniteness, refinement does the rest
                log.debug("it %d: Schur complement not numerically PD, using LU", it)
                cf = ("lu", sla.lu_factor(M, check_finite=False))
            factors.append(cf)
            mats.append(M)
        if cf is None:
            message = "Schur complement lost definiteness"
            break

        def m_solve(rhs):
            out = np.empty_like(rhs)
            for idx, (kind, cf) in zip(groups.members, factors):
                if kind == "chol":
                    out[idx] = sla.cho_solve(cf, rhs[idx], check_finite=False)
                else:
                    out[idx] = sla.lu_solve(cf, rhs[idx], check_finite=False)
            return out

        n_eq = prob.E.shape[0]
        if n_eq:
            K = np.column_stack([m_solve(col) for col in prob.E])
            S = prob.E @ K
            try:
                S_cf = sla.cho_factor(S, lower=True)
            except np.linalg.LinAlgError:
                S_cf = None

        def m_mult(v):
            out = np.empty_like(v)
            for idx, M in zip(groups.members, mats):
                out[idx] = M @ v[idx]
            return out

        def saddle_once(r1, r2):
            if n_eq:
                u = m_solve(r1)
                t = prob.E @ u - r2
                dw = sla.cho_solve(S_cf, t) if S_cf is not None else np.linalg.lstsq(S, t, rcond=None)[0]
                return u - K @ dw, dw
            return m_solve(r1), np.zeros(0)

        def saddle(r1, r2):
            dy, dw = saddle_once(r1, r2)
            scale = np.linalg.norm(r1) + np.linalg.norm(r2) + 1e-300
            for _ in range(refine_steps):
                e1 = r1 - m_mult(dy) - prob.E.T @ dw
                e2 = r2 - prob.E @ dy
                if np.linalg.norm(e1) + np.linalg.norm(e2) < 1e-15 * scale:
                    break
                cy, cw = saddle_once(e1, e2)
                dy, dw = dy + cy, dw + cw
            return dy, dw

        def direction(Rc):
            WRdW = [s.W @ r @ s.W for s, r in zip(scal, Rd)]
            rhs = rp - prob.apply(Rc) + prob.apply(WRdW)
            dy, dw = saddle(rhs, re)
            ady = prob.adjoint(dy)
            dZ = [_sym(r - a) for r, a in zip(Rd, ady)]
            dX = [_sym(rc - s.W @ dz @ s.W) for rc, s, dz in zip(Rc, scal, dZ)]
            # refine against the operator itself: the primal residual of the
            # assembled direction absorbs the cancellation in W dZ W
            for _ in range(refine_steps):
                e1 = rp - prob.apply(dX) - prob.E.T @ dw
                e2 = re - prob.E @ dy
                if np.linalg.norm(e1) <= 1e-14 * (1 + np.linalg.norm(rp)) and np.linalg.norm(e2) <= 1e-14:
                    break
                cy, cw = saddle(e1, e2)
                acy = prob.adjoint(cy)
                dy, dw = dy + cy, dw + cw
                dZ = [_sym(z - a) for z, a in zip(dZ, acy)]
                dX = [_sym(x + s.W @ a @ s.W) for x, s, a in zip(dX, scal, acy)]
            return dX, dy, dZ, dw

        def steps(dX, dZ, tau):
            ap = min([1.0] + [tau * _max_step(L, d) for L, d in zip(LX, dX)])
            ad = min([1.0] + [tau * _max_step(L, d) for L, d in zip(LZ, dZ)])
            return ap, ad

        if n_eq and S_cf is None and np.linalg.matrix_rank(S) < n_eq:
            status = "numerical-error"
            message = "equality constraints are degenerate"
            break

        # predictor
        Rc_aff = [s.rc(0.0, None) for s in scal]
        dXa, dya, dZa, dwa = direction(Rc_aff)
        ap, ad = steps(dXa, dZa, 1.0)
        mu_aff = sum(float(np.sum((x + ap * dx) * (z + ad * dz))) for x, dx, z, dz in zip(X, dXa, Z, dZa)) / n_total
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0

        # corrector
        Rc = []
        for s, dx, dz in zip(scal, dXa, dZa):
            tx, tz = s.scaled(dx, dz)
            Rc.append(s.rc(sigma * mu, _sym(tx @ tz)))
        dX, dy, dZ, dw = direction(Rc)
        tau = 0.9 + 0.09 * min(ap, ad)
        ap, ad = steps(dX, dZ, tau)

        X = [_sym(x + ap * d) for x, d in zip(X, dX)]
        w = w + ap * dw
        y = y + ad * dy
        Z = [_sym(z + ad * d) for z, d in zip(Z, dZ)]

        if max(ap, ad) < 1e-8:
            stall += 1
            if stall >= 3:
                status = "numerical-error"
                message = "step lengths collapsed"
                break
        else:
            stall = 0

    if status != "optimal" and status not in ("infeasible", "unbounded") and best is not None:
        if best["merit"] <= 1:
            X, Z, y, w = best["X"], best["Z"], best["y"], best["w"]
            pobj, dobj = best["pobj"], best["dobj"]
            message = f"accepted iterate {best['it']} at reduced accuracy (merit {best['merit']:.1e})"
            status = "optimal"
    if status in ("numerical-error", "max-iterations"):
        # a dependent constraint map makes the Schur complement singular; a
        # feasible point plus a kernel ray along b certifies unboundedness
        ray = _kernel_ray(prob)
        if ray is not None:
            start = next((c for c in (y, best and best["y"], np.zeros(m)) if c is not None and _is_feasible(prob, c)), None)
            if start is not None:
                status = "unbounded"
                message = f"feasible point plus kernel ray, b.d = {float(prob.b @ ray):.3g}"
                y, dobj, pobj = start + ray, float(prob.b @ (start + ray)), np.inf
    # the report follows the user-facing maximization: primal = b @ y
    report = SolveReport(status, float(dobj), float(pobj), float(abs(pobj - dobj)), int(it), message)
    return SDPSolution(y, X, Z, w, report, history if keep_history else [])
