"""States, projective measurements and Born-rule behaviors.

Conventions: outcome index 0 of a qubit observable is its +1 eigenspace, so a
two-outcome observable ``O`` (with ``O @ O = I``) has projectors
``(I + O) / 2`` and ``(I - O) / 2``. For general Hermitian observables outcome
``k`` is the eigenspace of the k-th largest eigenvalue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import unitary_group

from .behavior import BehaviorVector, Scenario

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
PROJECTOR_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

NONMAX_QUTRIT_COEFF = 0.7923


@dataclass(frozen=True)
class DensityMatrix:
    """Bipartite density matrix on ``C^dims[0] (x) C^dims[1]``."""

    matrix: np.ndarray
    dims: tuple[int, int]

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=complex)
        da, db = self.dims
        if rho.shape != (da * db, da * db):
            raise ValueError(f"state of shape {rho.shape} does not match party dimensions {self.dims}")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1) > TRACE_TOL:
            raise ValueError(f"density matrix has trace {np.trace(rho).real:.3g}")
        if np.linalg.eigvalsh(rho).min() < -PSD_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "matrix", rho)
        object.__setattr__(self, "dims", (int(da), int(db)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_vector(cls, psi, dims) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), tuple(dims))


@dataclass(frozen=True)
class MeasurementFamily:
    """Projective measurements of one party, ``projectors[x, a]`` is ``Pi_{a|x}``."""

    projectors: np.ndarray

    def __post_init__(self):
        proj = np.asarray(self.projectors, dtype=complex)
        if proj.ndim != 4 or proj.shape[2] != proj.shape[3]:
            raise ValueError("projectors must have shape (settings, outcomes, dim, dim)")
        eye = np.eye(proj.shape[2])
        for x, setting in enumerate(proj):
            if np.max(np.abs(setting.sum(axis=0) - eye)) > PROJECTOR_TOL:
                raise ValueError(f"projectors of setting {x} do not sum to the identity")
            for a, p in enumerate(setting):
                if np.max(np.abs(p - p.conj().T)) > PROJECTOR_TOL:
                    raise ValueError(f"projector ({x}, {a}) is not Hermitian")
                if np.max(np.abs(p @ p - p)) > PROJECTOR_TOL:
                    raise ValueError(f"projector ({x}, {a}) is not idempotent")
            for a in range(len(setting)):
                for b in range(a + 1, len(setting)):
                    if np.max(np.abs(setting[a] @ setting[b])) > PROJECTOR_TOL:
                        raise ValueError(f"projectors {a}, {b} of setting {x} are not orthogonal")
        proj.setflags(write=False)
        object.__setattr__(self, "projectors", proj)

    @property
    def n_settings(self) -> int:
        return self.projectors.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.projectors.shape[1]

    @property
    def dim(self) -> int:
        return self.projectors.shape[2]

    @classmethod
    def from_settings(cls, settings) -> "MeasurementFamily":
        """Stack per-setting projector arrays of shape ``(d, dim, dim)``."""
        return cls(np.stack([np.asarray(s, dtype=complex) for s in settings]))

    def select(self, settings) -> "MeasurementFamily":
        return MeasurementFamily(self.projectors[list(settings)])


@dataclass(frozen=True)
class QuantumSetup:
    """State plus Alice's and Bob's measurements.

    In protocol use Alice has ``m`` settings and Bob ``m + 1``; Bob's last
    setting is the key measurement and Alice's key measurement is setting 0.
    """

    state: DensityMatrix
    alice: MeasurementFamily
    bob: MeasurementFamily
    name: str = ""

    def __post_init__(self):
        if self.state.dims != (self.alice.dim, self.bob.dim):
            raise ValueError(
                f"state dims {self.state.dims} do not match measurement dims {(self.alice.dim, self.bob.dim)}"
            )
        if self.alice.n_outcomes != self.bob.n_outcomes:
            raise ValueError("both parties must have the same number of outcomes")

    @property
    def d(self) -> int:
        return self.alice.n_outcomes

    @property
    def pe_scenario(self) -> Scenario:
        """Parameter-estimation scenario: all of Alice's settings, Bob's minus the key one."""
        return Scenario(self.alice.n_settings, self.bob.n_settings - 1, self.d)

    def with_state(self, state: DensityMatrix) -> "QuantumSetup":
        return QuantumSetup(state, self.alice, self.bob, self.name)


# ---------------------------------------------------------------- states


def noisy_max_entangled_qudit(d: int, p: float) -> DensityMatrix:
    """``(1 - p) |psi><psi| + p I / d^2`` with ``|psi> = sum_i |ii> / sqrt(d)``."""
    if d < 2:
        raise ValueError(f"dimension must be at least 2, got {d}")
    if not 0 <= p <= 1:
        raise ValueError(f"noise weight must lie in [0, 1], got {p}")
    psi = np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d)
    rho = (1 - p) * np.outer(psi, psi.conj()) + p * np.eye(d * d) / d**2
    return DensityMatrix(rho, (d, d))


def noisy_bell_state(p: float) -> DensityMatrix:
    """``|Phi+>`` mixed with white noise of weight ``p``."""
    return noisy_max_entangled_qudit(2, p)


def nonmax_qutrit_state(coeff: float = NONMAX_QUTRIT_COEFF) -> DensityMatrix:
    """Pure state ``(|00> + coeff |11> + |22>) / sqrt(2 + coeff**2)``."""
    psi = np.zeros(9, dtype=complex)
    psi[0], psi[4], psi[8] = 1.0, coeff, 1.0
    return DensityMatrix.from_vector(psi, (3, 3))


# ---------------------------------------------------------- measurements


def projectors_from_observable(obs) -> np.ndarray:
    """Eigenprojectors of a Hermitian observable, largest eigenvalue first.

    Involutions (``O @ O = I``) with eigenvalues +1 and -1 use the closed form
    ``(I +/- O) / 2`` so that no eigenvector phase choice is involved.
    """
    obs = np.asarray(obs, dtype=complex)
    n = obs.shape[0]
    if np.max(np.abs(obs - obs.conj().T)) > PROJECTOR_TOL:
        raise ValueError("observable is not Hermitian")
    eye = np.eye(n)
    if n == 2 and np.max(np.abs(obs @ obs - eye)) < PROJECTOR_TOL and abs(np.trace(obs)) < PROJECTOR_TOL:
        return np.stack([(eye + obs) / 2, (eye - obs) / 2])
    vals, vecs = np.linalg.eigh(obs)
    if np.min(np.diff(vals)) < 1e-9:
        raise ValueError("observable has degenerate eigenvalues; give projectors explicitly")
    order = np.argsort(vals)[::-1]
    return np.stack([np.outer(vecs[:, k], vecs[:, k].conj()) for k in order])


def bloch_observable(theta: float) -> np.ndarray:
    """Projectors of ``sin(theta) sigma_x + cos(theta) sigma_z``, +1 outcome first."""
    return projectors_from_observable(np.sin(theta) * SIGMA_X + np.cos(theta) * SIGMA_Z)


def projectors_from_unitary(u) -> np.ndarray:
    """Apply ``u`` then measure in the computational basis: ``Pi_i = u^dag |i><i| u``."""
    u = np.asarray(u, dtype=complex)
    rows = u  # row i of u is <i| u
    return np.einsum("ik,il->ikl", rows.conj(), rows)


def nearest_involution(obs) -> np.ndarray:
    """Closest Hermitian matrix with eigenvalues +/-1 (sign of the spectrum)."""
    obs = np.asarray(obs, dtype=complex)
    herm = (obs + obs.conj().T) / 2
    vals, vecs = np.linalg.eigh(herm)
    signs = np.where(vals >= 0, 1.0, -1.0)
    return (vecs * signs) @ vecs.conj().T


def fourier_matrix(d: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``exp(2 pi i j k / d) / sqrt(d)``."""
    j = np.arange(d)
    return np.exp(2j * np.pi * np.outer(j, j) / d) / np.sqrt(d)


def cglmp_measurements(d: int) -> tuple[MeasurementFamily, MeasurementFamily]:
    """Two Alice settings and three Bob settings built from phase shifts and Fourier transforms.

    Alice setting ``x`` measures with ``V = F U(phi_x)``, Bob setting ``y`` with
    ``V = conj(F) U(varphi_y)``; Bob's third setting is the key measurement and
    is perfectly correlated with Alice's first on the maximally entangled state.
    """
    if d < 2:
        raise ValueError(f"dimension must be at least 2, got {d}")
    j = np.arange(d)
    alice_phases = [np.zeros(d), np.pi * j / d]
    bob_phases = [np.pi * j / (2 * d), -np.pi * j / (2 * d), np.zeros(d)]
    ft = fourier_matrix(d)
    alice = [projectors_from_unitary(ft @ np.diag(np.exp(1j * ph))) for ph in alice_phases]
    bob = [projectors_from_unitary(ft.conj() @ np.diag(np.exp(1j * ph))) for ph in bob_phases]
    return MeasurementFamily.from_settings(alice), MeasurementFamily.from_settings(bob)


def qubit_unitary(phi: float, psi: float, chi: float) -> np.ndarray:
    return np.array(
        [
            [np.exp(1j * psi) * np.cos(phi), np.exp(1j * chi) * np.sin(phi)],
            [-np.exp(-1j * chi) * np.sin(phi), np.exp(-1j * psi) * np.cos(phi)],
        ]
    )


def haar_random_qubit_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed SU(2) element in the ``U(phi, psi, chi)`` parametrization.

    ``cos(phi)**2`` is uniform on [0, 1] under the Haar measure, so ``phi`` is
    drawn as ``arccos(sqrt(u))``; the two phases are uniform on ``[0, 2 pi)``.
    """
    phi = np.arccos(np.sqrt(rng.random()))
    psi, chi = rng.uniform(0, 2 * np.pi, size=2)
    return qubit_unitary(phi, psi, chi)


def haar_random_qubit_observable(rng: np.random.Generator) -> np.ndarray:
    return projectors_from_unitary(haar_random_qubit_unitary(rng))


def haar_random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary from the QR decomposition of a complex Ginibre matrix."""
    if d == 1:
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1))
    return unitary_group.rvs(d, random_state=rng)


# ------------------------------------------------------------- behaviors


def born_probabilities(setup: QuantumSetup, settings_alice=None, settings_bob=None) -> BehaviorVector:
    """``P(a, b | x, y) = Tr[rho (Pi^A_{a|x} (x) Pi^B_{b|y})]`` for the requested settings.

    Defaults to the parameter-estimation settings: all of Alice's and all but
    Bob's last.
    """
    if settings_alice is None:
        settings_alice = range(setup.alice.n_settings)
    if settings_bob is None:
        settings_bob = range(setup.bob.n_settings - 1)
    sa, sb = list(settings_alice), list(settings_bob)
    if not sa or not sb:
        raise ValueError("need at least one setting per party")
    if max(sa) >= setup.alice.n_settings or max(sb) >= setup.bob.n_settings or min(sa + sb) < 0:
        raise ValueError("requested setting does not exist")
    da, db = setup.state.dims
    rho = setup.state.matrix.reshape(da, db, da, db)
    pa = setup.alice.projectors[sa]
    pb = setup.bob.projectors[sb]
    # Tr[rho (A (x) B)] = sum rho[i,k,j,l] A[j,i] B[l,k]
    probs = np.einsum("ikjl,xaji,yblk->xyab", rho, pa, pb, optimize=True)
    if np.max(np.abs(probs.imag)) > 1e-12:
        raise ValueError("Born probabilities have an imaginary part; check the inputs")
    probs = probs.real
    if probs.min() < -1e-10:
        raise ValueError("negative Born probability; is the state positive semidefinite?")
    probs = np.clip(probs, 0.0, None)
    scen = Scenario(len(sa), len(sb), setup.d)
    behavior = BehaviorVector(scen, probs.reshape(-1))
    gap = behavior.signalling_gap()
    if gap > 1e-10:
        raise AssertionError(f"quantum behavior signals by {gap:.2e}")
    return behavior


def key_distribution(setup: QuantumSetup, x: int = 0, y: int | None = None) -> np.ndarray:
    """Joint outcome distribution ``P(a, b)`` of the key settings (Alice ``x``, Bob last)."""
    y = setup.bob.n_settings - 1 if y is None else y
    return born_probabilities(setup, [x], [y]).table[0, 0]


def key_qber(setup: QuantumSetup, x: int = 0, y: int | None = None) -> float:
    """Probability that Alice's and Bob's key outcomes differ."""
    joint = key_distribution(setup, x, y)
    return float(max(0.0, 1.0 - np.trace(joint)))


# --------------------------------------------------------------- presets


def _qubit_family(observables) -> MeasurementFamily:
    return MeasurementFamily.from_settings([projectors_from_observable(o) for o in observables])


def chsh_setup(p: float = 0.0) -> QuantumSetup:
    """Noisy Bell state with settings that maximally violate CHSH; Bob's key is sigma_z."""
    alice = _qubit_family([SIGMA_Z, SIGMA_X])
    bob = _qubit_family([(SIGMA_Z + SIGMA_X) / np.sqrt(2), (SIGMA_Z - SIGMA_X) / np.sqrt(2), SIGMA_Z])
    return QuantumSetup(noisy_bell_state(p), alice, bob, name=f"chsh(p={p})")


def chain3_setup(p: float = 0.0, theta: float = 0.0) -> QuantumSetup:
    """Three settings per party in the x-z plane; ``theta`` tilts four of them."""
    alice = MeasurementFamily.from_settings(
        [bloch_observable(0.0), bloch_observable(np.pi / 3 - theta), bloch_observable(2 * np.pi / 3 + theta)]
    )
    bob = MeasurementFamily.from_settings(
        [
            bloch_observable(np.pi / 6 + theta),
            bloch_observable(np.pi / 2),
            bloch_observable(5 * np.pi / 6 - theta),
            bloch_observable(0.0),
        ]
    )
    return QuantumSetup(noisy_bell_state(p), alice, bob, name=f"chain3(p={p}, theta={theta})")


def cglmp_setup(d: int, p: float = 0.0, state: str = "max") -> QuantumSetup:
    """CGLMP-type measurements on a noisy maximally entangled qudit pair (or the non-maximal qutrit)."""
    alice, bob = cglmp_measurements(d)
    if state == "max":
        rho = noisy_max_entangled_qudit(d, p)
    elif state == "nonmax":
        if d != 3:
            raise ValueError("the non-maximally entangled preset exists only for d = 3")
        rho = nonmax_qutrit_state()
    else:
        raise ValueError(f"unknown state {state!r}")
    return QuantumSetup(rho, alice, bob, name=f"cglmp(d={d}, p={p}, state={state})")


def classical_uniform_setup() -> QuantumSetup:
    """Maximally mixed two-qubit state with the CHSH settings; every behavior is uniform."""
    return chsh_setup(1.0)


def random_qubit_setup(m: int, p: float, rng: np.random.Generator) -> QuantumSetup:
    """Noisy Bell state, key settings sigma_z / sigma_z, all other settings Haar random."""
    alice = [projectors_from_observable(SIGMA_Z)] + [haar_random_qubit_observable(rng) for _ in range(m - 1)]
    bob = [haar_random_qubit_observable(rng) for _ in range(m)] + [projectors_from_observable(SIGMA_Z)]
    return QuantumSetup(
        noisy_bell_state(p), MeasurementFamily.from_settings(alice), MeasurementFamily.from_settings(bob)
    )


def random_qudit_setup(d: int, p: float, rng: np.random.Generator, m: int = 2) -> QuantumSetup:
    """Noisy maximally entangled qudits, computational-basis key settings, other settings Haar random."""
    comp = projectors_from_unitary(np.eye(d))
    alice = [comp] + [projectors_from_unitary(haar_random_unitary(d, rng)) for _ in range(m - 1)]
    bob = [projectors_from_unitary(haar_random_unitary(d, rng)) for _ in range(m)] + [comp]
    return QuantumSetup(
        noisy_max_entangled_qudit(d, p),
        MeasurementFamily.from_settings(alice),
        MeasurementFamily.from_settings(bob),
    )


# Observables listed to four decimals; re-projected onto +/-1 involutions before use.
_EXPLICIT_OBSERVABLES = {
    "three": {
        "alice": [
            [[-0.1817, 0.1307 + 0.9746j], [0.1307 - 0.9746j, 0.1817]],
            [[-0.7746, 0.6186 - 0.1315j], [0.6186 + 0.1315j, 0.7746]],
        ],
        "bob": [
            [[0.7064, -0.6632 + 0.2473j], [-0.6632 - 0.2473j, -0.7064]],
            [[-0.6882, -0.2128 - 0.6936j], [-0.2128 + 0.6936j, 0.6882]],
            [[0.4046, -0.1960 + 0.8932j], [-0.1960 - 0.8932j, -0.4046]],
        ],
    },
    "two": {
        "alice": [[[0.7019, 0.5167 - 0.4903j], [0.5167 + 0.4903j, -0.7019]]],
        "bob": [
            [[-0.4091, -0.5937 + 0.6930j], [-0.5937 - 0.6930j, 0.4091]],
            [[-0.6133, -0.2514 + 0.7488j], [-0.2514 - 0.7488j, 0.6133]],
        ],
    },
    "extra": {
        "alice": [[[-0.1457, -0.9777 + 0.1513j], [-0.9777 - 0.1513j, 0.1457]]],
        "bob": [[[-0.9020, -0.3795 - 0.2056j], [-0.3795 + 0.2056j, 0.9020]]],
    },
}


def explicit_observables(name: str) -> dict[str, list[np.ndarray]]:
    """Raw four-decimal observables (without the fixed sigma_z settings)."""
    raw = _EXPLICIT_OBSERVABLES[name]
    return {party: [np.array(o, dtype=complex) for o in obs] for party, obs in raw.items()}


def explicit_presets(p: float = 0.0) -> dict[str, QuantumSetup]:
    """Explicit qubit settings on the noisy Bell state.

    ``"explicit3"``: three settings per party, meant to beat every two-setting
    CHSH subset. ``"explicit2"``: two settings per party, meant to give no key.
    ``"explicit2-ext"``: ``explicit2`` plus one more setting per party. Alice's
    first and Bob's last (key) settings are sigma_z.
    """
    three = explicit_observables("three")
    two = explicit_observables("two")
    extra = explicit_observables("extra")

    def build(alice_obs, bob_obs, name):
        alice = _qubit_family([SIGMA_Z] + [nearest_involution(o) for o in alice_obs])
        bob = _qubit_family([nearest_involution(o) for o in bob_obs] + [SIGMA_Z])
        return QuantumSetup(noisy_bell_state(p), alice, bob, name=name)

    return {
        "explicit3": build(three["alice"], three["bob"], "explicit3"),
        "explicit2": build(two["alice"], two["bob"], "explicit2"),
        "explicit2-ext": build(two["alice"] + extra["alice"], two["bob"] + extra["bob"], "explicit2-ext"),
    }


# ---------------------------------------------------------- setup files


def _decode_matrix(data) -> np.ndarray:
    rows = []
    for row in data:
        rows.append([complex(e[0], e[1]) if isinstance(e, (list, tuple)) else complex(e) for e in row])
    return np.array(rows, dtype=complex)


def _encode_matrix(mat) -> list:
    mat = np.asarray(mat, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in mat]


def _decode_setting(entry) -> np.ndarray:
    if isinstance(entry, dict):
        if "bloch" in entry:
            return bloch_observable(float(entry["bloch"]))
        if "observable" in entry:
            obs = _decode_matrix(entry["observable"])
            if obs.shape == (2, 2) and entry.get("project", True):
                obs = nearest_involution(obs)
            return projectors_from_observable(obs)
        if "projectors" in entry:
            return np.stack([_decode_matrix(m) for m in entry["projectors"]])
        if "unitary" in entry:
            return projectors_from_unitary(_decode_matrix(entry["unitary"]))
        raise ValueError(f"unrecognised setting entry {sorted(entry)}")
    return projectors_from_observable(_decode_matrix(entry))


def setup_from_dict(data: dict) -> QuantumSetup:
    """Build a setup from the JSON setup-file structure.

    ``state.kind`` is one of ``bell``, ``qudit``, ``nonmax_qutrit`` or
    ``explicit``; settings are observables, ``{"bloch": theta}``,
    ``{"projectors": [...]}`` or ``{"unitary": U}``. Complex entries are
    ``[re, im]`` pairs.
    """
    st = data["state"]
    kind = st.get("kind", "bell")
    p = float(st.get("p", 0.0))
    if kind == "bell":
        state = noisy_bell_state(p)
    elif kind == "qudit":
        state = noisy_max_entangled_qudit(int(st["d"]), p)
    elif kind == "nonmax_qutrit":
        state = nonmax_qutrit_state(float(st.get("coeff", NONMAX_QUTRIT_COEFF)))
    elif kind == "explicit":
        mat = _decode_matrix(st["matrix"])
        dims = st.get("dims")
        if dims is None:
            side = int(round(np.sqrt(mat.shape[0])))
            dims = (side, side)
        state = DensityMatrix(mat, tuple(dims))
    else:
        raise ValueError(f"unknown state kind {kind!r}")
    alice = MeasurementFamily.from_settings([_decode_setting(e) for e in data["alice"]])
    bob = MeasurementFamily.from_settings([_decode_setting(e) for e in data["bob"]])
    return QuantumSetup(state, alice, bob, name=data.get("name", ""))


def setup_to_dict(setup: QuantumSetup) -> dict:
    """Explicit serialization (state matrix and projectors) of any setup."""
    return {
        "name": setup.name,
        "state": {"kind": "explicit", "matrix": _encode_matrix(setup.state.matrix), "dims": list(setup.state.dims)},
        "alice": [{"projectors": [_encode_matrix(p) for p in s]} for s in setup.alice.projectors],
        "bob": [{"projectors": [_encode_matrix(p) for p in s]} for s in setup.bob.projectors],
    }


def load_setup(path) -> QuantumSetup:
    return setup_from_dict(json.loads(Path(path).read_text()))
