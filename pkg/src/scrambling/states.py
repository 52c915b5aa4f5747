"""Initial states of the quench protocol and their thermodynamic characterization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoFiniteBetaError
from .hilbert import HermitianOperator, RegisterLayout

SIGMA = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}

BETA_CAP = 500.0
ENERGY_TOL = 1e-10


@dataclass(frozen=True)
class BlochDirection:
    """Unit vector with polar angle ``theta`` and azimuth ``phi`` (radians).

    Angles are normalized to ``theta in [0, pi]`` and ``phi in [0, 2 pi)``.
    """

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        theta = math.remainder(float(self.theta), 2 * math.pi)
        phi = float(self.phi)
        if theta < 0:
            theta = -theta
            phi += math.pi
        phi = phi % (2 * math.pi)
        if phi >= 2 * math.pi:
            phi = 0.0
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_pi_units(cls, theta: float, phi: float = 0.0) -> "BlochDirection":
        """Angles given as multiples of pi, e.g. ``(0.5, 1.369)``."""
        return cls(theta * math.pi, phi * math.pi)

    @property
    def vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])

    def n_dot_sigma(self) -> np.ndarray:
        nx, ny, nz = self.vector
        return nx * SIGMA["x"] + ny * SIGMA["y"] + nz * SIGMA["z"]


def _sign(sign) -> int:
    if sign in (+1, "+"):
        return +1
    if sign in (-1, "-"):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def rotation_matrix(d: BlochDirection) -> np.ndarray:
    """Unitary whose columns are the +1 and -1 eigenvectors of n.sigma."""
    c = math.cos(d.theta / 2)
    s = math.sin(d.theta / 2)
    e = np.exp(1j * d.phi)
    return np.array([[c, -np.conj(e) * s], [e * s, c]], dtype=np.complex128)


def bloch_eigenstate(d: BlochDirection, sign="+") -> np.ndarray:
    """Eigenvector of n.sigma with eigenvalue ``sign * 1``, phase fixed by :func:`rotation_matrix`."""
    column = 0 if _sign(sign) > 0 else 1
    return rotation_matrix(d)[:, column].copy()


def generalized_cnot(d: BlochDirection) -> np.ndarray:
    """Controlled flip in the rotated basis; control is the ancilla (first factor), target Q_1."""
    R = rotation_matrix(d)
    x_tilde = R @ SIGMA["x"] @ R.conj().T
    plus = R[:, [0]]
    minus = R[:, [1]]
    return np.kron(plus @ plus.conj().T, np.eye(2)) + np.kron(minus @ minus.conj().T, x_tilde)


@dataclass(frozen=True)
class InitialStateSpec:
    """Product-state family for the quench: ``isotropic`` or ``neel``.

    ``neel`` puts the even-indexed qubits in the -1 eigenstate of n.sigma.
    With ``with_ancilla_ghz`` the ancilla is entangled with Q_1 through the
    generalized CNOT.
    """

    family: str
    direction: BlochDirection
    with_ancilla_ghz: bool = True

    def __post_init__(self):
        if self.family not in ("isotropic", "neel"):
            raise ValueError(f"unknown state family {self.family!r}")

    def signs(self, n: int) -> list[int]:
        if self.family == "isotropic":
            return [+1] * n
        if n % 2:
            raise ValueError(f"Neel-type states need an even number of qubits, got {n}")
        return [+1 if i % 2 else -1 for i in range(1, n + 1)]

    def label(self) -> str:
        th = self.direction.theta / math.pi
        ph = self.direction.phi / math.pi
        return f"{self.family}_theta{th:.4f}pi_phi{ph:.4f}pi"


def product_state(single_qubit: Sequence[np.ndarray]) -> np.ndarray:
    """Product of one-qubit states, ``single_qubit[0]`` on qubit 1 (lowest bit)."""
    psi = np.ones(1, dtype=np.complex128)
    for v in single_qubit:
        psi = np.kron(v, psi)
    return psi


def system_product_state(spec: InitialStateSpec, n: int) -> np.ndarray:
    """The ancilla-free product state of the family, qubit 1 in the + state."""
    d = spec.direction
    return product_state([bloch_eigenstate(d, s) for s in spec.signs(n)])


@dataclass
class BranchPair:
    """Protocol state ``(|d,+>_A |psi_plus> + |d,->_A |psi_minus>) / sqrt 2``.

    The ancilla is idle under the Hamiltonian, so the two system branches
    evolve independently.
    """

    plus: np.ndarray
    minus: np.ndarray
    direction: BlochDirection

    @property
    def n_system(self) -> int:
        return int(self.plus.size).bit_length() - 1

    def full_state(self) -> np.ndarray:
        """Amplitudes on the (N+1)-qubit register, ancilla on the highest bit."""
        a_plus = bloch_eigenstate(self.direction, "+")
        a_minus = bloch_eigenstate(self.direction, "-")
        low = a_plus[0] * self.plus + a_minus[0] * self.minus
        high = a_plus[1] * self.plus + a_minus[1] * self.minus
        return np.concatenate([low, high]) / math.sqrt(2)

    def with_branches(self, plus: np.ndarray, minus: np.ndarray) -> "BranchPair":
        return BranchPair(plus, minus, self.direction)


def branch_pair(spec: InitialStateSpec, n: int) -> BranchPair:
    """Branch form of the scrambling initial state."""
    d = spec.direction
    rest = [bloch_eigenstate(d, s) for s in spec.signs(n)[1:]]
    plus = product_state([bloch_eigenstate(d, "+")] + rest)
    minus = product_state([bloch_eigenstate(d, "-")] + rest)
    return BranchPair(plus, minus, d)


def scrambling_initial_state(spec: InitialStateSpec, layout: RegisterLayout) -> np.ndarray:
    """Full amplitude vector of the protocol (or plain product) initial state.

    With the ancilla, the state is produced by literally applying the
    generalized CNOT to ``(|d,+> + |d,->)/sqrt 2`` on the ancilla and the
    product state on the chain.
    """
    if layout.has_ancilla != spec.with_ancilla_ghz:
        raise ValueError("layout.has_ancilla must match spec.with_ancilla_ghz")
    n = layout.n_system
    chain = system_product_state(spec, n)
    if not spec.with_ancilla_ghz:
        return chain
    d = spec.direction
    ancilla = (bloch_eigenstate(d, "+") + bloch_eigenstate(d, "-")) / math.sqrt(2)
    # ancilla on the highest bit: kron(ancilla, chain); CNOT acts on (ancilla, Q_1)
    psi = np.kron(ancilla, chain).reshape(2, 1 << (n - 1), 2)
    cnot = generalized_cnot(d).reshape(2, 2, 2, 2)
    psi = np.einsum("abcd,cxd->axb", cnot, psi)
    return psi.reshape(-1)


def energy_density(psi: np.ndarray, H: HermitianOperator, extremes: tuple[float, float]) -> float:
    """Relative position of ``<psi|H|psi>`` between the spectral edges.

    If ``psi`` lives on the register with ancilla, ``H`` is extended by the
    identity on the ancilla.
    """
    e_min, e_max = extremes
    if not e_min < e_max:
        raise ValueError(f"need E_min < E_max, got ({e_min}, {e_max})")
    if psi.shape[0] == 2 * H.dim:
        H = H.extend_with_ancilla()
    return (H.expectation(psi) - e_min) / (e_max - e_min)


def thermal_energy(energies: np.ndarray, beta: float) -> float:
    """Canonical mean energy, with the Boltzmann factors shifted to avoid overflow."""
    energies = np.asarray(energies, dtype=float)
    if beta == 0:
        return float(energies.mean())
    ref = energies[0] if beta > 0 else energies[-1]
    w = np.exp(-beta * (energies - ref))
    return float(np.dot(w, energies) / w.sum())


def inverse_temperature(target, energies: np.ndarray, H: HermitianOperator | None = None) -> float:
    """Inverse temperature whose canonical energy equals the target.

    Parameters
    ----------
    target : float or ndarray
        The energy ``E*`` or a state vector; a state needs ``H``.
    energies : ndarray
        Full ascending spectrum.

    Uses bisection after expanding the bracket geometrically from [-1, 1].
    """
    energies = np.asarray(energies, dtype=float)
    if np.ndim(target) > 0:
        if H is None:
            raise ValueError("a Hamiltonian is required to evaluate the state's energy")
        psi = np.asarray(target)
        if psi.shape[0] == 2 * H.dim:
            H = H.extend_with_ancilla()
        target = H.expectation(psi)
    e_star = float(target)
    e_min, e_max = float(energies[0]), float(energies[-1])
    if e_star <= e_min:
        raise NoFiniteBetaError(f"E*={e_star} at or below the lower spectral edge {e_min}", "E_min")
    if e_star >= e_max:
        raise NoFiniteBetaError(f"E*={e_star} at or above the upper spectral edge {e_max}", "E_max")

    def f(beta):
        return thermal_energy(energies, beta) - e_star

    if abs(f(0.0)) <= ENERGY_TOL:
        return 0.0
    lo, hi = -1.0, 1.0
    while f(lo) < 0:
        if lo <= -BETA_CAP:
            raise NoFiniteBetaError(f"no beta >= -{BETA_CAP} reaches E*={e_star}", "E_max")
        lo = max(2 * lo, -BETA_CAP)
    while f(hi) > 0:
        if hi >= BETA_CAP:
            raise NoFiniteBetaError(f"no beta <= {BETA_CAP} reaches E*={e_star}", "E_min")
        hi = min(2 * hi, BETA_CAP)
    # f is decreasing in beta: f(lo) >= 0 >= f(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= ENERGY_TOL or hi - lo < 1e-15:
            return mid
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
