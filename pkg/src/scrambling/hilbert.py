"""Register layout, Pauli strings and the spin-chain Hamiltonians.

Basis convention: ``|0>`` is the sigma^z = +1 eigenstate, system qubit ``i``
(1-based) lives on bit ``i - 1`` of the basis index and the ancilla, when
present, on the highest bit. Label ``0`` always refers to the ancilla.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ResourceError

ANCILLA = 0

# bytes; overridable per call
DEFAULT_MEMORY_BUDGET = 4 * 2**30

HERMITICITY_TOL = 1e-12

_AXES = ("x", "y", "z")


@dataclass(frozen=True)
class RegisterLayout:
    """Qubit register: ``n_system`` chain qubits plus an optional ancilla."""

    n_system: int
    has_ancilla: bool = False

    def __post_init__(self):
        if int(self.n_system) != self.n_system or self.n_system < 1:
            raise ValueError(f"n_system must be a positive integer, got {self.n_system!r}")

    @property
    def n_total(self) -> int:
        return self.n_system + (1 if self.has_ancilla else 0)

    @property
    def dim(self) -> int:
        return 1 << self.n_total

    @property
    def labels(self) -> tuple[int, ...]:
        """All qubit labels in ascending bit position."""
        system = tuple(range(1, self.n_system + 1))
        return system + ((ANCILLA,) if self.has_ancilla else ())

    def bit(self, label: int) -> int:
        """Bit position of a qubit label."""
        if label == ANCILLA:
            if not self.has_ancilla:
                raise ValueError("layout has no ancilla")
            return self.n_system
        if not 1 <= label <= self.n_system:
            raise ValueError(f"qubit label {label} outside 1..{self.n_system}")
        return label - 1

    def label(self, bit: int) -> int:
        """Inverse of :meth:`bit`."""
        if not 0 <= bit < self.n_total:
            raise ValueError(f"bit {bit} outside register of {self.n_total} qubits")
        if bit == self.n_system:
            return ANCILLA
        return bit + 1

    def system_only(self) -> "RegisterLayout":
        return RegisterLayout(self.n_system, False)

    def with_ancilla(self) -> "RegisterLayout":
        return RegisterLayout(self.n_system, True)

    @classmethod
    def for_dimension(cls, dim: int, has_ancilla: bool = False) -> "RegisterLayout":
        n_total = int(dim).bit_length() - 1
        if n_total < 1 or (1 << n_total) != dim:
            raise ValueError(f"dimension {dim} is not a power of two >= 2")
        return cls(n_total - (1 if has_ancilla else 0), has_ancilla)


@dataclass(frozen=True)
class IsingParams:
    """Chain with ZZ coupling ``J``, transverse field ``g`` and parallel field ``h``."""

    n: int
    J: float = 1.0
    g: float = 1.05
    h: float = -0.5

    @property
    def non_integrable(self) -> bool:
        return self.g * self.h != 0


@dataclass(frozen=True)
class SqaParams:
    """Driven XY chain: hopping ``lam`` and sigma^y drive amplitude ``omega``."""

    n: int
    lam: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.omega)):
            raise ValueError("lam and omega must be finite")


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Immutable sparse Hermitian matrix acting on a :class:`RegisterLayout`."""

    matrix: sp.csr_matrix
    layout: RegisterLayout
    name: str = ""

    def __post_init__(self):
        m = self.matrix
        if m.shape != (self.layout.dim, self.layout.dim):
            raise ValueError(f"matrix shape {m.shape} does not match layout dim {self.layout.dim}")
        m = sp.csr_matrix(m, dtype=np.complex128)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        err = hermiticity_error(m)
        if err > HERMITICITY_TOL:
            raise ValueError(f"operator is not Hermitian (max |H - H^dag| = {err:.3e})")

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def is_real(self) -> bool:
        return not np.any(self.matrix.data.imag)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, v):
        return apply(self, v)

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        if other.layout != self.layout:
            raise ValueError("layout mismatch")
        return HermitianOperator(self.matrix + other.matrix, self.layout)

    def scaled(self, a: float, b: float = 0.0) -> "HermitianOperator":
        """Return ``a * H + b * 1``."""
        m = a * self.matrix + b * sp.identity(self.dim, dtype=np.complex128, format="csr")
        return HermitianOperator(m, self.layout, self.name)

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.vdot(psi, apply(self, psi)).real)

    def extend_with_ancilla(self) -> "HermitianOperator":
        """Identity on an ancilla placed on the new highest bit."""
        if self.layout.has_ancilla:
            raise ValueError("operator already includes the ancilla")
        m = sp.kron(sp.identity(2, format="csr"), self.matrix, format="csr")
        return HermitianOperator(m, self.layout.with_ancilla(), self.name)

    @cached_property
    def fingerprint(self) -> str:
        """Content hash of the matrix, used as a cache key."""
        m = self.matrix
        digest = hashlib.sha256()
        digest.update(repr((m.shape, self.layout.n_system, self.layout.has_ancilla)).encode())
        digest.update(np.ascontiguousarray(m.indptr, dtype=np.int64).tobytes())
        digest.update(np.ascontiguousarray(m.indices, dtype=np.int64).tobytes())
        digest.update(np.ascontiguousarray(m.data).tobytes())
        return digest.hexdigest()


def hermiticity_error(m) -> float:
    diff = (m - m.conj().T).tocsr()
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


def _check_budget(n_entries: int, budget: int | None, what: str) -> None:
    # COO triplet (two int64 + complex128) plus the CSR copy
    required = int(n_entries) * (8 + 8 + 16) + int(n_entries) * (16 + 4)
    budget = DEFAULT_MEMORY_BUDGET if budget is None else budget
    if required > budget:
        raise ResourceError(
            f"{what} needs about {required / 2**20:.1f} MiB, budget is {budget / 2**20:.1f} MiB",
            required_bytes=required,
        )


def _pauli_column(layout: RegisterLayout, assignments: Sequence[tuple[int, str]]):
    """Row index and value for every column of a Pauli string."""
    cols = np.arange(layout.dim, dtype=np.int64)
    vals = np.ones(layout.dim, dtype=np.complex128)
    flip = 0
    seen = set()
    for label, axis in assignments:
        if axis not in _AXES:
            raise ValueError(f"unknown Pauli axis {axis!r}")
        if label in seen:
            raise ValueError(f"qubit {label} assigned twice")
        seen.add(label)
        b = layout.bit(label)
        bits = (cols >> b) & 1
        if axis == "x":
            flip |= 1 << b
        elif axis == "y":
            flip |= 1 << b
            # sigma^y|0> = i|1>, sigma^y|1> = -i|0>
            vals *= np.where(bits == 0, 1j, -1j)
        else:
            vals *= 1 - 2 * bits
    return cols ^ flip, cols, vals


def pauli_term(layout: RegisterLayout, assignments: Sequence[tuple[int, str]]) -> HermitianOperator:
    """Tensor product of Pauli matrices on the listed qubits, identity elsewhere.

    Parameters
    ----------
    layout : RegisterLayout
    assignments : sequence of (label, axis)
        ``axis`` is one of ``"x"``, ``"y"``, ``"z"``.
    """
    if not assignments:
        raise ValueError("at least one (qubit, axis) assignment is required")
    rows, cols, vals = _pauli_column(layout, assignments)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(layout.dim, layout.dim))
    return HermitianOperator(m, layout, "".join(f"{a}{q}" for q, a in assignments))


def pauli_sum(
    layout: RegisterLayout,
    terms: Iterable[tuple[float, Sequence[tuple[int, str]]]],
    name: str = "",
    memory_budget: int | None = None,
) -> HermitianOperator:
    """Real linear combination of Pauli strings, assembled in one CSR pass."""
    terms = [(c, a) for c, a in terms if c != 0]
    _check_budget(max(len(terms), 1) * layout.dim, memory_budget, name or "operator")
    if not terms:
        return HermitianOperator(sp.csr_matrix((layout.dim, layout.dim), dtype=np.complex128), layout, name)
    rows, cols, vals = [], [], []
    for coeff, assignment in terms:
        r, c, v = _pauli_column(layout, assignment)
        rows.append(r)
        cols.append(c)
        vals.append(coeff * v)
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(layout.dim, layout.dim),
    ).tocsr()
    return HermitianOperator(m, layout, name)


def build_ising(p: IsingParams, memory_budget: int | None = None) -> HermitianOperator:
    """Open-chain Ising model ``-J sum zz + g sum x + h sum z``."""
    if p.n < 1:
        raise ValueError("n must be >= 1")
    layout = RegisterLayout(p.n)
    terms = [(-p.J, [(i, "z"), (i + 1, "z")]) for i in range(1, p.n)]
    terms += [(p.g, [(i, "x")]) for i in range(1, p.n + 1)]
    terms += [(p.h, [(i, "z")]) for i in range(1, p.n + 1)]
    return pauli_sum(layout, terms, f"ising(n={p.n},J={p.J},g={p.g},h={p.h})", memory_budget)


def _xy_terms(lam: float, n: int):
    terms = []
    for i in range(1, n):
        terms.append((lam, [(i, "x"), (i + 1, "x")]))
        terms.append((lam, [(i, "y"), (i + 1, "y")]))
    return terms


def build_xy(lam: float, n: int, memory_budget: int | None = None) -> HermitianOperator:
    """Open XY chain ``lam * sum (xx + yy)``."""
    if n < 2:
        raise ValueError("the XY chain needs n >= 2")
    return pauli_sum(RegisterLayout(n), _xy_terms(lam, n), f"xy(n={n},lam={lam})", memory_budget)


def build_sqa(p: SqaParams, memory_budget: int | None = None) -> HermitianOperator:
    """Driven qubit array: XY chain plus a uniform sigma^y drive of amplitude omega."""
    if p.n < 2:
        raise ValueError("the driven array needs n >= 2")
    terms = _xy_terms(p.lam, p.n) + [(p.omega, [(i, "y")]) for i in range(1, p.n + 1)]
    return pauli_sum(
        RegisterLayout(p.n), terms, f"sqa(n={p.n},lam={p.lam},omega={p.omega})", memory_budget
    )


def total_magnetization(layout: RegisterLayout, axis: str = "z") -> HermitianOperator:
    """Sum of sigma^axis over the system qubits."""
    return pauli_sum(layout, [(1.0, [(i, axis)]) for i in range(1, layout.n_system + 1)], f"M{axis}")


def apply(H: HermitianOperator, v: np.ndarray) -> np.ndarray:
    """Matrix-vector (or matrix-block) product ``H @ v``."""
    v = np.asarray(v)
    if v.shape[0] != H.dim:
        raise ValueError(f"dimension mismatch: operator {H.dim}, vector {v.shape[0]}")
    return H.matrix @ v


def sigma_x_rewrite(p: SqaParams) -> HermitianOperator:
    """The sigma^x-basis form ``Lambda sum zz + omega sum x + omega sum xx`` with Lambda = 2 lam.

    Exposed only for spectral comparison against :func:`build_sqa`; the two
    are not asserted to be equivalent.
    """
    big_lambda = 2.0 * p.lam
    terms = [(big_lambda, [(i, "z"), (i + 1, "z")]) for i in range(1, p.n)]
    terms += [(p.omega, [(i, "x")]) for i in range(1, p.n + 1)]
    terms += [(p.omega, [(i, "x"), (i + 1, "x")]) for i in range(1, p.n)]
    return pauli_sum(RegisterLayout(p.n), terms, "sqa_sigma_x_rewrite")


def spectral_mismatch(a: HermitianOperator, b: HermitianOperator) -> float:
    """Largest absolute difference between the sorted spectra of two small operators."""
    ea = np.linalg.eigvalsh(a.toarray())
    eb = np.linalg.eigvalsh(b.toarray())
    return float(np.max(np.abs(ea - eb)))
