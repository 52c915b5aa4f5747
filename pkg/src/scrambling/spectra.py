"""Full diagonalization, density of states and canonical (Gibbs) quantities.

Dense diagonalization is the only route to thermal quantities. Two exact
reductions keep the dense blocks small:

* a diagonal phase gauge ``|s> -> i^(k popcount s) |s>`` that makes the
  driven-array Hamiltonian real (the XY hopping conserves popcount and the
  sigma^y drive becomes -sigma^x for k = 1);
* the site reflection ``i -> N + 1 - i`` of open uniform chains, which splits
  the Hilbert space into an even and an odd sector.

Both are checked on the actual matrix before use and skipped if they do not
hold.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ResourceError
from .hilbert import DEFAULT_MEMORY_BUDGET, HermitianOperator, RegisterLayout
from .observables import reduce_columns
from .states import thermal_energy

log = logging.getLogger(__name__)

DENSE_LIMIT = 1 << 14
CACHE_FORMAT_VERSION = 1
CACHE_ENV = "SCRAMBLING_CACHE_DIR"


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues and, optionally, the matching eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    fingerprint: str
    layout: RegisterLayout

    @property
    def e_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def e_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def extremes(self) -> tuple[float, float]:
        return self.e_min, self.e_max

    @property
    def has_vectors(self) -> bool:
        return self.eigenvectors is not None

    def require_vectors(self) -> np.ndarray:
        if self.eigenvectors is None:
            raise ValueError("this spectrum was computed without eigenvectors")
        return self.eigenvectors


def reflection_permutation(n: int) -> np.ndarray:
    """Basis index with the bit order of the n qubits reversed."""
    s = np.arange(1 << n, dtype=np.int64)
    r = np.zeros_like(s)
    for b in range(n):
        r |= ((s >> b) & 1) << (n - 1 - b)
    return r


def _popcount(s: np.ndarray) -> np.ndarray:
    c = np.zeros_like(s)
    while np.any(s):
        c += s & 1
        s = s >> 1
    return c


def real_gauge(H: HermitianOperator, tol: float = 1e-12) -> np.ndarray | None:
    """Diagonal phases ``D`` with ``D H D^dag`` real, or None if none of ``i^(k popcount)`` works."""
    if H.is_real:
        return np.ones(H.dim, dtype=np.complex128)
    pc = _popcount(np.arange(H.dim, dtype=np.int64))
    coo = H.matrix.tocoo()
    for k in (1, 3, 2):
        phases = 1j ** ((k * pc) % 4)
        data = phases[coo.row] * coo.data * np.conj(phases[coo.col])
        if np.abs(data.imag).max() <= tol:
            return phases
    return None


def reflection_sectors(n: int) -> list[sp.csr_matrix]:
    """Real isometries onto the even and odd reflection sectors."""
    dim = 1 << n
    perm = reflection_permutation(n)
    s = np.arange(dim, dtype=np.int64)
    pal = s[perm == s]
    pairs = s[s < perm]
    r = np.sqrt(0.5)
    n_even = pal.size + pairs.size
    rows = np.concatenate([pal, pairs, perm[pairs]])
    cols = np.concatenate([np.arange(pal.size), pal.size + np.arange(pairs.size), pal.size + np.arange(pairs.size)])
    vals = np.concatenate([np.ones(pal.size), np.full(pairs.size, r), np.full(pairs.size, r)])
    even = sp.csr_matrix((vals, (rows, cols)), shape=(dim, n_even))
    rows = np.concatenate([pairs, perm[pairs]])
    cols = np.concatenate([np.arange(pairs.size), np.arange(pairs.size)])
    vals = np.concatenate([np.full(pairs.size, r), np.full(pairs.size, -r)])
    odd = sp.csr_matrix((vals, (rows, cols)), shape=(dim, pairs.size))
    return [even, odd]


def commutes_with_reflection(H: HermitianOperator, tol: float = 1e-12) -> bool:
    if H.layout.has_ancilla:
        return False
    perm = reflection_permutation(H.layout.n_system)
    m = H.matrix
    p = sp.csr_matrix((np.ones(H.dim), (perm, np.arange(H.dim))), shape=m.shape)
    diff = (p @ m @ p.T - m).tocsr()
    return diff.nnz == 0 or float(np.abs(diff.data).max()) <= tol


def _dense_bytes(dim: int, want_vectors: bool, real: bool) -> int:
    item = 8 if real else 16
    # matrix being diagonalized, plus vectors and LAPACK workspace of similar size
    return dim * dim * item * (3 if want_vectors else 1)


def _symmetries(H: HermitianOperator, use_symmetry: bool):
    """Gauge phases (or None) and reflection-sector isometries (or None) that hold for ``H``."""
    if not use_symmetry:
        return None, None
    phases = real_gauge(H)
    sectors = reflection_sectors(H.layout.n_system) if commutes_with_reflection(H) else None
    return phases, sectors


def _gauged_matrix(H: HermitianOperator, phases: np.ndarray | None) -> sp.csr_matrix:
    m = H.matrix
    if phases is None:
        return m
    d = sp.diags(phases)
    m = (d @ m @ d.conj()).tocsr()
    return sp.csr_matrix((m.data.real, m.indices, m.indptr), shape=m.shape)


def full_spectrum(
    H: HermitianOperator,
    want_vectors: bool = False,
    dense_limit: int = DENSE_LIMIT,
    use_symmetry: bool = True,
    memory_budget: int | None = None,
    cache: "SpectrumCache | None" = None,
) -> Spectrum:
    """Complete eigendecomposition of ``H`` by dense diagonalization.

    Parameters
    ----------
    want_vectors : bool
        Also return the eigenvectors as dense columns in the original basis.
    use_symmetry : bool
        Use the real gauge and reflection sectors when they hold exactly.
    cache : SpectrumCache, optional
        Look up and store results by Hamiltonian fingerprint.
    """
    if cache is not None:
        hit = cache.load(H, want_vectors)
        if hit is not None:
            return hit
    if H.dim > dense_limit:
        raise ResourceError(
            f"dimension {H.dim} exceeds the dense limit {dense_limit}; use a smaller n",
            required_bytes=_dense_bytes(H.dim, want_vectors, H.is_real),
        )
    budget = DEFAULT_MEMORY_BUDGET if memory_budget is None else memory_budget

    phases, sectors = _symmetries(H, use_symmetry)
    real = phases is not None
    largest = max(b.shape[1] for b in sectors) if sectors else H.dim
    required = _dense_bytes(largest, want_vectors, real)
    if want_vectors:
        required += H.dim * H.dim * (8 if (real and H.is_real) else 16)
    if required > budget:
        hint = " try eigenvalue-only mode or a smaller n" if want_vectors else " use a smaller n"
        raise ResourceError(
            f"diagonalizing dimension {H.dim} needs about {required / 2**30:.2f} GiB, "
            f"budget is {budget / 2**30:.2f} GiB;{hint}",
            required_bytes=required,
        )

    m = _gauged_matrix(H, phases)
    blocks = sectors if sectors else [sp.identity(H.dim, format="csr")]

    values, vectors = [], []
    for b in blocks:
        dense = (b.T @ (m @ b)).toarray()
        log.info("diagonalizing block of dimension %d", dense.shape[0])
        if want_vectors:
            w, v = sla.eigh(dense, overwrite_a=True, check_finite=False)
            vectors.append((b @ v) if sectors else v)
        else:
            w = sla.eigh(dense, eigvals_only=True, overwrite_a=True, check_finite=False)
        del dense
        values.append(w)

    evals = np.concatenate(values)
    order = np.argsort(evals, kind="stable")
    evals = evals[order]
    evecs = None
    if want_vectors:
        evecs = np.concatenate(vectors, axis=1)[:, order]
        if real and not H.is_real:
            evecs = np.conj(phases)[:, None] * evecs
    spectrum = Spectrum(evals, evecs, H.fingerprint, H.layout)
    if cache is not None:
        cache.store(spectrum)
    return spectrum


class SpectrumCache:
    """Directory of ``.npz`` spectra keyed by Hamiltonian fingerprint."""

    def __init__(self, directory: str | os.PathLike | None = None):
        if directory is None:
            directory = os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "scrambling"
        self.directory = Path(directory)

    def _path(self, fingerprint: str, vectors: bool) -> Path:
        kind = "vecs" if vectors else "vals"
        return self.directory / f"spectrum-v{CACHE_FORMAT_VERSION}-{fingerprint[:32]}-{kind}.npz"

    def load(self, H: HermitianOperator, want_vectors: bool) -> Spectrum | None:
        candidates = [self._path(H.fingerprint, True)]
        if not want_vectors:
            candidates.insert(0, self._path(H.fingerprint, False))
        for path in candidates:
            if not path.exists():
                continue
            with np.load(path, allow_pickle=False) as f:
                if int(f["format_version"]) != CACHE_FORMAT_VERSION or str(f["fingerprint"]) != H.fingerprint:
                    continue
                vecs = f["eigenvectors"] if (want_vectors and "eigenvectors" in f.files) else None
                log.info("spectrum cache hit: %s", path.name)
                return Spectrum(f["eigenvalues"], vecs, H.fingerprint, H.layout)
        return None

    def store(self, s: Spectrum) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self._path(s.fingerprint, s.has_vectors)
        tmp = path.with_suffix(".tmp.npz")
        arrays = {
            "eigenvalues": s.eigenvalues,
            "format_version": np.array(CACHE_FORMAT_VERSION),
            "fingerprint": np.array(s.fingerprint),
        }
        if s.has_vectors:
            arrays["eigenvectors"] = s.eigenvectors
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
        return path


@dataclass(frozen=True)
class DosHistogram:
    edges: np.ndarray
    counts: np.ndarray
    n: int
    label: str = ""

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def argmax_center(self) -> float:
        return float(self.centers[int(np.argmax(self.counts))])


def density_of_states(s: Spectrum, bins: int = 100, label: str = "") -> DosHistogram:
    """Eigenvalue histogram over the energy density ``(E - E_min)/(E_max - E_min)``."""
    if s.eigenvalues.size == 0:
        raise ValueError("empty spectrum")
    if bins < 2:
        raise ValueError("need at least two bins")
    eps = (s.eigenvalues - s.e_min) / (s.e_max - s.e_min)
    counts, edges = np.histogram(eps, bins=bins, range=(0.0, 1.0))
    return DosHistogram(edges, counts, s.layout.n_system, label)


def boltzmann_weights(energies: np.ndarray, beta: float) -> np.ndarray:
    """Normalized canonical weights, shifted by the edge that keeps exponents non-positive."""
    if not np.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta}")
    energies = np.asarray(energies, dtype=float)
    ref = energies.min() if beta >= 0 else energies.max()
    w = np.exp(-beta * (energies - ref))
    return w / w.sum()


def gibbs_state(s: Spectrum, beta: float) -> np.ndarray:
    """Dense ``exp(-beta H) / Z`` of the full system."""
    v = s.require_vectors()
    w = boltzmann_weights(s.eigenvalues, beta)
    return (v * w) @ v.conj().T


def thermal_rdm(s: Spectrum, beta: float, subset, chunk: int = 1024) -> np.ndarray:
    """Reduced Gibbs state on ``subset`` (system qubit labels), without forming the full state."""
    subset = list(subset)
    if not subset:
        raise ValueError("subset must be non-empty")
    if any(q < 1 or q > s.layout.n_system for q in subset):
        raise ValueError(f"subset {subset} must contain system qubits 1..{s.layout.n_system} only")
    v = s.require_vectors()
    sq = np.sqrt(boltzmann_weights(s.eigenvalues, beta))
    rho = None
    for start in range(0, v.shape[1], chunk):
        cols = v[:, start : start + chunk] * sq[start : start + chunk]
        part = reduce_columns(cols, subset, s.layout)
        rho = part if rho is None else rho + part
    return rho


def thermal_expectation(s: Spectrum, beta: float, O: HermitianOperator) -> float:
    """``Tr[rho(beta) O]`` as an eigenbasis sum."""
    if O.dim != s.eigenvalues.size:
        raise ValueError(f"dimension mismatch: operator {O.dim}, spectrum {s.eigenvalues.size}")
    w = boltzmann_weights(s.eigenvalues, beta)
    v = s.require_vectors()
    diag = np.einsum("ij,ij->j", v.conj(), O.matrix @ v).real
    return float(np.dot(w, diag))


def thermal_energy_curve(s: Spectrum, betas) -> np.ndarray:
    return np.array([thermal_energy(s.eigenvalues, b) for b in betas])


def thermal_rdms(
    H: HermitianOperator,
    betas,
    subset,
    energies: np.ndarray | None = None,
    use_symmetry: bool = True,
    chunk: int = 1024,
) -> list[np.ndarray]:
    """Reduced Gibbs states on ``subset`` for several ``betas``, one symmetry sector at a time.

    Peak memory is set by the largest sector rather than by the full
    eigenvector matrix, which is what makes n=14 reachable. ``energies``
    (the full spectrum, e.g. from the cache) sets the exponent reference;
    an eigenvalue-only diagonalization supplies it when omitted.
    """
    subset = list(subset)
    if not subset:
        raise ValueError("subset must be non-empty")
    if any(q < 1 or q > H.layout.n_system for q in subset):
        raise ValueError(f"subset {subset} must contain system qubits 1..{H.layout.n_system} only")
    betas = [float(b) for b in betas]
    phases, sectors = _symmetries(H, use_symmetry)
    m = _gauged_matrix(H, phases)
    blocks = sectors if sectors else [sp.identity(H.dim, format="csr")]

    if energies is None:
        energies = full_spectrum(H, use_symmetry=use_symmetry).eigenvalues
    # unnormalized weights exp(-beta (E - ref)); the reference edge keeps exponents non-positive
    refs = [energies.min() if b >= 0 else energies.max() for b in betas]
    rhos = [None] * len(betas)
    for b in blocks:
        dense = (b.T @ (m @ b)).toarray()
        log.info("diagonalizing block of dimension %d for thermal states", dense.shape[0])
        w, v = sla.eigh(dense, overwrite_a=True, check_finite=False)
        del dense
        for start in range(0, v.shape[1], chunk):
            cols = b @ v[:, start : start + chunk] if sectors else v[:, start : start + chunk]
            if phases is not None and not H.is_real:
                cols = np.conj(phases)[:, None] * cols
            for k, beta in enumerate(betas):
                sq = np.exp(-0.5 * beta * (w[start : start + chunk] - refs[k]))
                part = reduce_columns(cols * sq, subset, H.layout)
                rhos[k] = part if rhos[k] is None else rhos[k] + part
    return [rho / np.trace(rho).real for rho in rhos]
