"""Unitary time evolution: Lanczos-Krylov propagation and an eigenbasis oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceError
from .hilbert import HermitianOperator
from .spectra import Spectrum
from .states import BranchPair
from .trajectory import QuenchTrajectory


@dataclass(frozen=True)
class PropagatorConfig:
    """Krylov settings.

    ``tol`` bounds the estimated error of every substep per unit norm;
    ``max_halvings`` caps how often one substep may be halved before giving up.
    """

    krylov_dim: int = 30
    tol: float = 1e-10
    max_halvings: int = 40
    max_substeps: int = 10_000_000

    def __post_init__(self):
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be >= 2")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


class KrylovPropagator:
    """Applies ``exp(-i H t)`` to vectors.

    One Lanczos basis is reused for every requested time it can reach within
    tolerance; when even the nearest time is out of reach, the substep is
    halved until the error estimate ``beta_m |[exp(-i tau T) e_1]_m|``
    drops below ``cfg.tol``.
    """

    def __init__(self, H: HermitianOperator, cfg: PropagatorConfig | None = None):
        self.H = H
        self.cfg = cfg or PropagatorConfig()
        self.n_builds = 0

    @staticmethod
    def _projection(rows: np.ndarray, w: np.ndarray) -> np.ndarray:
        # conjugating w instead of the basis avoids copying the basis
        return (rows @ w.conj()).conj() @ rows

    def _lanczos(self, v: np.ndarray):
        """Orthonormal Krylov basis (rows) and tridiagonal coefficients for unit ``v``."""
        m = min(self.cfg.krylov_dim, v.size)
        basis = np.empty((m + 1, v.size), dtype=np.complex128)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        basis[0] = v
        size = m
        for j in range(m):
            w = self.H.matrix @ basis[j]
            alpha[j] = np.vdot(basis[j], w).real
            # full re-orthogonalization; second pass only on heavy cancellation
            before = np.linalg.norm(w)
            w -= self._projection(basis[: j + 1], w)
            b = np.linalg.norm(w)
            if b < 0.7 * before:
                w -= self._projection(basis[: j + 1], w)
                b = np.linalg.norm(w)
            beta[j] = b
            if b <= 1e-13 * max(1.0, abs(alpha[j])):
                # invariant subspace: the projection is exact
                size = j + 1
                beta[j] = 0.0
                break
            basis[j + 1] = w / b
        self.n_builds += 1
        evals, evecs = (alpha[:1].copy(), np.ones((1, 1))) if size == 1 else eigh_tridiagonal(alpha[:size], beta[: size - 1])
        return basis[:size], evals, evecs, beta[size - 1]

    def evolve_grid(self, psi: np.ndarray, times, t0: float = 0.0) -> Iterator[np.ndarray]:
        """Yield ``exp(-i H (t - t0)) psi`` for each ``t`` in the increasing sequence ``times``."""
        v = np.asarray(psi, dtype=np.complex128)
        if v.shape != (self.H.dim,):
            raise ValueError(f"state has shape {v.shape}, operator dimension is {self.H.dim}")
        times = [float(t) for t in times]
        if any(not math.isfinite(t) for t in times):
            raise ValueError("times must be finite")
        if any(b <= a for a, b in zip(times, times[1:])) or (times and times[0] < t0):
            raise ValueError("times must be increasing and not before t0")
        nrm = np.linalg.norm(v)
        t_cur = t0
        k = 0
        substeps = 0
        while k < len(times):
            if times[k] == t_cur or nrm == 0:
                yield v.copy()
                k += 1
                continue
            basis, evals, evecs, tail = self._lanczos(v / nrm)

            def coefficients(tau):
                c = evecs @ (np.exp(-1j * tau * evals) * evecs[0].conj())
                return c, tail * abs(c[-1])

            advanced = False
            while k < len(times):
                c, err = coefficients(times[k] - t_cur)
                if err > self.cfg.tol:
                    break
                out = nrm * (basis.T @ c)
                yield out
                last, advanced = (times[k], out), True
                k += 1
            if advanced:
                t_cur, v = last
                continue
            # nearest target out of reach: halve towards it
            tau = times[k] - t_cur
            for _ in range(self.cfg.max_halvings):
                tau *= 0.5
                c, err = coefficients(tau)
                if err <= self.cfg.tol:
                    break
            else:
                raise ConvergenceError(
                    f"Krylov substep did not converge (residual {err:.3e} at tau={tau:.3e})", err
                )
            v = nrm * (basis.T @ c)
            t_cur += tau
            substeps += 1
            if substeps > self.cfg.max_substeps:
                raise ConvergenceError("substep budget exhausted", err)

    def step(self, psi: np.ndarray, t: float) -> np.ndarray:
        """Return ``exp(-i H t) psi``; negative ``t`` evolves backwards."""
        if not math.isfinite(t):
            raise ValueError(f"t must be finite, got {t}")
        if t >= 0:
            return next(self.evolve_grid(psi, [t]))
        # exp(-i H t) = exp(-i (-H) |t|)
        backward = KrylovPropagator(_Negated(self.H), self.cfg)
        return next(backward.evolve_grid(psi, [-t]))


class _Negated:
    def __init__(self, H):
        self.matrix = -H.matrix
        self.dim = H.dim


def krylov_evolve(
    H: HermitianOperator, psi: np.ndarray, t: float, cfg: PropagatorConfig | None = None
) -> np.ndarray:
    """Approximate ``exp(-i H t) psi`` with a restarted Lanczos-Krylov scheme."""
    return KrylovPropagator(H, cfg).step(psi, t)


def spectral_evolve(s: Spectrum, psi: np.ndarray, t: float) -> np.ndarray:
    """Exact ``exp(-i H t) psi`` in the eigenbasis."""
    v = s.require_vectors()
    coeffs = v.conj().T @ psi
    return v @ (np.exp(-1j * s.eigenvalues * t) * coeffs)


Observer = Callable[[object, float], float]


def evolve_trajectory(
    H: HermitianOperator,
    initial,
    times,
    observers: Mapping[str, Observer],
    cfg: PropagatorConfig | None = None,
    metadata: dict | None = None,
    propagate: Callable | None = None,
) -> QuenchTrajectory:
    """Evolve a state over a time grid and record every observer at every point.

    ``initial`` is an amplitude vector or a :class:`BranchPair`; observers are
    called as ``observer(state, t)`` with the same type. ``propagate``
    replaces the Krylov step, ``propagate(psi, t0, t1) -> psi``, e.g. with
    :func:`spectral_evolve` for validation.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and be strictly increasing")
    is_pair = isinstance(initial, BranchPair)
    branches = [initial.plus, initial.minus] if is_pair else [np.asarray(initial, dtype=np.complex128)]
    if propagate is None:
        streams = [KrylovPropagator(H, cfg).evolve_grid(b, times) for b in branches]
    else:
        streams = [_stepped(propagate, b, times) for b in branches]

    series = {name: np.empty(times.size) for name in observers}
    for k, t in enumerate(times):
        current = [next(st) for st in streams]
        state = initial.with_branches(*current) if is_pair else current[0]
        for name, obs in observers.items():
            series[name][k] = obs(state, t)
    return QuenchTrajectory(times, series, dict(metadata or {}))


def _stepped(propagate, psi, times):
    t_prev = 0.0
    for t in times:
        if t != t_prev:
            psi = propagate(psi, t_prev, t)
            t_prev = t
        yield psi


def time_grid(t_end: float, dt: float = 0.1, t_switch: float | None = None, dt_coarse: float | None = None) -> np.ndarray:
    """Uniform grid ``0, dt, ...`` up to ``t_end``; coarser spacing after ``t_switch`` if given."""

    def uniform(a, b, h):
        steps = int(round((b - a) / h))
        return a + h * np.arange(steps + 1)

    if t_switch is None or dt_coarse is None or t_switch >= t_end:
        return uniform(0.0, t_end, dt)
    fine = uniform(0.0, t_switch, dt)
    coarse = uniform(t_switch, t_end, dt_coarse)
    return np.concatenate([fine, coarse[1:]])
