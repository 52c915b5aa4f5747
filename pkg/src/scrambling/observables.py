"""Reduced density matrices, entropies, tripartite mutual information and
thermalization diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .hilbert import ANCILLA, HermitianOperator, RegisterLayout
from .states import SIGMA, BranchPair
from .trajectory import QuenchTrajectory

EIGENVALUE_FLOOR = 1e-12
TRACE_TOL = 1e-6


def _layout_for(state: np.ndarray, layout: RegisterLayout | None) -> RegisterLayout:
    dim = state.shape[0]
    if layout is None:
        return RegisterLayout.for_dimension(dim)
    if layout.dim != dim:
        raise ValueError(f"state dimension {dim} does not match layout dimension {layout.dim}")
    return layout


def _split_axes(layout: RegisterLayout, keep: Iterable[int]) -> tuple[list[int], list[int]]:
    """Tensor axes (most significant bit first) to keep and to trace out."""
    keep = list(keep)
    if not keep:
        raise ValueError("keep must name at least one qubit")
    if len(set(keep)) != len(keep):
        raise ValueError(f"duplicate qubit labels in {keep}")
    n = layout.n_total
    keep_axes = sorted(n - 1 - layout.bit(q) for q in keep)
    rest_axes = [a for a in range(n) if a not in keep_axes]
    return keep_axes, rest_axes


def reduce_columns(columns: np.ndarray, keep: Sequence[int], layout: RegisterLayout) -> np.ndarray:
    """``sum_k Tr_rest |x_k><x_k|`` over the columns ``x_k`` of a (dim, K) block.

    Kept qubits are ordered by ascending bit position (lowest bit least
    significant), so for system qubits the order is ascending label.
    """
    keep_axes, rest_axes = _split_axes(layout, keep)
    n = layout.n_total
    x = np.asarray(columns)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[1]
    t = x.reshape((2,) * n + (k,))
    m = np.transpose(t, keep_axes + rest_axes + [n]).reshape(1 << len(keep_axes), -1)
    return m @ m.conj().T


def partial_trace(state: np.ndarray, keep: Sequence[int], layout: RegisterLayout | None = None) -> np.ndarray:
    """Reduced density matrix of the qubits in ``keep``.

    ``state`` is either an amplitude vector (the global density matrix is
    never formed) or a density matrix.
    """
    state = np.asarray(state)
    layout = _layout_for(state, layout)
    if state.ndim == 1:
        return reduce_columns(state, keep, layout)
    keep_axes, rest_axes = _split_axes(layout, keep)
    n = layout.n_total
    dk, dr = 1 << len(keep_axes), 1 << len(rest_axes)
    t = state.reshape((2,) * (2 * n))
    order = keep_axes + rest_axes
    t = np.transpose(t, order + [n + a for a in order]).reshape(dk, dr, dk, dr)
    return np.einsum("iaja->ij", t)


def von_neumann_entropy(rho: np.ndarray, base: float = 2.0) -> float:
    """``-Tr rho log rho`` in units set by ``base`` (2 gives bits)."""
    rho = np.asarray(rho)
    tr = np.trace(rho).real
    if abs(tr - 1) > TRACE_TOL:
        raise ValueError(f"density matrix has trace {tr}, expected 1")
    p = np.linalg.eigvalsh(rho)
    p = p[p > EIGENVALUE_FLOOR]
    return float(-np.sum(p * np.log(p)) / math.log(base))


def entropy_of(
    state: np.ndarray, block: Iterable[int], layout: RegisterLayout | None = None, base: float = 2.0
) -> float:
    """Entanglement entropy of ``block`` for a pure state, via the smaller side of the cut."""
    state = np.asarray(state)
    layout = _layout_for(state, layout)
    block = set(block)
    complement = set(layout.labels) - block
    if not complement:
        return 0.0
    side = block if len(block) <= len(complement) else complement
    return von_neumann_entropy(reduce_columns(state, sorted(side), layout), base)


@dataclass(frozen=True)
class SubsystemPartition:
    """Four disjoint, non-empty blocks covering the register."""

    A: frozenset
    B: frozenset
    C: frozenset
    D: frozenset

    def __post_init__(self):
        blocks = [frozenset(b) for b in (self.A, self.B, self.C, self.D)]
        for name, b in zip("ABCD", blocks):
            if not b:
                raise ValueError(f"block {name} is empty")
            object.__setattr__(self, name, b)
        union = set().union(*blocks)
        if sum(len(b) for b in blocks) != len(union):
            raise ValueError("blocks overlap")

    @classmethod
    def protocol(cls, n_system: int) -> "SubsystemPartition":
        """A = ancilla, B = Q_1, C = Q_2..Q_{N/2}, D = the rest."""
        if n_system % 2 or n_system < 4:
            raise ValueError(f"the protocol partition needs an even N >= 4, got {n_system}")
        half = n_system // 2
        return cls(
            frozenset({ANCILLA}),
            frozenset({1}),
            frozenset(range(2, half + 1)),
            frozenset(range(half + 1, n_system + 1)),
        )

    def check_covers(self, layout: RegisterLayout) -> None:
        union = self.A | self.B | self.C | self.D
        if union != set(layout.labels):
            raise ValueError(f"partition covers {sorted(union)}, register has {sorted(layout.labels)}")


def tripartite_mutual_information(
    state, part: SubsystemPartition, layout: RegisterLayout | None = None, base: float = 2.0
) -> float:
    """``S(A)+S(B)+S(C)+S(D) - S(AB) - S(AC) - S(BC)`` for a pure state.

    ``state`` may be an amplitude vector or a :class:`BranchPair`; the
    latter is expanded to the register with ancilla.
    """
    if isinstance(state, BranchPair):
        layout = RegisterLayout(state.n_system, True)
        state = state.full_state()
    state = np.asarray(state)
    layout = _layout_for(state, layout)
    part.check_covers(layout)
    A, B, C, D = part.A, part.B, part.C, part.D

    def S(block):
        return entropy_of(state, block, layout, base)

    return S(A) + S(B) + S(C) + S(D) - S(A | B) - S(A | C) - S(B | C)


@dataclass(frozen=True)
class TimeAverageWindow:
    t_i: float = 100.0
    t_f: float = 1000.0
    spacing: float = 0.5

    def __post_init__(self):
        if not 0 <= self.t_i < self.t_f:
            raise ValueError(f"need 0 <= t_i < t_f, got ({self.t_i}, {self.t_f})")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    def grid(self) -> np.ndarray:
        steps = int(round((self.t_f - self.t_i) / self.spacing))
        return self.t_i + self.spacing * np.arange(steps + 1)


def time_average(times: np.ndarray, values: np.ndarray, w: TimeAverageWindow) -> float:
    """Trapezoidal mean of a sampled series over ``[t_i, t_f]``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    eps = 1e-9 * max(1.0, abs(w.t_f))
    if times.size < 2 or w.t_i < times[0] - eps or w.t_f > times[-1] + eps:
        raise ValueError(f"window [{w.t_i}, {w.t_f}] is not covered by the grid")
    inside = (times > w.t_i + eps) & (times < w.t_f - eps)
    t = np.concatenate([[w.t_i], times[inside], [w.t_f]])
    y = np.concatenate(
        [[np.interp(w.t_i, times, values)], values[inside], [np.interp(w.t_f, times, values)]]
    )
    return float(trapezoid(y, t) / (w.t_f - w.t_i))


def time_averaged_tmi(traj: QuenchTrajectory, w: TimeAverageWindow, series: str = "I3") -> float:
    return time_average(traj.times, traj.series[series], w)


def subset_average_operator(k: int, axis: str) -> np.ndarray:
    """Dense ``(1/k) sum_j sigma^axis_j`` on a k-qubit register."""
    dim = 1 << k
    op = np.zeros((dim, dim), dtype=np.complex128)
    for j in range(k):
        # qubit j on bit j: kron(I_{2^(k-1-j)}, sigma, I_{2^j})
        op += np.kron(np.kron(np.eye(1 << (k - 1 - j)), SIGMA[axis]), np.eye(1 << j))
    return op / k


def local_observable_deviation(rho_sub: np.ndarray, rho_th_sub: np.ndarray, axis: str) -> float:
    """``Tr[O (rho_sub - rho_th_sub)]`` with O the sigma^axis average over the subset qubits."""
    rho_sub = np.asarray(rho_sub)
    rho_th_sub = np.asarray(rho_th_sub)
    if rho_sub.shape != rho_th_sub.shape:
        raise ValueError(f"subset mismatch: {rho_sub.shape} vs {rho_th_sub.shape}")
    k = rho_sub.shape[0].bit_length() - 1
    op = subset_average_operator(k, axis)
    return float(np.trace(op @ (rho_sub - rho_th_sub)).real)


def register_average(state: np.ndarray, axis: str, layout: RegisterLayout | None = None) -> float:
    """``<(1/N) sum_i sigma^axis_i>`` over the system qubits of a pure state."""
    state = np.asarray(state)
    layout = _layout_for(state, layout)
    n = layout.n_system
    total = 0.0
    for q in range(1, n + 1):
        rho = reduce_columns(state, [q], layout)
        total += np.trace(SIGMA[axis] @ rho).real
    return float(total / n)


def register_average_deviation(
    state: np.ndarray, thermal_value: float, axis: str, layout: RegisterLayout | None = None
) -> float:
    """Full-register variant of the deviation: ``<O(t)> - <O>_th`` with O averaged over all N qubits."""
    return register_average(state, axis, layout) - thermal_value


def rdm_distance(rho1: np.ndarray, rho2: np.ndarray, absolute: bool = False) -> float:
    """Largest eigenvalue of ``rho1 - rho2`` (largest modulus if ``absolute``)."""
    rho1 = np.asarray(rho1)
    rho2 = np.asarray(rho2)
    if rho1.shape != rho2.shape:
        raise ValueError(f"dimension mismatch: {rho1.shape} vs {rho2.shape}")
    ev = np.linalg.eigvalsh(rho1 - rho2)
    return float(np.abs(ev).max() if absolute else ev.max())


def moving_average(values: np.ndarray, width: int = 5) -> np.ndarray:
    """Centered moving average; the edges use the available samples only."""
    values = np.asarray(values, dtype=float)
    kernel = np.ones(width)
    num = np.convolve(values, kernel, mode="same")
    den = np.convolve(np.ones_like(values), kernel, mode="same")
    return num / den


def detect_first_cusp(
    times: np.ndarray,
    values: np.ndarray,
    t_relax: float = 2.0,
    smooth: int = 5,
    prominence: float = 10.0,
    noise_window: int | None = None,
) -> float | None:
    """Time of the first sharp extremum after ``t_relax``, or None.

    The series is smoothed with a ``smooth``-point moving average. A
    candidate is a sign change of the smoothed first difference; it is
    accepted when the absolute second difference there is at least
    ``prominence`` times the noise floor, the median absolute second
    difference over the preceding samples after ``t_relax`` (only the last
    ``noise_window`` of them if given).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise ValueError("times and values must have the same shape")
    y = moving_average(values, smooth)
    if y.size < 3:
        return None
    slope = np.diff(y)
    # curvature[i - 1] is the second difference centred on sample i
    curvature = np.abs(y[2:] - 2 * y[1:-1] + y[:-2])
    first = max(int(np.searchsorted(times, t_relax, side="right")), 1)
    tiny = np.finfo(float).tiny
    for i in range(first + 1, y.size - 1):
        if slope[i - 1] * slope[i] > 0 or slope[i - 1] == slope[i] == 0:
            continue
        lo = first if noise_window is None else max(first, i - noise_window)
        floor = np.median(curvature[lo - 1 : i - 1])
        if curvature[i - 1] >= prominence * max(floor, tiny):
            return float(times[i])
    return None
