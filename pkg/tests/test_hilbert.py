import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from scrambling.errors import ResourceError
from scrambling.hilbert import (
    ANCILLA,
    HermitianOperator,
    IsingParams,
    RegisterLayout,
    SqaParams,
    apply,
    build_ising,
    build_sqa,
    build_xy,
    hermiticity_error,
    pauli_term,
    sigma_x_rewrite,
    spectral_mismatch,
    total_magnetization,
)

from oracles import dense_ising, dense_pauli, dense_sqa, random_hermitian, random_state


class TestLayout:
    def test_sizes(self):
        lay = RegisterLayout(4, True)
        assert lay.n_total == 5
        assert lay.dim == 32
        assert lay.labels == (1, 2, 3, 4, ANCILLA)

    @pytest.mark.parametrize("n,anc", [(1, False), (3, True), (6, False), (6, True)])
    def test_bit_maps_round_trip(self, n, anc):
        lay = RegisterLayout(n, anc)
        bits = [lay.bit(q) for q in lay.labels]
        assert sorted(bits) == list(range(lay.n_total))
        assert all(lay.label(lay.bit(q)) == q for q in lay.labels)

    def test_ancilla_on_highest_bit(self):
        assert RegisterLayout(5, True).bit(ANCILLA) == 5

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            RegisterLayout(3).bit(4)
        with pytest.raises(ValueError):
            RegisterLayout(3).bit(ANCILLA)


class TestPauliTerm:
    def test_single_z(self):
        m = pauli_term(RegisterLayout(1), [(1, "z")]).toarray()
        np.testing.assert_array_equal(m, np.diag([1, -1]))

    def test_xx_is_antidiagonal(self):
        m = pauli_term(RegisterLayout(2), [(1, "x"), (2, "x")]).toarray()
        np.testing.assert_array_equal(m, np.fliplr(np.eye(4)))

    def test_middle_y_matches_kron(self):
        m = pauli_term(RegisterLayout(3), [(2, "y")]).toarray()
        expected = np.kron(np.kron(np.eye(2), np.array([[0, -1j], [1j, 0]])), np.eye(2))
        np.testing.assert_array_equal(m, expected)

    @given(
        st.integers(1, 5).flatmap(
            lambda n: st.tuples(
                st.just(n),
                st.lists(st.tuples(st.integers(1, n), st.sampled_from("xyz")), min_size=1, max_size=n, unique_by=lambda a: a[0]),
            )
        )
    )
    def test_matches_kron_oracle(self, case):
        n, assignments = case
        op = pauli_term(RegisterLayout(n), assignments)
        np.testing.assert_array_equal(op.toarray(), dense_pauli(n, assignments))
        # one unit-modulus entry per row
        m = op.matrix
        assert np.all(np.diff(m.indptr) == 1)
        np.testing.assert_allclose(np.abs(m.data), 1.0)

    def test_duplicate_or_out_of_range(self):
        with pytest.raises(ValueError):
            pauli_term(RegisterLayout(3), [(1, "x"), (1, "z")])
        with pytest.raises(ValueError):
            pauli_term(RegisterLayout(3), [(4, "x")])
        with pytest.raises(ValueError):
            pauli_term(RegisterLayout(3), [])

    def test_ancilla_factor(self):
        op = pauli_term(RegisterLayout(2, True), [(ANCILLA, "x")]).toarray()
        np.testing.assert_array_equal(op, np.kron(dense_pauli(1, [(1, "x")]), np.eye(4)))


class TestIsing:
    def test_single_spin(self):
        H = build_ising(IsingParams(1, J=0.7, g=0.3, h=-0.4))
        np.testing.assert_allclose(np.linalg.eigvalsh(H.toarray()), [-0.5, 0.5], atol=1e-14)

    def test_classical_pair(self):
        H = build_ising(IsingParams(2, J=1, g=0, h=0))
        np.testing.assert_allclose(np.linalg.eigvalsh(H.toarray()), [-1, -1, 1, 1])

    @pytest.mark.parametrize("n", range(1, 7))
    def test_matches_dense_oracle(self, n):
        p = IsingParams(n, J=1.0, g=1.05, h=-0.5)
        H = build_ising(p)
        np.testing.assert_allclose(H.toarray(), dense_ising(n, p.J, p.g, p.h), atol=1e-15)
        assert H.is_real
        assert hermiticity_error(H.matrix) <= 1e-12
        assert p.non_integrable

    @pytest.mark.parametrize("n", range(1, 7))
    def test_classical_spectrum_integer(self, n):
        H = build_ising(IsingParams(n, J=1.3, g=0, h=0))
        ev = np.linalg.eigvalsh(H.toarray()) / 1.3
        np.testing.assert_allclose(ev, np.round(ev), atol=1e-12)

    def test_memory_budget(self):
        with pytest.raises(ResourceError) as info:
            build_ising(IsingParams(12), memory_budget=1000)
        assert info.value.required_bytes > 1000
        assert "MiB" in str(info.value)


class TestXY:
    def test_two_sites(self):
        ev = np.linalg.eigvalsh(build_xy(1.0, 2).toarray())
        np.testing.assert_allclose(ev, [-2, 0, 0, 2], atol=1e-14)

    def test_three_sites_symmetric(self):
        ev = np.linalg.eigvalsh(build_xy(1.0, 3).toarray())
        np.testing.assert_allclose(ev, -ev[::-1], atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5, 6])
    def test_conserves_magnetization(self, n):
        H = build_xy(0.8, n).matrix
        M = total_magnetization(RegisterLayout(n)).matrix
        comm = (H @ M - M @ H).tocsr()
        assert comm.nnz == 0 or np.abs(comm.data).max() == 0

    def test_needs_two_sites(self):
        with pytest.raises(ValueError):
            build_xy(1.0, 1)


class TestSqa:
    @pytest.mark.parametrize("n", range(2, 7))
    def test_matches_dense_oracle(self, n):
        H = build_sqa(SqaParams(n, lam=0.9, omega=1.2))
        np.testing.assert_allclose(H.toarray(), dense_sqa(n, 0.9, 1.2), atol=1e-15)

    @pytest.mark.parametrize("n", range(2, 8))
    def test_zero_drive_is_xy(self, n):
        a = build_sqa(SqaParams(n, lam=1.0, omega=0.0)).matrix
        b = build_xy(1.0, n).matrix
        assert (a != b).nnz == 0

    @pytest.mark.parametrize("n", range(2, 11))
    def test_z_plus_energy_vanishes(self, n):
        H = build_sqa(SqaParams(n))
        psi = np.zeros(H.dim, dtype=complex)
        psi[0] = 1.0
        assert abs(H.expectation(psi)) <= 1e-12

    def test_sigma_x_rewrite_is_only_reported(self):
        p = SqaParams(4)
        mismatch = spectral_mismatch(build_sqa(p), sigma_x_rewrite(p))
        assert np.isfinite(mismatch) and mismatch >= 0


class TestApply:
    def test_eigenvector(self):
        H = pauli_term(RegisterLayout(1), [(1, "z")])
        np.testing.assert_array_equal(apply(H, np.array([1, 0], dtype=complex)), [1, 0])

    def test_bit_flip(self):
        H = pauli_term(RegisterLayout(1), [(1, "x")])
        np.testing.assert_array_equal(apply(H, np.array([1, 0], dtype=complex)), [0, 1])

    def test_random_against_dense(self, rng):
        dense = random_hermitian(rng, 64)
        H = HermitianOperator(sp.csr_matrix(dense), RegisterLayout(6))
        v = random_state(rng, 64)
        np.testing.assert_allclose(apply(H, v), dense @ v, atol=1e-12)
        assert abs(np.vdot(v, apply(H, v)).imag) <= 1e-12

    def test_linearity(self, rng):
        H = build_sqa(SqaParams(6))
        u, v = random_state(rng, 64), random_state(rng, 64)
        a, b = 0.3 - 1.1j, 2.0 + 0.5j
        np.testing.assert_allclose(apply(H, a * u + b * v), a * apply(H, u) + b * apply(H, v), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply(build_ising(IsingParams(3)), np.ones(4))

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError):
            HermitianOperator(sp.csr_matrix(np.array([[0, 1], [0, 0]])), RegisterLayout(1))


def test_fingerprint_stable_and_discriminating():
    a = build_ising(IsingParams(5))
    b = build_ising(IsingParams(5))
    c = build_ising(IsingParams(5, h=-0.49))
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != c.fingerprint


def test_extend_with_ancilla_is_identity_on_ancilla():
    H = build_ising(IsingParams(3))
    ext = H.extend_with_ancilla()
    np.testing.assert_array_equal(ext.toarray(), np.kron(np.eye(2), H.toarray()))
    assert ext.layout.has_ancilla
