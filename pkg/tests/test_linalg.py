from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from nhpost.errors import DimensionError, NotDiagonalizableError, NumericalError, PreconditionError
from nhpost.experiments import brute_force_distance
from nhpost.hamiltonian import pt_hamiltonian
from nhpost.linalg import (
    biorthogonal_spectrum,
    decode_matrix,
    decode_vector,
    distance_to_unitary,
    embed,
    encode_matrix,
    encode_vector,
    haar_unitary,
    matrix_exp,
    normalized_singular_radius,
    polar_decompose,
    svd,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.sampled_from([1, 2, 3, 4, 8])


def ginibre(d, rng):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


class TestSVD:
    def test_diagonal(self):
        dec = svd(np.diag([2.0, 1.0]))
        np.testing.assert_allclose(dec.singulars, [2, 1])
        np.testing.assert_allclose(dec.V, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(dec.W, np.eye(2), atol=1e-14)

    def test_unitary_has_unit_singulars(self, rng):
        dec = svd(haar_unitary(4, rng))
        np.testing.assert_allclose(dec.singulars, np.ones(4), atol=1e-12)

    def test_antidiagonal_pt_matrix(self):
        # singular values of an antidiagonal matrix are the moduli of its entries
        dec = svd(pt_hamiltonian(5, 3))
        np.testing.assert_allclose(dec.singulars, [8, 2], atol=1e-12)

    def test_rejects_non_square(self):
        with pytest.raises(DimensionError):
            svd(np.ones((2, 3)))

    def test_rejects_nonfinite(self):
        with pytest.raises(PreconditionError):
            svd(np.array([[np.nan, 0], [0, 1]]))

    def test_degenerate_ordering_is_deterministic(self):
        dec1 = svd(np.eye(3))
        dec2 = svd(np.eye(3))
        np.testing.assert_array_equal(dec1.V, dec2.V)
        np.testing.assert_allclose(dec1.V, np.eye(3))

    @given(seed=seeds, d=dims)
    @settings(max_examples=60, deadline=None)
    def test_invariants(self, seed, d):
        u = ginibre(d, np.random.default_rng(seed))
        dec = svd(u)
        assert np.all(np.diff(dec.singulars) <= 0)
        assert np.all(dec.singulars >= 0)
        for m in (dec.V, dec.W):
            assert np.linalg.norm(m @ m.conj().T - np.eye(d)) <= 1e-10
        assert np.linalg.norm(dec.reconstruct() - u) <= 1e-10 * np.linalg.norm(u, 2)


class TestPolar:
    def test_positive_input(self, rng):
        a = ginibre(3, rng)
        k = a @ a.conj().T + np.eye(3)
        pf = polar_decompose(k)
        np.testing.assert_allclose(pf.Q, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(pf.R, k, atol=1e-10)

    def test_unitary_input(self, rng):
        u = haar_unitary(4, rng)
        pf = polar_decompose(u)
        np.testing.assert_allclose(pf.R, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(pf.Q, u, atol=1e-10)

    def test_half_diag(self):
        pf = polar_decompose(np.diag([2.0, 1.0]) / 2)
        np.testing.assert_allclose(pf.Q, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(pf.R, np.diag([1.0, 0.5]), atol=1e-14)

    def test_singular_input_completes_q(self, rng):
        k = ginibre(4, rng)
        k[:, 0] = 0
        pf = polar_decompose(k)
        np.testing.assert_allclose(pf.Q @ pf.Q.conj().T, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(pf.Q @ pf.R, k, atol=1e-10)

    @given(seed=seeds, d=dims)
    @settings(max_examples=60, deadline=None)
    def test_matches_scipy(self, seed, d):
        k = ginibre(d, np.random.default_rng(seed))
        pf = polar_decompose(k)
        q_ref, r_ref = scipy.linalg.polar(k, side="right")
        assert np.linalg.norm(pf.Q @ pf.R - k) <= 1e-10 * np.linalg.norm(k, 2)
        assert np.linalg.eigvalsh(pf.R)[0] >= -1e-12
        np.testing.assert_allclose(pf.R, r_ref, atol=1e-9)
        np.testing.assert_allclose(pf.Q, q_ref, atol=1e-8)


class TestMatrixExp:
    def test_zero(self):
        np.testing.assert_array_equal(matrix_exp(np.zeros((4, 4))), np.eye(4))

    def test_diagonal_generator(self):
        t = 0.7
        np.testing.assert_allclose(matrix_exp(np.diag([t, -t])), np.diag([math.exp(t), math.exp(-t)]))

    def test_pt_quarter_period(self):
        g, gamma = 5.0, 3.0
        h = pt_hamiltonian(g, gamma)
        omega = math.sqrt(g * g - gamma * gamma)
        u = matrix_exp(-1j * h * math.pi / (2 * omega))
        np.testing.assert_allclose(u, -1j * h / omega, atol=1e-10)

    @given(seed=seeds, d=st.sampled_from([2, 3, 4, 8]))
    @settings(max_examples=60, deadline=None)
    def test_spectral_matches_pade(self, seed, d):
        a = ginibre(d, np.random.default_rng(seed)) * 0.5
        ref = scipy.linalg.expm(a)
        spec = matrix_exp(a, method="spectral")
        assert np.linalg.norm(spec - ref) <= 1e-9 * max(1.0, np.linalg.norm(ref))
        assert np.linalg.norm(matrix_exp(a) - ref) <= 1e-9 * max(1.0, np.linalg.norm(ref))

    @given(seed=seeds, t=st.floats(min_value=0.0, max_value=50.0))
    @settings(max_examples=40, deadline=None)
    def test_hermitian_generator_gives_unitary(self, seed, t):
        rng = np.random.default_rng(seed)
        a = ginibre(4, rng)
        h = (a + a.conj().T) / 2
        h = h / np.linalg.norm(h, 2)
        u = matrix_exp(-1j * h * t)
        assert np.linalg.norm(u @ u.conj().T - np.eye(4)) <= 1e-10

    def test_defective_input_uses_pade(self):
        a = np.array([[1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(matrix_exp(a), math.e * np.array([[1, 1], [0, 1]]), rtol=1e-12)

    def test_overflow(self):
        with pytest.raises(NumericalError):
            matrix_exp(np.array([[800.0, 1.0], [0.0, 900.0]]))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            matrix_exp(np.eye(2), method="taylor")


class TestBiorthogonalSpectrum:
    def test_hermitian(self, rng):
        a = ginibre(4, rng)
        h = a + a.conj().T
        spec = biorthogonal_spectrum(h)
        np.testing.assert_allclose(spec.lefts, spec.rights.conj().T, atol=1e-12)
        assert np.all(spec.eigenvalues.imag == 0)

    def test_i_sigma_z(self):
        spec = biorthogonal_spectrum(1j * np.diag([1.0, -1.0]))
        np.testing.assert_allclose(spec.eigenvalues, [1j, -1j])
        np.testing.assert_allclose(spec.rights, np.eye(2), atol=1e-14)

    def test_broken_phase_example(self):
        h = np.array([[0, -1], [3, 0]], dtype=complex)
        spec = biorthogonal_spectrum(h)
        s3 = math.sqrt(3)
        np.testing.assert_allclose(spec.eigenvalues, [1j * s3, -1j * s3], atol=1e-12)
        # hand-solved: (x, y) with -y = nu x, so r = (1, -nu) / 2
        r1 = np.array([1, -1j * s3]) / 2
        r2 = np.array([1, 1j * s3]) / 2
        assert abs(abs(np.vdot(r1, spec.rights[:, 0])) - 1) < 1e-12
        assert abs(abs(np.vdot(r2, spec.rights[:, 1])) - 1) < 1e-12
        assert abs(abs(np.vdot(spec.rights[:, 1], spec.rights[:, 0])) - 0.5) < 1e-12

    def test_defective_raises_with_cluster(self):
        with pytest.raises(NotDiagonalizableError, match="eigenvalues"):
            biorthogonal_spectrum(np.array([[0.0, 1.0], [0.0, 0.0]]))

    @given(seed=seeds, d=st.sampled_from([2, 3, 4, 8]))
    @settings(max_examples=60, deadline=None)
    def test_invariants(self, seed, d):
        h = ginibre(d, np.random.default_rng(seed))
        spec = biorthogonal_spectrum(h)
        np.testing.assert_allclose(spec.lefts @ spec.rights, np.eye(d), atol=1e-8)
        assert np.linalg.norm(spec.reconstruct() - h) <= 1e-8 * np.linalg.norm(h, 2)
        np.testing.assert_allclose(np.linalg.norm(spec.rights, axis=0), 1.0)
        assert np.all(np.diff(spec.eigenvalues.imag) <= 1e-12)


class TestSingularRadius:
    @pytest.mark.parametrize(
        "u, expected",
        [(np.diag([2.0, 1.0]), 0.5), (np.diag([2.0, 1.0, 0.0]), 1.0), (np.eye(2), 0.0)],
    )
    def test_examples(self, u, expected):
        assert normalized_singular_radius(u) == pytest.approx(expected, abs=1e-15)

    def test_unitary(self, rng):
        assert normalized_singular_radius(haar_unitary(8, rng)) < 1e-12

    def test_zero_matrix(self):
        with pytest.raises(PreconditionError):
            normalized_singular_radius(np.zeros((2, 2)))


class TestDistanceToUnitary:
    @pytest.mark.parametrize("diag, dist, alpha", [((2, 1), 1 / 3, 2 / 3), ((3, 1), 1 / 2, 1 / 2)])
    def test_examples(self, diag, dist, alpha):
        u = np.diag(np.array(diag, dtype=float))
        res = distance_to_unitary(u)
        assert res.distance == pytest.approx(dist, abs=1e-14)
        assert res.alpha_star == pytest.approx(alpha, abs=1e-14)
        assert brute_force_distance(u) == pytest.approx(dist, abs=1e-6)

    def test_unitary(self, rng):
        res = distance_to_unitary(haar_unitary(4, rng))
        assert res.distance == pytest.approx(0.0, abs=1e-12)
        assert res.alpha_star == pytest.approx(1.0, abs=1e-12)

    def test_zero_matrix(self):
        with pytest.raises(PreconditionError):
            distance_to_unitary(np.zeros((2, 2)))

    @given(seed=seeds, d=st.sampled_from([2, 4, 8]))
    @settings(max_examples=40, deadline=None)
    def test_proportional_to_singular_radius(self, seed, d):
        u = ginibre(d, np.random.default_rng(seed))
        s = np.linalg.svd(u, compute_uv=False)
        res = distance_to_unitary(u)
        c = s[0] / (s[0] + s[-1])
        assert 0.5 < c <= 1
        assert res.distance == pytest.approx(c * normalized_singular_radius(u), rel=1e-12)
        # the returned unitary attains the minimum at alpha_star
        gap = np.linalg.norm(res.alpha_star * u - res.unitary, 2)
        assert gap == pytest.approx(res.distance, abs=1e-10)


class TestEncoding:
    @given(
        st.lists(
            st.tuples(st.floats(allow_nan=False, allow_infinity=False), st.floats(allow_nan=False, allow_infinity=False)),
            min_size=4,
            max_size=4,
        )
    )
    def test_matrix_round_trip_bit_exact(self, pairs):
        m = np.array([complex(a, b) for a, b in pairs]).reshape(2, 2)
        back = decode_matrix(encode_matrix(m))
        np.testing.assert_array_equal(back.view(np.float64), m.view(np.float64))

    def test_vector_round_trip(self, rng):
        v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        np.testing.assert_array_equal(decode_vector(encode_vector(v)), v)

    def test_malformed(self):
        with pytest.raises(DimensionError):
            decode_matrix([[1, 2], [3, 4]])


class TestEmbed:
    def test_msb_convention(self):
        x = np.array([[0, 1], [1, 0]])
        np.testing.assert_array_equal(embed(x, [0], 2), np.kron(x, np.eye(2)))
        np.testing.assert_array_equal(embed(x, [1], 2), np.kron(np.eye(2), x))

    def test_reversed_cnot(self):
        cx = np.eye(4)[[0, 1, 3, 2]]
        rev = embed(cx, [1, 0], 2)
        # control on qubit 1 (LSB), target qubit 0: |01> <-> |11>
        np.testing.assert_array_equal(rev, np.eye(4)[[0, 3, 2, 1]])
