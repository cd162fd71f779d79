from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from nhpost.circuit import ApplyNonUnitary, CircuitProgram, PureState, measure, nonunitary, postselect, run, unitary
from nhpost.errors import PreconditionError
from nhpost.hamiltonian import find_metric, pt_hamiltonian, similarity_factors
from nhpost.linalg import embed, haar_unitary
from nhpost.purification import (
    DilationGadget,
    contraction_dilation,
    dilate_circuit,
    dilate_with_scalars,
    effective_operator,
    matchgate,
    matchgate_dilation,
    matchgate_for_target,
    matchgate_induced,
    phase_fix_matchgate,
    polar_dilation,
    product_dilation,
    two_meter_pt_dilation,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
CNOT = np.eye(4)[[0, 1, 3, 2]].astype(complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def gaussian(d, rng):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


def random_state(n, rng):
    return PureState.from_amplitudes(rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n))


def unitarity_residual(u):
    return np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))


def random_pd(d, rng, cond=5.0):
    u = haar_unitary(d, rng)
    return u @ np.diag(rng.uniform(1.0, cond, d)) @ u.conj().T


class TestContractionDilation:
    def test_worked_example(self):
        ur = contraction_dilation(np.diag([1.0, 0.5]))
        # system (x) meter ordering: meter block (a, b) lives at [a::2, b::2]
        np.testing.assert_allclose(ur[0::2, 0::2], np.diag([1.0, 0.5]), atol=1e-15)
        np.testing.assert_allclose(ur[0::2, 1::2], np.diag([0.0, math.sqrt(3) / 2]), atol=1e-15)
        np.testing.assert_allclose(ur[1::2, 1::2], -np.diag([1.0, 0.5]), atol=1e-15)
        assert unitarity_residual(ur) <= 1e-15

    def test_rejects_expanding(self):
        with pytest.raises(PreconditionError):
            contraction_dilation(np.diag([1.5, 0.5]))
        with pytest.raises(PreconditionError):
            contraction_dilation(np.diag([-0.5, 0.5]))

    @given(seed=seeds, d=st.sampled_from([2, 4, 8]))
    @settings(max_examples=40, deadline=None)
    def test_unitary_for_every_contraction(self, seed, d):
        rng = np.random.default_rng(seed)
        u = haar_unitary(d, rng)
        r = u @ np.diag(rng.uniform(0, 1, d)) @ u.conj().T
        assert unitarity_residual(contraction_dilation(r)) <= 1e-10


class TestPolarDilation:
    def test_unitary_input(self, rng):
        u = haar_unitary(4, rng)
        g = polar_dilation(u)
        assert g.scalar == pytest.approx(1, abs=1e-12)
        psi = random_state(2, rng).amplitudes
        assert np.linalg.norm(effective_operator(g) @ psi) ** 2 == pytest.approx(1, abs=1e-12)

    @given(seed=seeds, d=st.sampled_from([2, 4, 8]))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, seed, d):
        rng = np.random.default_rng(seed)
        u = gaussian(d, rng)
        g = polar_dilation(u)
        assert g.scalar == pytest.approx(1 / np.linalg.norm(u, 2), rel=1e-12)
        np.testing.assert_allclose(effective_operator(g), g.scalar * u, atol=1e-10 * g.scalar * np.abs(u).max())
        assert unitarity_residual(g.unitary) <= 1e-10

    def test_success_probability(self, rng):
        u = gaussian(2, rng)
        g = polar_dilation(u)
        psi = random_state(1, rng)
        prog = CircuitProgram(2, [unitary(g.unitary, [0, 1]), postselect([1], 0)])
        p0 = run(prog, psi.tensor(PureState.zeros(1))).record_probability
        assert p0 == pytest.approx(np.linalg.norm(g.scalar * u @ psi.amplitudes) ** 2, rel=1e-12)

    def test_zero_operator(self):
        with pytest.raises(PreconditionError):
            polar_dilation(np.zeros((2, 2)))


class TestEffectiveOperator:
    def test_identity(self):
        g = DilationGadget(np.eye(4, dtype=complex), 1, 1, np.array([1, 0]), (0,), 1.0, np.eye(2))
        np.testing.assert_array_equal(effective_operator(g), np.eye(2))

    def test_cnot_onto_meter(self):
        g = DilationGadget(CNOT, 1, 1, np.array([1, 0]), (0,), 1.0, np.diag([1, 0]))
        np.testing.assert_array_equal(effective_operator(g), np.diag([1, 0]))


class TestDilateCircuit:
    def test_unitary_only_unchanged(self, rng):
        prog = CircuitProgram(2, [unitary(haar_unitary(4, rng), [0, 1])])
        out = dilate_circuit(prog)
        assert out.num_qubits == 2
        assert out.steps == prog.steps

    def test_single_exponential_step(self):
        prog = CircuitProgram(1, [nonunitary(scipy.linalg.expm(SZ), [0])])
        dil = dilate_with_scalars(prog)
        assert dil.program.num_qubits == 2 and dil.meters == (1,)
        psi = PureState.from_amplitudes(np.array([1, 1]))
        direct = run(prog, psi).state.amplitudes
        out = dil.system_state(run(dil.program, dil.initial_state(psi)).state).amplitudes
        assert abs(np.vdot(direct, out)) ** 2 == pytest.approx(1, abs=1e-10)

    def test_only_allowed_step_types(self, rng):
        prog = CircuitProgram(2, [nonunitary(gaussian(4, rng), [0, 1]), measure([0]), nonunitary(gaussian(2, rng), [1])])
        tags = {s.tag for s in dilate_circuit(prog).steps}
        assert tags <= {"unitary", "measure", "postselect"}

    @given(seed=seeds)
    @settings(max_examples=60, deadline=None)
    def test_equivalence_and_accounting(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        steps = []
        for _ in range(3):
            k = 1 if n == 1 else int(rng.integers(1, 3))
            targets = [int(q) for q in rng.choice(n, k, replace=False)]
            steps.append(unitary(haar_unitary(2**k, rng), targets))
            steps.append(nonunitary(gaussian(2**k, rng), targets))
        prog = CircuitProgram(n, steps)
        psi = random_state(n, rng)
        dil = dilate_with_scalars(prog)
        assert len(dil.meters) == 3 and dil.program.num_qubits == n + 3
        direct = run(prog, psi)
        dilated = run(dil.program, dil.initial_state(psi))
        out = dil.system_state(dilated.state).amplitudes
        assert abs(np.vdot(direct.state.amplitudes, out)) ** 2 >= 1 - 1e-9
        expected = math.prod(a * a for a in dil.scalars) * math.prod(direct.nonunitary_weights)
        assert dilated.record_probability == pytest.approx(expected, rel=1e-9)

    def test_meters_follow_system(self, rng):
        prog = CircuitProgram(3, [nonunitary(gaussian(2, rng), [1]), nonunitary(gaussian(2, rng), [0])])
        dil = dilate_with_scalars(prog)
        assert dil.meters == (3, 4)
        assert not any(isinstance(s, ApplyNonUnitary) for s in dil.program.steps)


class TestTwoMeter:
    def test_identity_similarity(self, rng):
        u0 = haar_unitary(2, rng)
        g = two_meter_pt_dilation(np.eye(2), u0)
        assert g.scalar == pytest.approx(1)
        np.testing.assert_allclose(effective_operator(g), u0, atol=1e-12)

    def test_similarity_of_identity(self):
        g = two_meter_pt_dilation(np.diag([2.0, 1.0]), np.eye(2))
        # alpha = 1/2 and beta = 1
        assert g.scalar == pytest.approx(0.5)
        np.testing.assert_allclose(effective_operator(g), 0.5 * np.eye(2), atol=1e-12)

    def test_rejects_indefinite(self):
        with pytest.raises(PreconditionError):
            two_meter_pt_dilation(np.diag([1.0, -1.0]), np.eye(2))

    @pytest.mark.parametrize("g, gamma", [(5.0, 3.0), (1.0, 0.3), (2.0, 1.5)])
    @pytest.mark.parametrize("t", [0.0, 0.4, 3.0, 10.0])
    def test_pt_family(self, g, gamma, t):
        h = pt_hamiltonian(g, gamma)
        s, h0 = similarity_factors(find_metric(h).eta, h)
        gadget = two_meter_pt_dilation(s, scipy.linalg.expm(-1j * h0 * t))
        target = gadget.scalar * scipy.linalg.expm(-1j * h * t)
        assert np.max(np.abs(effective_operator(gadget) - target)) <= 1e-8
        assert unitarity_residual(gadget.unitary) <= 1e-10

    @given(seed=seeds, d=st.sampled_from([2, 4]))
    @settings(max_examples=30, deadline=None)
    def test_random_similarity(self, seed, d):
        rng = np.random.default_rng(seed)
        s = random_pd(d, rng)
        u0 = haar_unitary(d, rng)
        g = two_meter_pt_dilation(s, u0)
        w = np.linalg.eigvalsh(s)
        assert g.scalar == pytest.approx(w[0] / w[-1], rel=1e-12)
        np.testing.assert_allclose(effective_operator(g), g.scalar * s @ u0 @ np.linalg.inv(s), atol=1e-10)


class TestProductDilation:
    def test_identity_factors(self):
        g = product_dilation([np.eye(2), np.eye(2)])
        assert g.scalar == 1 and g.meter_qubits == 2
        np.testing.assert_allclose(effective_operator(g), np.eye(4), atol=1e-15)

    def test_two_diagonal_factors(self):
        s = np.diag([2.0, 1.0])
        g = product_dilation([s, s])
        assert g.scalar == pytest.approx(0.25)
        np.testing.assert_allclose(effective_operator(g), 0.25 * np.kron(s, s), atol=1e-10)

    def test_local_support(self, rng):
        g = product_dilation([random_pd(2, rng), random_pd(4, rng), random_pd(2, rng)])
        # system qubits 0 | 1 2 | 3, meters 4 5 6
        assert [q for q, _ in g.local_gates] == [(0, 4), (1, 2, 5), (3, 6)]
        rebuilt = np.eye(2**g.num_qubits, dtype=complex)
        for qubits, local in g.local_gates:
            rebuilt = embed(local, list(qubits), g.num_qubits) @ rebuilt
        np.testing.assert_allclose(rebuilt, g.unitary, atol=1e-14)

    @given(seed=seeds)
    @settings(max_examples=20, deadline=None)
    def test_random_factors(self, seed):
        rng = np.random.default_rng(seed)
        fs = [random_pd(2, rng), random_pd(2, rng)]
        g = product_dilation(fs)
        expected = math.prod(1 / np.linalg.eigvalsh(f)[-1] for f in fs)
        assert g.scalar == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(effective_operator(g), g.scalar * np.kron(*fs), atol=1e-10)

    def test_rejects_non_pd(self):
        with pytest.raises(PreconditionError):
            product_dilation([np.eye(2), np.diag([1.0, 0.0])])


class TestMatchgates:
    def test_identity_pair(self):
        np.testing.assert_allclose(matchgate_induced(np.eye(2), np.eye(2)), np.eye(2) / math.sqrt(2), atol=1e-15)

    @given(seed=seeds)
    @settings(max_examples=50, deadline=None)
    def test_formula(self, seed):
        rng = np.random.default_rng(seed)
        f, g = haar_unitary(2, rng), haar_unitary(2, rng)
        formula = np.array([[f[0, 0], f[0, 1]], [g[1, 0], g[1, 1]]]) / math.sqrt(2)
        np.testing.assert_allclose(matchgate_induced(f, g), formula, atol=1e-12)

    @given(seed=seeds)
    @settings(max_examples=30, deadline=None)
    def test_phase_fix(self, seed):
        rng = np.random.default_rng(seed)
        f, g = phase_fix_matchgate(haar_unitary(2, rng), haar_unitary(2, rng))
        assert abs(np.linalg.det(f) - np.linalg.det(g)) <= 1e-10
        assert unitarity_residual(matchgate(f, g)) <= 1e-12

    @given(seed=seeds)
    @settings(max_examples=30, deadline=None)
    def test_arbitrary_target(self, seed):
        rng = np.random.default_rng(seed)
        t = haar_unitary(2, rng)
        f, g = matchgate_for_target(t)
        np.testing.assert_allclose(matchgate_induced(f, g), t / math.sqrt(2), atol=1e-12)
        gadget = matchgate_dilation(f, g)
        np.testing.assert_allclose(effective_operator(gadget), t / math.sqrt(2), atol=1e-12)

    def test_non_unitary_rejected(self):
        with pytest.raises(PreconditionError):
            matchgate_induced(np.diag([1.0, 0.5]), np.eye(2))
