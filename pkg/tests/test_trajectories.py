from __future__ import annotations

import csv
import io
import math
import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from nhpost.errors import DimensionError, PreconditionError
from nhpost.linalg import embed
from nhpost.trajectories import (
    SIGMA_MINUS,
    TrajectoryModel,
    amplitude_damping_model,
    assemble,
    build_local_coupling,
    coupling_part,
    cross_terms,
    effective_hamiltonian,
    effective_hamiltonian_from_dilation,
    enumerate_records,
    estimate_order,
    iterate_unconditional,
    kraus_operators,
    lindblad_generator,
    local_coupling_hamiltonian,
    no_jump_trajectory,
    random_model,
    sample_ensemble,
    sample_trajectory,
    step_kraus,
    unconditional_step,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
DELTAS = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]


def random_psi(d, rng):
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_rho(d, rng):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    r = a @ a.conj().T
    return r / np.trace(r)


class TestModel:
    def test_partner_filled_in(self, rng):
        op = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        model = TrajectoryModel(2, (np.zeros((2, 2)),), {(1, 0): op})
        np.testing.assert_array_equal(model.jumps[(0, 1)], op.conj().T)

    def test_inconsistent_pair(self):
        with pytest.raises(PreconditionError):
            TrajectoryModel(2, (np.zeros((2, 2)),), {(1, 0): SIGMA_MINUS, (0, 1): SIGMA_MINUS})

    @pytest.mark.parametrize(
        "kwargs, exc",
        [
            ({"meter_levels": 1}, DimensionError),
            ({"delta": 0.0}, PreconditionError),
            ({"meter_init": 2}, DimensionError),
            ({"system_hamiltonians": (np.array([[0, 1], [0, 0]]),)}, PreconditionError),
        ],
    )
    def test_invalid(self, kwargs, exc):
        base = {"meter_levels": 2, "system_hamiltonians": (np.zeros((2, 2)),), "jumps": {}, "delta": 1e-3}
        with pytest.raises(exc):
            TrajectoryModel(**{**base, **kwargs})

    def test_json_round_trip(self, rng):
        model = random_model(2, 3, rng, delta=2e-3)
        back = TrajectoryModel.from_json(model.to_json())
        assert back.meter_levels == 3 and back.delta == 2e-3
        for key, op in model.jumps.items():
            np.testing.assert_array_equal(back.jumps[key], op)
        np.testing.assert_array_equal(assemble(back), assemble(model))


class TestAssemble:
    def test_amplitude_damping_entries(self):
        kappa, delta = 2.0, 0.01
        h = assemble(amplitude_damping_model(kappa, delta))
        # index = 2 * system + meter; coupling |0,1><1,0| + h.c.
        expected = np.zeros((4, 4))
        expected[1, 2] = expected[2, 1] = math.sqrt(kappa / delta)
        np.testing.assert_allclose(h, expected, atol=1e-12)

    def test_no_jumps_block_diagonal(self, rng):
        hs = (np.diag([1.0, 2.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))
        h = assemble(TrajectoryModel(2, hs))
        np.testing.assert_allclose(h, np.kron(hs[0], np.diag([1, 0])) + np.kron(hs[1], np.diag([0, 1])))

    @given(seed=seeds, levels=st.sampled_from([2, 3, 4]))
    @settings(max_examples=30, deadline=None)
    def test_hermitian_and_off_block(self, seed, levels):
        model = random_model(2, levels, np.random.default_rng(seed))
        h = assemble(model)
        assert np.max(np.abs(h - h.conj().T)) <= 1e-12
        hab = coupling_part(model).reshape(2, levels, 2, levels)
        for k in range(levels):
            assert np.all(hab[:, k, :, k] == 0)


class TestKraus:
    def test_no_coupling_is_exact_unitary(self, rng):
        h = rng.standard_normal((2, 2))
        h = h + h.T
        model = TrajectoryModel(2, (h,), delta=0.05)
        np.testing.assert_allclose(step_kraus(model, 0, 0), scipy.linalg.expm(-0.05j * h), atol=1e-13)
        np.testing.assert_allclose(step_kraus(model, 0, 1), 0, atol=1e-15)

    @pytest.mark.parametrize("delta", [1e-2, 1e-3, 1e-4])
    def test_amplitude_damping_closed_form(self, delta):
        # the coupling rotates |1,0> into |0,1> by angle sqrt(kappa delta)
        kappa = 1.0
        model = amplitude_damping_model(kappa, delta)
        theta = math.sqrt(kappa * delta)
        np.testing.assert_allclose(step_kraus(model, 0, 0), np.diag([1, math.cos(theta)]), atol=1e-13)
        np.testing.assert_allclose(step_kraus(model, 0, 1), -1j * math.sin(theta) * SIGMA_MINUS, atol=1e-13)
        # leading-order forms
        assert np.max(np.abs(step_kraus(model, 0, 0) - np.diag([1, 1 - kappa * delta / 2]))) <= delta**2
        assert np.max(np.abs(step_kraus(model, 0, 1) + 1j * math.sqrt(kappa * delta) * SIGMA_MINUS)) <= delta

    def test_bad_level(self):
        with pytest.raises(DimensionError):
            step_kraus(amplitude_damping_model(), 0, 2)

    @given(seed=seeds, levels=st.sampled_from([2, 3, 4]), delta=st.sampled_from([1e-1, 1e-3]))
    @settings(max_examples=30, deadline=None)
    def test_completeness(self, seed, levels, delta):
        model = random_model(2, levels, np.random.default_rng(seed), delta=delta)
        for j in range(levels):
            total = sum(k.conj().T @ k for k in kraus_operators(model, j))
            np.testing.assert_allclose(total, np.eye(2), atol=1e-12)


class TestEffectiveHamiltonian:
    def test_no_jumps(self, rng):
        h = np.diag([0.3, -0.2])
        assert np.array_equal(effective_hamiltonian(TrajectoryModel(2, (h,))), h)

    def test_amplitude_damping(self):
        np.testing.assert_allclose(effective_hamiltonian(amplitude_damping_model(0.7)), np.diag([0, -0.35j]), atol=1e-15)

    def test_lindblad_form(self, rng):
        h0 = np.diag([1.0, -1.0])
        l1, l2 = SIGMA_MINUS, 0.3 * np.diag([1.0, -1.0])
        model = TrajectoryModel(3, (h0, np.zeros((2, 2)), np.zeros((2, 2))), {(1, 0): l1, (2, 0): l2})
        expected = h0 - 0.5j * (l1.conj().T @ l1 + l2.conj().T @ l2)
        np.testing.assert_allclose(effective_hamiltonian(model, 0), expected, atol=1e-15)
        np.testing.assert_allclose(effective_hamiltonian_from_dilation(model, 0), expected, atol=1e-12)

    @given(seed=seeds, levels=st.sampled_from([2, 3, 4]))
    @settings(max_examples=20, deadline=None)
    def test_matches_dense_projection(self, seed, levels):
        model = random_model(4, levels, np.random.default_rng(seed))
        for k in range(levels):
            np.testing.assert_allclose(
                effective_hamiltonian(model, k), effective_hamiltonian_from_dilation(model, k), atol=1e-10
            )


class TestUnconditional:
    @given(seed=seeds)
    @settings(max_examples=20, deadline=None)
    def test_trace_preserving(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(2, 3, rng, delta=1e-2)
        out = unconditional_step(model, random_rho(2, rng))
        assert np.trace(out.matrix).real == pytest.approx(1, abs=1e-12)

    def test_first_order_generator(self, rng):
        model = random_model(2, 3, rng)
        rho = random_rho(2, rng)
        errs = []
        for delta in (1e-3, 1e-5):
            m = model.with_delta(delta)
            step = unconditional_step(m, rho).matrix
            errs.append(np.linalg.norm(step - rho - delta * lindblad_generator(m, rho)))
        # the residual is O(delta^{3/2}) or better
        assert errs[1] / errs[0] <= (1e-2) ** 1.5 * 3

    def test_unitary_when_uncoupled(self, rng):
        h = np.array([[0.0, 1.0], [1.0, 0.5]])
        model = TrajectoryModel(2, (h,), delta=0.1)
        rho = random_rho(2, rng)
        out = unconditional_step(model, rho).matrix
        u = scipy.linalg.expm(-0.1j * h)
        np.testing.assert_allclose(out, u @ rho @ u.conj().T, atol=1e-13)
        np.testing.assert_allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(rho), atol=1e-13)

    def test_amplitude_damping_decay(self):
        # rho_11 is multiplied by cos^2(sqrt(kappa delta)) per step
        delta = 1e-3
        out = iterate_unconditional(amplitude_damping_model(1.0, delta), np.diag([0.0, 1.0]), 1000)
        assert out.matrix[1, 1].real == pytest.approx(math.cos(math.sqrt(delta)) ** 2000, rel=1e-10)
        assert abs(out.matrix[1, 1].real - math.exp(-1)) < 2e-3


class TestSampling:
    def test_uncoupled_never_jumps(self, rng):
        model = TrajectoryModel(2, (np.diag([1.0, -1.0]),), delta=0.01)
        traj = sample_trajectory(model, random_psi(2, rng), 50, rng_seed=3)
        assert set(traj.outcomes) == {0}
        assert traj.weight == pytest.approx(1, abs=1e-12)

    def test_reproducible(self, rng):
        model = random_model(2, 3, rng, delta=0.01)
        psi = random_psi(2, rng)
        a = sample_trajectory(model, psi, 100, rng_seed=11)
        b = sample_trajectory(model, psi, 100, rng_seed=11)
        assert a.outcomes == b.outcomes and a.weights == b.weights

    def test_csv(self):
        traj = sample_trajectory(amplitude_damping_model(1.0, 0.1), np.array([0, 1]), 20, rng_seed=0)
        rows = list(csv.reader(io.StringIO(traj.to_csv())))
        assert rows[0] == ["step", "outcome", "weight"]
        assert len(rows) == 21
        assert [int(r[1]) for r in rows[1:]] == list(traj.outcomes)
        assert float(rows[-1][2]) == traj.weight

    def test_single_jump_statistics(self):
        # from |1> only one jump is possible; it has happened by t = 1 with probability 1 - e^{-1}
        model = amplitude_damping_model(1.0, 1e-3)
        ens = sample_ensemble(model, np.array([0, 1]), 1000, 4000, rng_seed=7)
        assert set(np.unique(ens.jump_counts)) <= {0, 1}
        p = ens.jump_counts.mean()
        se = math.sqrt(p * (1 - p) / 4000)
        assert abs(p - (1 - math.cos(math.sqrt(1e-3)) ** 2000)) <= 4 * se

    def test_ensemble_matches_channel(self, rng):
        model = random_model(2, 3, rng, delta=0.02)
        psi = random_psi(2, rng)
        ens = sample_ensemble(model, psi, 25, 6000, rng_seed=5)
        exact = iterate_unconditional(model, np.outer(psi, psi.conj()), 25).matrix[0, 0].real
        mean, se = ens.population(0)
        assert abs(mean - exact) <= 4 * se

    def test_feedback_switches_model(self):
        model = amplitude_damping_model(1.0, 0.05)
        frozen = TrajectoryModel(2, (np.zeros((2, 2)),), delta=0.05)
        seen = []

        def feedback(step, outcome, current):
            seen.append(step)
            return frozen if outcome == 1 else current

        traj = sample_trajectory(model, np.array([0, 1]), 200, rng_seed=1, feedback=feedback)
        assert seen == list(range(200))
        assert traj.outcomes.count(1) <= 1


class TestEnumeration:
    @given(seed=seeds, steps=st.integers(1, 4))
    @settings(max_examples=20, deadline=None)
    def test_weights_sum_to_one(self, seed, steps):
        rng = np.random.default_rng(seed)
        model = random_model(2, 3, rng, delta=0.05)
        recs = enumerate_records(model, random_psi(2, rng), steps)
        assert sum(r.weight for r in recs) == pytest.approx(1, abs=1e-10)
        assert all(0 < r.weight <= 1 for r in recs)

    def test_no_jump_record_matches_sampler_state(self, rng):
        model = random_model(2, 2, rng, delta=0.01)
        psi = random_psi(2, rng)
        recs = {r.outcomes: r for r in enumerate_records(model, psi, 3)}
        state, weight = no_jump_trajectory(model, psi, 3)
        assert recs[(0, 0, 0)].weight == pytest.approx(weight, rel=1e-12)
        assert abs(np.vdot(recs[(0, 0, 0)].final_state, state)) == pytest.approx(1, abs=1e-12)


class TestNoJump:
    def test_tracks_effective_hamiltonian(self, rng):
        model = random_model(2, 3, rng)
        psi = random_psi(2, rng)
        t = 0.5
        for delta in (1e-2, 1e-3):
            m = model.with_delta(delta)
            state, _ = no_jump_trajectory(m, psi, int(round(t / delta)))
            ref = scipy.linalg.expm(-1j * t * effective_hamiltonian(m)) @ psi
            ref /= np.linalg.norm(ref)
            assert 1 - abs(np.vdot(ref, state)) ** 2 <= math.sqrt(delta)

    @pytest.mark.parametrize("c", [-0.7, 0.4, 2.0])
    def test_imaginary_shift(self, rng, c):
        model = random_model(2, 3, rng, delta=0.01)
        psi = random_psi(2, rng)
        s0, w0 = no_jump_trajectory(model, psi, 40)
        s1, w1 = no_jump_trajectory(model, psi, 40, imaginary_shift=c)
        np.testing.assert_allclose(s1, s0, atol=1e-13)
        assert w1 / w0 == pytest.approx(math.exp(2 * c * 0.01 * 40), rel=1e-12)


class TestLocalCoupling:
    def chain(self, kappa=0.5):
        rng = np.random.default_rng(3)
        h0 = sum(embed(np.diag([1.0, -1.0]) * rng.uniform(0.5, 1.5), [q], 3) for q in range(3))
        h0 = h0 + embed(np.kron(SIGMA_MINUS, SIGMA_MINUS.T) + np.kron(SIGMA_MINUS.T, SIGMA_MINUS), [0, 1], 3)
        jumps = [(j, math.sqrt(kappa) * SIGMA_MINUS) for j in range(3)]
        return h0, jumps, build_local_coupling(h0, jumps)

    def test_effective_hamiltonian(self):
        h0, jumps, model = self.chain()
        expected = h0 - 0.5j * sum(embed(l.conj().T @ l, [s], 3) for s, l in jumps)
        np.testing.assert_allclose(effective_hamiltonian_from_dilation(model, 0), expected, atol=1e-10)
        np.testing.assert_allclose(effective_hamiltonian(model, 0), expected, atol=1e-12)

    def test_cross_terms_vanish(self):
        _, _, model = self.chain()
        terms = cross_terms(model)
        assert len(terms) == 6
        assert max(terms.values()) <= 1e-12

    def test_local_structure(self):
        _, _, model = self.chain()
        assert model.meter_levels == 8
        np.testing.assert_allclose(local_coupling_hamiltonian(model), coupling_part(model), atol=1e-15)
        for site, meter, op in model.local_terms:
            assert op.shape == (2, 2) and site == meter

    def test_single_site_is_two_level_model(self):
        model = build_local_coupling(np.zeros((2, 2)), [(0, SIGMA_MINUS)], delta=1e-3)
        np.testing.assert_allclose(assemble(model), assemble(amplitude_damping_model(1.0, 1e-3)), atol=1e-12)

    def test_overlapping_meters(self):
        with pytest.raises(PreconditionError):
            build_local_coupling(np.zeros((4, 4)), [(0, SIGMA_MINUS), (1, SIGMA_MINUS)], meters=[0, 0])

    def test_non_local_jump_rejected(self):
        with pytest.raises(DimensionError):
            build_local_coupling(np.zeros((4, 4)), [(0, np.eye(4))])


class TestOrder:
    def test_generic_three_level_meter(self):
        fit = estimate_order(random_model(2, 3, np.random.default_rng(1)), "no_jump_error", DELTAS)
        assert 1.35 <= fit.slope <= 1.65

    @pytest.mark.parametrize("levels", [2, 3, 4])
    def test_restricted(self, levels):
        fit = estimate_order(random_model(2, levels, np.random.default_rng(2), restricted=True), "no_jump_error", DELTAS)
        assert 1.85 <= fit.slope <= 2.15

    def test_unconditional_error_is_higher_order(self):
        fit = estimate_order(random_model(2, 3, np.random.default_rng(4)), "unconditional_error", DELTAS)
        assert fit.slope >= 1.4

    def test_needs_spread(self):
        with pytest.raises(PreconditionError):
            estimate_order(amplitude_damping_model(), "no_jump_error", [1e-3, 2e-3, 3e-3, 4e-3])
        with pytest.raises(PreconditionError):
            estimate_order(amplitude_damping_model(), "no_jump_error", [1e-2, 1e-4])

    def test_uncoupled_floor_warning(self):
        model = TrajectoryModel(2, (np.diag([1.0, -1.0]),))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = estimate_order(model, "no_jump_error", DELTAS)
        assert math.isnan(fit.slope)
        assert any("precision floor" in str(w.message) for w in caught)

    def test_unknown_quantity(self):
        with pytest.raises(ValueError):
            estimate_order(amplitude_damping_model(), "bogus", DELTAS)
