"""Single-trajectory propagation and ensemble averaging."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm

from excidyn import (
    AR1Fluctuations,
    DensityMatrix,
    EnergyTrajectory,
    InvalidInputError,
    NoFluctuations,
    PureState,
    RecordedFluctuations,
    SimConfig,
    SiteSystem,
    StaticDisorder,
    mean_hamiltonian,
    run_ensemble,
    run_trajectory,
    step_unitary,
)
from excidyn.constants import HBAR_CM_FS
from excidyn.propagator import (
    load_propagator_csv,
    load_trace_csv,
    write_density_trace_csv,
    write_propagator_csv,
)


class TestSimConfig:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            SimConfig(dt=0.0, t_total=1.0, n_traj=1, seed=0)
        with pytest.raises(InvalidInputError):
            SimConfig(dt=1.0, t_total=0.5, n_traj=1, seed=0)
        with pytest.raises(InvalidInputError, match="n_traj"):
            SimConfig(dt=1.0, t_total=1.0, n_traj=0, seed=0)
        with pytest.raises(InvalidInputError):
            SimConfig(dt=1.0, t_total=1.0, n_traj=1, seed=0, method="XX")

    def test_step_count_handles_float_ratio(self):
        config = SimConfig(dt=0.1, t_total=500.0, n_traj=1, seed=0)
        assert config.n_steps == 5000


class TestStepUnitary:
    def test_zero_hamiltonian_is_identity(self):
        psi = PureState(np.array([0.6, 0.8j]))
        out = step_unitary(psi, np.zeros((2, 2)), 5.0)
        assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-15)

    def test_diagonal_phases(self):
        eps = np.array([150.0, -75.0])
        psi = np.array([0.6, 0.8], dtype=complex)
        dt = 2.5
        out = step_unitary(psi, np.diag(eps), dt)
        assert_allclose(out, psi * np.exp(-1j * eps * dt / HBAR_CM_FS), atol=1e-14)

    def test_rabi_oscillation(self):
        j = 100.0
        h = np.array([[0.0, j], [j, 0.0]])
        psi = np.array([1.0, 0.0], dtype=complex)
        dt, t_final = 0.1, 100.0
        for _ in range(int(t_final / dt)):
            psi = step_unitary(psi, h, dt)
        assert abs(np.abs(psi[1]) ** 2 - np.sin(j * t_final / HBAR_CM_FS) ** 2) < 1e-6

    def test_norm_preserved(self):
        rng = np.random.default_rng(3)
        h = rng.normal(0, 100, (5, 5))
        h = 0.5 * (h + h.T)
        psi = PureState(np.eye(5, dtype=complex)[2])
        out = step_unitary(psi, h, 1.0)
        assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-12

    def test_non_hermitian_rejected(self):
        with pytest.raises(InvalidInputError):
            step_unitary(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)


class TestRunTrajectory:
    def test_static_matches_matrix_exponential(self, dimer_system):
        config = SimConfig(dt=1.0, t_total=200.0, n_traj=1, seed=0, initial_state=0)
        result = run_trajectory(dimer_system, NoFluctuations(), config, 0)
        h = mean_hamiltonian(dimer_system)
        for idx in (50, 200):
            t = result.times[idx]
            exact = expm(-1j * h * t / HBAR_CM_FS)
            assert np.max(np.abs(result.propagators[idx] - exact)) < 1e-8

    def test_propagators_stay_unitary(self, seven_site_system):
        fluct = AR1Fluctuations(sigma_cm1=200.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(dt=1.0, t_total=100.0, n_traj=1, seed=5, initial_state=0)
        result = run_trajectory(seven_site_system, fluct, config, 3)
        eye = np.eye(7)
        for u in result.propagators:
            assert np.max(np.abs(u.conj().T @ u - eye)) < 1e-10

    def test_deterministic_per_index(self, dimer_system):
        fluct = AR1Fluctuations(sigma_cm1=100.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(dt=1.0, t_total=50.0, n_traj=1, seed=9, initial_state=0)
        a = run_trajectory(dimer_system, fluct, config, 7)
        b = run_trajectory(dimer_system, fluct, config, 7)
        c = run_trajectory(dimer_system, fluct, config, 8)
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)

    def test_recorded_frames_interpolated_to_midpoints(self):
        system = SiteSystem(1, [0.0], [[0.0]])
        frames = np.array([[0.0], [100.0], [300.0], [200.0]])
        traj = EnergyTrajectory(dt_frame=4.0, frames=frames)
        fluct = RecordedFluctuations(trajectory=traj, window_fs=traj.duration_fs)
        config = SimConfig(dt=2.0, t_total=10.0, n_traj=1, seed=0, initial_state=0)
        result = run_trajectory(system, fluct, config, 0)
        # recover the step energies from the accumulated single-site phase
        phases = np.angle(result.propagators[:, 0, 0])
        steps = -np.diff(np.unwrap(phases)) * HBAR_CM_FS / config.dt
        assert_allclose(steps, [0.0, 50.0, 100.0, 200.0, 300.0], atol=1e-9)

    def test_source_shorter_than_run_rejected(self):
        system = SiteSystem(1, [0.0], [[0.0]])
        traj = EnergyTrajectory(dt_frame=4.0, frames=np.zeros((4, 1)))
        fluct = RecordedFluctuations(trajectory=traj, window_fs=8.0)
        config = SimConfig(dt=1.0, t_total=100.0, n_traj=1, seed=0, initial_state=0)
        with pytest.raises(InvalidInputError):
            run_trajectory(system, fluct, config, 0)

    def test_mixed_initial_state_rejected(self, dimer_system):
        config = SimConfig(
            dt=1.0, t_total=10.0, n_traj=1, seed=0, initial_state=DensityMatrix(np.eye(2) / 2)
        )
        with pytest.raises(InvalidInputError):
            run_trajectory(dimer_system, NoFluctuations(), config, 0)


class TestRunEnsemble:
    def test_single_trajectory_stays_pure(self, dimer_system):
        fluct = AR1Fluctuations(sigma_cm1=150.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(dt=1.0, t_total=100.0, n_traj=1, seed=2, initial_state=0)
        trace = run_ensemble(dimer_system, fluct, config).trace
        assert np.max(np.abs(trace.purity() - 1.0)) < 1e-10

    def test_no_fluctuations_dimer_beats_undamped(self, dimer_system):
        config = SimConfig(dt=0.1, t_total=400.0, n_traj=3, seed=0, initial_state=0)
        trace = run_ensemble(dimer_system, NoFluctuations(), config).trace
        expected = np.sin(100.0 * trace.times / HBAR_CM_FS) ** 2
        assert np.max(np.abs(trace.population(1) - expected)) < 1e-6

    def test_static_disorder_gaussian_coherence_decay(self, decoupled_dimer):
        sigma = 100.0
        psi0 = PureState(np.array([1.0, 1.0]) / np.sqrt(2.0))
        config = SimConfig(dt=1.0, t_total=140.0, n_traj=2000, seed=3, initial_state=psi0)
        trace = run_ensemble(decoupled_dimer, StaticDisorder(sigma), config).trace
        predicted = np.exp(-(2.0 * sigma**2) * trace.times**2 / (2.0 * HBAR_CM_FS**2))
        measured = trace.coherence(0, 1)
        window = predicted > 0.05
        assert np.max(np.abs(measured - predicted)[window]) < 0.03

    def test_trace_invariants_validated(self, seven_site_system):
        fluct = AR1Fluctuations(sigma_cm1=250.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(dt=1.0, t_total=60.0, n_traj=64, seed=4, initial_state=0)
        trace = run_ensemble(seven_site_system, fluct, config).trace
        trace.validate()
        assert_allclose(np.sum(trace.populations, axis=1), 1.0, atol=1e-10)

    def test_bit_identical_across_worker_counts(self, seven_site_system):
        fluct = AR1Fluctuations(sigma_cm1=200.0, tau_fs=5.0, dt_fs=1.0)
        traces = []
        for workers in (1, 2, 4):
            config = SimConfig(
                dt=1.0, t_total=40.0, n_traj=300, seed=6, initial_state=0, workers=workers
            )
            traces.append(run_ensemble(seven_site_system, fluct, config).trace)
        assert np.array_equal(traces[0].rhos, traces[1].rhos)
        assert np.array_equal(traces[0].rhos, traces[2].rhos)

    def test_mixed_initial_equals_weighted_pure_runs(self, dimer_system):
        fluct = AR1Fluctuations(sigma_cm1=120.0, tau_fs=5.0, dt_fs=1.0)
        plus = np.array([1.0, 1.0]) / np.sqrt(2.0)
        rho0 = 0.25 * np.eye(2, dtype=complex) + 0.5 * np.outer(plus, plus)
        mixed = SimConfig(
            dt=1.0, t_total=50.0, n_traj=40, seed=8, initial_state=DensityMatrix(rho0)
        )
        trace = run_ensemble(dimer_system, fluct, mixed).trace

        w, v = np.linalg.eigh(rho0)
        combined = np.zeros_like(trace.rhos)
        for weight, column in zip(w, v.T):
            if weight < 1e-12:
                continue
            pure = SimConfig(
                dt=1.0, t_total=50.0, n_traj=40, seed=8, initial_state=PureState(column)
            )
            combined += weight * run_ensemble(dimer_system, fluct, pure).trace.rhos
        assert np.max(np.abs(trace.rhos - combined)) < 1e-12

    def test_propagator_record_consistent_with_trace(self, dimer_system):
        fluct = AR1Fluctuations(sigma_cm1=150.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(
            dt=1.0, t_total=50.0, n_traj=1, seed=10, initial_state=0, record_propagator=True
        )
        result = run_ensemble(dimer_system, fluct, config)
        # for M = 1 the averaged propagator is the trajectory propagator
        rho0 = np.zeros((2, 2), dtype=complex)
        rho0[0, 0] = 1.0
        for idx in (10, 50):
            u = result.propagator.mean_u[idx]
            assert np.max(np.abs(u @ rho0 @ u.conj().T - result.trace.rhos[idx])) < 1e-12
        assert np.max(np.abs(result.propagator.mean_u[0] - np.eye(2))) == 0.0

    def test_purity_decreases_with_ensemble_size(self, decoupled_dimer):
        fluct = AR1Fluctuations(sigma_cm1=100.0, tau_fs=5.0, dt_fs=1.0)
        psi0 = PureState(np.array([1.0, 1.0]) / np.sqrt(2.0))

        def purity_at_end(n_traj, seed):
            config = SimConfig(
                dt=1.0, t_total=150.0, n_traj=n_traj, seed=seed, initial_state=psi0
            )
            return run_ensemble(decoupled_dimer, fluct, config).trace.purity()[-1]

        small = np.array([purity_at_end(40, seed) for seed in range(30, 38)])
        big = purity_at_end(4000, 99)
        stderr = np.std(small, ddof=1) / np.sqrt(small.size)
        assert big <= np.mean(small) + 3.0 * stderr

    def test_method_must_be_md(self, dimer_system):
        config = SimConfig(dt=1.0, t_total=10.0, n_traj=1, seed=0, method="QJC")
        with pytest.raises(InvalidInputError):
            run_ensemble(dimer_system, NoFluctuations(), config)


class TestTraceCsv:
    def test_roundtrip_with_pairs(self, tmp_path, dimer_system):
        fluct = AR1Fluctuations(sigma_cm1=100.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(dt=1.0, t_total=20.0, n_traj=16, seed=1, initial_state=0)
        trace = run_ensemble(dimer_system, fluct, config).trace
        path = tmp_path / "trace.csv"
        write_density_trace_csv(trace, path, pairs=[(0, 1)])
        loaded = load_trace_csv(path)
        assert np.array_equal(loaded.times, trace.times)
        assert np.array_equal(loaded.pops, trace.populations)
        assert np.array_equal(loaded.rho_element(0, 1), trace.rho_element(0, 1))
        assert np.array_equal(loaded.coherence(1, 0), trace.coherence(1, 0))

    def test_missing_pair_errors(self, tmp_path, dimer_system):
        config = SimConfig(dt=1.0, t_total=5.0, n_traj=2, seed=1, initial_state=0)
        trace = run_ensemble(dimer_system, NoFluctuations(), config).trace
        path = tmp_path / "trace.csv"
        write_density_trace_csv(trace, path, pairs=[])
        loaded = load_trace_csv(path)
        with pytest.raises(InvalidInputError):
            loaded.coherence(0, 1)


class TestPropagatorCsv:
    def test_roundtrip(self, tmp_path, seven_site_system):
        fluct = AR1Fluctuations(sigma_cm1=150.0, tau_fs=5.0, dt_fs=1.0)
        config = SimConfig(
            dt=1.0, t_total=10.0, n_traj=8, seed=2, initial_state=0, record_propagator=True
        )
        record = run_ensemble(seven_site_system, fluct, config).propagator
        path = tmp_path / "prop.csv"
        write_propagator_csv(record, path)
        loaded = load_propagator_csv(path)
        assert np.array_equal(loaded.times, record.times)
        assert np.array_equal(loaded.mean_u, record.mean_u)
