"""Response-function spectra from averaged propagator records."""

import numpy as np
import pytest

from excidyn import (
    Geometry,
    InvalidInputError,
    NoFluctuations,
    SimConfig,
    SiteSystem,
    StaticDisorder,
    Spectrum,
    compute_spectrum,
    overlay_shift,
    run_ensemble,
)
from excidyn.constants import HBAR_CM_FS
from excidyn.spectra import _weights, load_xy_csv, write_spectrum_csv

WINDOW_FS = 100.0
WINDOW_SIGMA_CM1 = HBAR_CM_FS / WINDOW_FS


def single_site(energy=12000.0, dipole=(1.0, 0.0, 0.0)):
    geom = Geometry(
        positions=[[0.0, 0.0, 0.0]], dipoles=[list(dipole)], symmetry_axis=[0.0, 0.0, 1.0]
    )
    return SiteSystem(1, [energy], [[0.0]], geometry=geom)


def propagator_record(system, fluct, n_traj, seed, t_total=400.0):
    config = SimConfig(
        dt=1.0, t_total=t_total, n_traj=n_traj, seed=seed, initial_state=0, record_propagator=True
    )
    return run_ensemble(system, fluct, config).propagator


def gaussian_width(grid, intensity, expected_total):
    """Second central moment restricted to the +-4 sigma core of the line."""
    values = np.clip(intensity, 0.0, None)
    mu = np.sum(grid * values) / np.sum(values)
    core = np.abs(grid - mu) < 4.0 * expected_total
    mu = np.sum(grid[core] * values[core]) / np.sum(values[core])
    var = np.sum((grid[core] - mu) ** 2 * values[core]) / np.sum(values[core])
    return np.sqrt(var)


class TestComputeSpectrum:
    def test_delta_line_at_site_energy(self):
        system = single_site()
        record = propagator_record(system, NoFluctuations(), n_traj=1, seed=0, t_total=2000.0)
        grid = np.arange(11500.0, 12500.0, 5.0)
        spec = compute_spectrum(record, system, "abs", window_fs=WINDOW_FS, omega_grid=grid)
        assert abs(spec.peak_position() - 12000.0) <= 5.0
        assert spec.intensity[np.argmax(np.abs(spec.intensity))] == pytest.approx(1.0)
        width = gaussian_width(grid, spec.intensity, WINDOW_SIGMA_CM1)
        assert width == pytest.approx(WINDOW_SIGMA_CM1, rel=0.05)

    def test_single_site_cd_identically_zero(self):
        system = single_site()
        record = propagator_record(system, NoFluctuations(), n_traj=1, seed=0)
        grid = np.arange(11000.0, 13000.0, 20.0)
        spec = compute_spectrum(record, system, "cd", window_fs=WINDOW_FS, omega_grid=grid)
        assert np.array_equal(spec.intensity, np.zeros_like(grid))

    def test_static_disorder_lineshape(self):
        sigma = 80.0
        system = single_site()
        record = propagator_record(system, StaticDisorder(sigma), n_traj=4000, seed=12)
        grid = np.linspace(11000.0, 13000.0, 1001)
        spec = compute_spectrum(record, system, "abs", window_fs=WINDOW_FS, omega_grid=grid)
        total = np.sqrt(sigma**2 + WINDOW_SIGMA_CM1**2)
        measured = gaussian_width(grid, spec.intensity, total)
        deconvolved = np.sqrt(measured**2 - WINDOW_SIGMA_CM1**2)
        assert abs(deconvolved - sigma) < 0.05 * sigma

    def test_abs_total_positive(self, seven_site_system):
        geom = Geometry(
            positions=np.arange(21.0).reshape(7, 3),
            dipoles=np.tile([1.0, 0.5, -0.2], (7, 1)),
            symmetry_axis=[0.0, 0.0, 1.0],
        )
        system = SiteSystem(
            7, seven_site_system.mean_energies, seven_site_system.couplings, geometry=geom
        )
        record = propagator_record(system, NoFluctuations(), n_traj=1, seed=0, t_total=1000.0)
        grid = np.arange(11800.0, 13300.0, 10.0)
        spec = compute_spectrum(record, system, "abs", window_fs=WINDOW_FS, omega_grid=grid)
        assert np.trapezoid(spec.intensity, grid) > 0.0

    def test_global_dipole_sign_flip_invariant(self):
        energies = [12000.0, 12150.0]
        couplings = [[0.0, 60.0], [60.0, 0.0]]
        rng = np.random.default_rng(4)
        positions = rng.normal(0, 5, (2, 3))
        dipoles = rng.normal(0, 1, (2, 3))
        grid = np.arange(11500.0, 12700.0, 10.0)
        spectra = []
        for sign in (+1.0, -1.0):
            geom = Geometry(positions=positions, dipoles=sign * dipoles, symmetry_axis=[0, 0, 1.0])
            system = SiteSystem(2, energies, couplings, geometry=geom)
            record = propagator_record(system, NoFluctuations(), n_traj=1, seed=0)
            for kind in ("abs", "ld", "cd"):
                spectra.append(
                    compute_spectrum(record, system, kind, WINDOW_FS, grid).intensity
                )
        for k in range(3):
            assert np.array_equal(spectra[k], spectra[k + 3])

    def test_missing_geometry_rejected(self, dimer_system):
        record = propagator_record(
            single_site(), NoFluctuations(), n_traj=1, seed=0
        )
        with pytest.raises(InvalidInputError):
            compute_spectrum(record, SiteSystem(1, [0.0], [[0.0]]), "abs")

    def test_short_record_flags_warning(self):
        system = single_site()
        record = propagator_record(system, NoFluctuations(), n_traj=1, seed=0, t_total=200.0)
        fine = np.arange(11990.0, 12010.0, 1.0)
        assert compute_spectrum(record, system, "abs", WINDOW_FS, fine).warning is not None
        coarse = np.arange(11000.0, 13000.0, 150.0)
        assert compute_spectrum(record, system, "abs", WINDOW_FS, coarse).warning is None


class TestWeights:
    def test_ld_weight_parallel_and_perpendicular(self):
        parallel = single_site(dipole=(0.0, 0.0, 2.0))
        assert _weights(parallel, "ld")[0, 0] == pytest.approx(2.0 * 4.0)
        perpendicular = single_site(dipole=(2.0, 0.0, 0.0))
        assert _weights(perpendicular, "ld")[0, 0] == pytest.approx(-4.0)

    def test_cd_weight_uses_chiral_triple_product(self):
        geom = Geometry(
            positions=[[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]],
            dipoles=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            symmetry_axis=[0.0, 0.0, 1.0],
        )
        system = SiteSystem(2, [12000.0, 12100.0], [[0.0, 30.0], [30.0, 0.0]], geometry=geom)
        w = _weights(system, "cd")
        # (R_0 - R_1) . (d_0 x d_1) = (0,0,-3) . (0,0,1) = -3, scaled by each mean energy
        assert w[0, 1] == pytest.approx(12000.0 * -3.0)
        assert w[1, 0] == pytest.approx(12100.0 * -3.0)
        assert w[0, 0] == 0.0


class TestOverlayShift:
    def make_spectrum(self):
        grid = np.arange(12000.0, 13000.0, 10.0)
        intensity = np.exp(-((grid - 12500.0) ** 2) / (2 * 80.0**2))
        return Spectrum(omega_cm1=grid, intensity=intensity, kind="abs")

    def test_zero_shift_is_identity(self):
        spec = self.make_spectrum()
        assert overlay_shift(spec, 0.0) is spec

    def test_shift_and_unshift_roundtrip(self):
        spec = self.make_spectrum()
        back = overlay_shift(overlay_shift(spec, 500.0), -500.0)
        assert np.max(np.abs(back.omega_cm1 - spec.omega_cm1)) < 1e-12
        assert np.array_equal(back.intensity, spec.intensity)

    def test_peak_translates(self):
        spec = self.make_spectrum()
        shifted = overlay_shift(spec, 500.0)
        assert shifted.peak_position() == pytest.approx(12000.0)
        assert shifted.shift_cm1 == 500.0


class TestSpectrumCsv:
    def test_roundtrip_with_overlay(self, tmp_path):
        grid = np.arange(100.0, 200.0, 10.0)
        spec = Spectrum(omega_cm1=grid, intensity=np.linspace(0, 1, grid.size), kind="abs")
        overlay = (np.array([100.0, 200.0]), np.array([5.0, 6.0]))
        path = tmp_path / "spec.csv"
        write_spectrum_csv(spec, path, overlay)
        header = path.read_text().splitlines()[0]
        assert header == "omega_cm1,intensity,exp_intensity"
        x, y = load_xy_csv(path)
        assert np.array_equal(x, grid)
        assert np.array_equal(y, spec.intensity)
