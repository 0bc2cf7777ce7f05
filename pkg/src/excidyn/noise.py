"""Classical bath records and their statistics.

This module owns everything that produces or characterizes the fluctuating
site energies driving the effective Hamiltonian: ingestion of recorded
trajectories, uniform window sampling, AR(1) surrogates, cross-site
decorrelation, correlation-function estimation, and the reweighted cosine
transform to a spectral density.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .constants import HBAR_CM_FS
from .errors import InvalidInputError
from .model import EnergyTrajectory, SiteSystem, ThermalParams

MAX_MISSING_FRACTION = 0.10


# ---------------------------------------------------------------------------
# Fluctuation models
# ---------------------------------------------------------------------------

def _per_site(values, n_sites: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_sites, float(arr))
    if arr.shape != (n_sites,):
        raise InvalidInputError(f"{name} must be a scalar or length-{n_sites} vector")
    return arr


@dataclass(frozen=True)
class NoFluctuations:
    """Constant site energies: H(t) is the mean Hamiltonian for every step."""

    is_static = True

    def step_energies(self, system: SiteSystem, n_steps: int, dt: float, rng) -> np.ndarray:
        return np.tile(system.mean_energies, (n_steps, 1))


@dataclass(frozen=True)
class StaticDisorder:
    """Frozen Gaussian offsets: each trajectory draws one offset per site."""

    sigma_cm1: float | np.ndarray

    is_static = True

    def step_energies(self, system: SiteSystem, n_steps: int, dt: float, rng) -> np.ndarray:
        sigma = _per_site(self.sigma_cm1, system.n_sites, "sigma_cm1")
        if np.any(sigma < 0):
            raise InvalidInputError("sigma_cm1 must be >= 0")
        offsets = rng.standard_normal(system.n_sites) * sigma
        return np.tile(system.mean_energies + offsets, (n_steps, 1))


@dataclass(frozen=True)
class AR1Fluctuations:
    """Stationary Gaussian AR(1) fluctuations around the mean site energies.

    sigma_cm1 and tau_fs may be scalars or per-site vectors.  dt_fs is the
    generation grid; when it differs from the integration step the generated
    series is linearly interpolated, exactly like a recorded trajectory.
    """

    sigma_cm1: float | np.ndarray
    tau_fs: float | np.ndarray
    dt_fs: float

    is_static = False

    def __post_init__(self):
        if not self.dt_fs > 0:
            raise InvalidInputError("dt_fs must be > 0")

    def step_energies(self, system: SiteSystem, n_steps: int, dt: float, rng) -> np.ndarray:
        n = system.n_sites
        sigma = _per_site(self.sigma_cm1, n, "sigma_cm1")
        tau = _per_site(self.tau_fs, n, "tau_fs")
        if np.any(sigma < 0):
            raise InvalidInputError("sigma_cm1 must be >= 0")
        if np.any(tau <= 0):
            raise InvalidInputError("tau_fs must be > 0")
        if abs(self.dt_fs - dt) <= 1e-12 * max(dt, self.dt_fs):
            fluct = _ar1_block(rng, sigma, tau, dt, n_steps)
        else:
            span = (n_steps - 1) * dt
            n_native = int(np.ceil(span / self.dt_fs - 1e-12)) + 2
            native = _ar1_block(rng, sigma, tau, self.dt_fs, n_native)
            t_native = np.arange(n_native) * self.dt_fs
            t_steps = np.arange(n_steps) * dt
            fluct = np.empty((n_steps, n))
            for m in range(n):
                fluct[:, m] = np.interp(t_steps, t_native, native[:, m])
        return system.mean_energies[None, :] + fluct


@dataclass(frozen=True)
class RecordedFluctuations:
    """Windows sampled uniformly from a recorded site-energy trajectory.

    Each trajectory of the ensemble draws an independent contiguous window of
    window_fs and interpolates it onto the integration grid.
    """

    trajectory: EnergyTrajectory
    window_fs: float

    is_static = False

    def __post_init__(self):
        if not self.window_fs > 0:
            raise InvalidInputError("window_fs must be > 0")
        if self.window_fs > self.trajectory.duration_fs:
            raise InvalidInputError(
                f"window_fs = {self.window_fs} exceeds the recorded duration "
                f"{self.trajectory.duration_fs} fs"
            )

    def step_energies(self, system: SiteSystem, n_steps: int, dt: float, rng) -> np.ndarray:
        if self.trajectory.n_sites != system.n_sites:
            raise InvalidInputError("recorded trajectory does not match n_sites")
        span = (n_steps - 1) * dt
        if self.window_fs < span - 1e-9:
            raise InvalidInputError(
                f"fluctuation source window ({self.window_fs} fs) is shorter than the "
                f"propagation span ({span} fs)"
            )
        window = sample_window(self.trajectory, self.window_fs, rng)
        t_steps = np.arange(n_steps) * dt
        out = np.empty((n_steps, system.n_sites))
        for m in range(system.n_sites):
            out[:, m] = np.interp(t_steps, window.times_fs, window.frames[:, m])
        return out


FluctuationModel = NoFluctuations | StaticDisorder | AR1Fluctuations | RecordedFluctuations


# ---------------------------------------------------------------------------
# AR(1) generation
# ---------------------------------------------------------------------------

def _ar1_block(rng, sigma: np.ndarray, tau: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Exact stationary AR(1) update for a block of independent sites.

    x_{k+1} = phi x_k + sigma sqrt(1 - phi^2) xi_k with phi = exp(-dt/tau) and
    x_0 ~ N(0, sigma^2), so the marginal is exactly N(0, sigma^2) at any dt.
    Draw order is fixed (x_0 row first, then innovations) so results depend
    only on the rng state, not on block partitioning.
    """
    n = sigma.shape[0]
    phi = np.exp(-dt / tau)
    x0 = rng.standard_normal(n) * sigma
    if n_steps == 1:
        return x0[None, :]
    xi = rng.standard_normal((n_steps - 1, n))
    out = np.empty((n_steps, n))
    for m in range(n):
        drive = np.empty(n_steps)
        drive[0] = x0[m]
        drive[1:] = sigma[m] * np.sqrt(1.0 - phi[m] ** 2) * xi[:, m]
        out[:, m] = lfilter([1.0], [1.0, -phi[m]], drive)
    return out


def ar1_generate(sigma: float, tau: float, dt: float, n_steps: int, seed: int) -> np.ndarray:
    """Generate one zero-mean stationary Gaussian AR(1) series (cm^-1).

    The autocorrelation is exactly sigma^2 exp(-k dt / tau) at lag k.
    Bit-reproducible for a fixed seed.
    """
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    if not tau > 0:
        raise InvalidInputError("tau must be > 0")
    if not dt > 0:
        raise InvalidInputError("dt must be > 0")
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    if sigma == 0.0:
        return np.zeros(n_steps)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return _ar1_block(rng, np.array([sigma]), np.array([tau]), dt, n_steps)[:, 0]


# ---------------------------------------------------------------------------
# Window sampling and decorrelation
# ---------------------------------------------------------------------------

def sample_window(traj: EnergyTrajectory, window_length: float, rng) -> EnergyTrajectory:
    """Extract a contiguous window with a uniformly random start frame."""
    if window_length > traj.duration_fs + 1e-9:
        raise InvalidInputError(
            f"window of {window_length} fs exceeds trajectory duration {traj.duration_fs} fs"
        )
    n_window = int(np.ceil(window_length / traj.dt_frame - 1e-9)) + 1
    n_window = min(n_window, traj.n_frames)
    start = int(rng.integers(0, traj.n_frames - n_window + 1))
    return EnergyTrajectory(
        dt_frame=traj.dt_frame,
        frames=traj.frames[start : start + n_window],
        label=traj.label,
    )


def decorrelate(traj: EnergyTrajectory, seed: int) -> EnergyTrajectory:
    """Destroy cross-site correlations while preserving each site's statistics.

    Every site column after the first is cyclically shifted by an independent
    nonzero random offset.  The per-site marginal distribution and (cyclic)
    autocorrelation are preserved exactly; equal-time cross-correlations are
    scrambled.
    """
    if traj.n_sites < 2:
        return traj
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    frames = np.array(traj.frames)
    for m in range(1, traj.n_sites):
        offset = int(rng.integers(1, traj.n_frames))
        frames[:, m] = np.roll(frames[:, m], offset)
    return EnergyTrajectory(dt_frame=traj.dt_frame, frames=frames, label=traj.label)


# ---------------------------------------------------------------------------
# Correlation functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationFunction:
    """Lagged bath correlator C(k dt_lag) in cm^-2 for one site pair."""

    dt_lag: float
    values: np.ndarray
    site_pair: tuple[int, int]
    n_samples: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        m, n = self.site_pair
        if m == n and values[0] < -1e-12 * max(1.0, float(np.max(np.abs(values)))):
            raise InvalidInputError("autocorrelation must be nonnegative at lag 0")

    @property
    def is_autocorrelation(self) -> bool:
        return self.site_pair[0] == self.site_pair[1]

    @property
    def lags_fs(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt_lag


def correlation(traj: EnergyTrajectory, m: int, n: int, max_lag: float) -> CorrelationFunction:
    """Biased correlator estimate C(k dt) = (1/N) sum_j de_m(t_j + k dt) de_n(t_j).

    Per-site means are removed before correlating.  The lag-0 autocorrelation
    therefore equals the (biased) sample variance.
    """
    if not (0 <= m < traj.n_sites and 0 <= n < traj.n_sites):
        raise InvalidInputError(f"site indices ({m}, {n}) out of range")
    if max_lag < 0:
        raise InvalidInputError("max_lag must be >= 0")
    if max_lag >= traj.duration_fs:
        raise InvalidInputError(
            f"max_lag = {max_lag} fs must be below the trajectory duration "
            f"{traj.duration_fs} fs"
        )
    n_lags = int(np.floor(max_lag / traj.dt_frame + 1e-9)) + 1
    a = traj.frames[:, m] - np.mean(traj.frames[:, m])
    b = traj.frames[:, n] - np.mean(traj.frames[:, n])
    n_frames = traj.n_frames
    values = np.empty(n_lags)
    for k in range(n_lags):
        values[k] = np.dot(a[k:], b[: n_frames - k]) / n_frames
    return CorrelationFunction(
        dt_lag=traj.dt_frame, values=values, site_pair=(m, n), n_samples=n_frames
    )


# ---------------------------------------------------------------------------
# Spectral densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DrudeLorentzDensity:
    """Overdamped Brownian-oscillator form J(w) = 2 lambda g w / (w^2 + g^2).

    reorg_cm1 is the reorganization energy lambda; gamma_cutoff_fs is the
    cutoff rate in fs^-1 (inverse cutoff time).  The defaults are
    user-overridable placeholders, not fitted values.
    """

    reorg_cm1: float = 35.0
    gamma_cutoff_fs: float = 0.02

    def __post_init__(self):
        if self.reorg_cm1 < 0:
            raise InvalidInputError("reorg_cm1 must be >= 0")
        if not self.gamma_cutoff_fs > 0:
            raise InvalidInputError("gamma_cutoff_fs must be > 0")

    @property
    def cutoff_cm1(self) -> float:
        return self.gamma_cutoff_fs * HBAR_CM_FS

    def evaluate(self, omega_cm1) -> np.ndarray:
        omega = np.asarray(omega_cm1, dtype=float)
        g = self.cutoff_cm1
        with np.errstate(invalid="ignore"):
            j = 2.0 * self.reorg_cm1 * g * omega / (omega**2 + g**2)
        return np.where(omega > 0.0, j, 0.0)


@dataclass(frozen=True)
class TabulatedDensity:
    """J(w) tabulated on a positive frequency grid; zero for w <= 0."""

    omega_cm1: np.ndarray
    j_cm1: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega_cm1, dtype=float)
        j = np.asarray(self.j_cm1, dtype=float)
        omega.setflags(write=False)
        j.setflags(write=False)
        object.__setattr__(self, "omega_cm1", omega)
        object.__setattr__(self, "j_cm1", j)
        if omega.ndim != 1 or omega.shape != j.shape:
            raise InvalidInputError("omega_cm1 and j_cm1 must be matching vectors")
        if np.any(np.diff(omega) <= 0):
            raise InvalidInputError("omega grid must be strictly increasing")
        if np.any(j[omega > 0] < 0):
            raise InvalidInputError("tabulated J(w) must be nonnegative for w > 0")

    def evaluate(self, omega_cm1) -> np.ndarray:
        omega = np.asarray(omega_cm1, dtype=float)
        grid = self.omega_cm1
        vals = self.j_cm1
        if grid[0] > 0.0:
            # interpolate through the physical J(0) = 0 anchor below the grid
            grid = np.concatenate(([0.0], grid))
            vals = np.concatenate(([0.0], vals))
        j = np.interp(omega, grid, vals, left=0.0, right=0.0)
        return np.where(omega > 0.0, j, 0.0)


SpectralDensity = DrudeLorentzDensity | TabulatedDensity


def drude_lorentz_eval(sd: SpectralDensity, omega: float) -> float:
    """Evaluate a Drude-Lorentz spectral density at one frequency (cm^-1)."""
    if not isinstance(sd, DrudeLorentzDensity):
        raise InvalidInputError("drude_lorentz_eval requires a Drude-Lorentz density")
    return float(sd.evaluate(omega))


def cosine_transform(
    corr: CorrelationFunction, omega_grid, window_fs: float | None = None
) -> np.ndarray:
    """Apodized cosine transform T(w) = int_0^L C(t) cos(w t / hbar) A(t) dt.

    A(t) = exp(-t^2 / 2 T_w^2) suppresses truncation ringing; T_w defaults to
    half the available lag range.  Returns cm^-2 fs on the supplied grid.
    """
    omega = np.asarray(omega_grid, dtype=float)
    t = corr.lags_fs
    if window_fs is None:
        window_fs = 0.5 * t[-1] if t[-1] > 0 else 1.0
    if not window_fs > 0:
        raise InvalidInputError("window_fs must be > 0")
    apodized = corr.values * np.exp(-(t**2) / (2.0 * window_fs**2))
    phase = np.outer(omega / HBAR_CM_FS, t)
    return np.trapezoid(np.cos(phase) * apodized[None, :], t, axis=1)


def spectral_density(
    corr: CorrelationFunction,
    thermal: ThermalParams,
    omega_grid,
    window_fs: float | None = None,
) -> TabulatedDensity:
    """Reweighted cosine transform of a bath autocorrelation function.

    J(w) = (2 / pi hbar) tanh(beta w / 2) int_0^inf C(t) cos(w t) dt, evaluated
    by trapezoidal quadrature over the available lags with a half-Gaussian
    apodization window.  Only autocorrelations are meaningful here.
    """
    if not corr.is_autocorrelation:
        raise InvalidInputError("spectral_density requires an autocorrelation (m == n)")
    omega = np.asarray(omega_grid, dtype=float)
    transform = cosine_transform(corr, omega, window_fs)
    weight = np.tanh(0.5 * thermal.beta * omega)
    j = (2.0 / (np.pi * HBAR_CM_FS)) * weight * transform
    j = np.where(omega > 0.0, j, 0.0)
    return TabulatedDensity(omega_cm1=omega, j_cm1=j)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def write_trajectory_csv(traj: EnergyTrajectory, path) -> None:
    """Write `t_fs,site1_cm1,...,siteN_cm1` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_fs"] + [f"site{m + 1}_cm1" for m in range(traj.n_sites)])
        for k in range(traj.n_frames):
            writer.writerow(
                [repr(float(k * traj.dt_frame))] + [repr(float(v)) for v in traj.frames[k]]
            )


def load_trajectory_csv(path, label: str | None = None) -> EnergyTrajectory:
    """Read a site-energy trajectory CSV, repairing missing values.

    Empty fields mark excitation energies that failed to converge; they are
    filled by linear interpolation in time.  More than 10% missing on any one
    site is a hard error.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty trajectory file") from None
        if not header or header[0] != "t_fs":
            raise InvalidInputError(f"{path}: first column must be t_fs")
        n_sites = len(header) - 1
        if n_sites < 1:
            raise InvalidInputError(f"{path}: no site columns found")
        times = []
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != n_sites + 1:
                raise InvalidInputError(f"{path}: row with {len(row)} fields, expected {n_sites + 1}")
            times.append(float(row[0]))
            rows.append([float(v) if v.strip() != "" else np.nan for v in row[1:]])
    times = np.asarray(times)
    frames = np.asarray(rows)
    if times.shape[0] < 2:
        raise InvalidInputError(f"{path}: trajectory needs at least 2 frames")
    steps = np.diff(times)
    dt = steps[0]
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise InvalidInputError(f"{path}: time grid must be uniform")
    for m in range(n_sites):
        col = frames[:, m]
        missing = np.isnan(col)
        if not np.any(missing):
            continue
        fraction = np.mean(missing)
        if fraction > MAX_MISSING_FRACTION:
            raise InvalidInputError(
                f"{path}: site {m + 1} has {fraction:.1%} missing values (> 10%)"
            )
        valid = ~missing
        frames[missing, m] = np.interp(times[missing], times[valid], col[valid])
    return EnergyTrajectory(dt_frame=float(dt), frames=frames, label=label or str(path))


def write_spectral_density_csv(sd: TabulatedDensity, path) -> None:
    """Write `omega_cm1,J_cm1` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega_cm1", "J_cm1"])
        for w, j in zip(sd.omega_cm1, sd.j_cm1):
            writer.writerow([repr(float(w)), repr(float(j))])


def load_spectral_density_csv(path) -> TabulatedDensity:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["omega_cm1", "J_cm1"]:
            raise InvalidInputError(f"{path}: expected header omega_cm1,J_cm1")
        omega, j = [], []
        for row in reader:
            if not row:
                continue
            omega.append(float(row[0]))
            j.append(float(row[1]))
    return TabulatedDensity(omega_cm1=np.asarray(omega), j_cm1=np.asarray(j))
