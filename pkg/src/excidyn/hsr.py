"""Haken-Strobl-Reineker pure-dephasing comparison dynamics.

Site-local dephasing rates follow from the variance and correlation time of
each site's energy fluctuations; the density matrix then evolves under the
mean Hamiltonian plus a pure-dephasing Lindblad generator with site
projectors, which damps every off-diagonal element at (gamma_m + gamma_n)/2
and drives coupled systems to the equal classical mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR_CM_FS
from .errors import IntegrationError, InvalidInputError
from .model import DensityMatrix, EnergyTrajectory
from .propagator import DensityTrace, TraceMeta

#: largest internal RK4 step (fs)
MAX_RK4_STEP_FS = 0.5
#: allowed drift of tr(rho) before the integration is declared unstable
TRACE_DRIFT_TOL = 1e-6


def dephasing_width_cm1(sigma: float, tau: float) -> float:
    """Pure-dephasing rate as an energy width: 2 sigma^2 tau / hbar (cm^-1)."""
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    if not tau > 0:
        raise InvalidInputError("tau must be > 0")
    return 2.0 * sigma**2 * tau / HBAR_CM_FS


def dephasing_rate(sigma: float, tau: float) -> float:
    """Pure-dephasing rate in fs^-1: 2 sigma^2 tau / hbar^2.

    sigma is the site-energy standard deviation (cm^-1) and tau the
    autocorrelation decay time (fs); one factor of hbar converts the
    energy-width form to an inverse time.
    """
    return dephasing_width_cm1(sigma, tau) / HBAR_CM_FS


@dataclass(frozen=True)
class DephasingRates:
    """Per-site dephasing rates gamma_m (fs^-1) plus their provenance."""

    rates_fs: np.ndarray
    sigma_cm1: np.ndarray | None = None
    tau_fs: np.ndarray | None = None
    temperature_K: float | None = None

    def __post_init__(self):
        rates = np.asarray(self.rates_fs, dtype=float)
        rates.setflags(write=False)
        object.__setattr__(self, "rates_fs", rates)
        if rates.ndim != 1:
            raise InvalidInputError("rates_fs must be a per-site vector")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise InvalidInputError("dephasing rates must be finite and >= 0")

    @classmethod
    def from_statistics(cls, sigma, tau, temperature_K: float | None = None) -> "DephasingRates":
        """Build rates from per-site sigma (cm^-1) and a global or per-site tau."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        tau_arr = np.broadcast_to(np.asarray(tau, dtype=float), sigma.shape).copy()
        rates = np.array([dephasing_rate(s, t) for s, t in zip(sigma, tau_arr)])
        return cls(rates_fs=rates, sigma_cm1=sigma, tau_fs=tau_arr, temperature_K=temperature_K)

    @property
    def n_sites(self) -> int:
        return self.rates_fs.shape[0]


def fit_correlation_time(traj: EnergyTrajectory, m: int, max_lag_fs: float = 10.0) -> float:
    """Exponential-decay time of a site's autocorrelation from a log-linear fit."""
    from .noise import correlation

    corr = correlation(traj, m, m, max_lag_fs)
    values = corr.values
    positive = values > 0
    if values[0] <= 0 or np.sum(positive) < 2:
        raise InvalidInputError(f"site {m}: autocorrelation decays too fast to fit")
    upto = int(np.argmin(positive)) if not positive.all() else values.shape[0]
    lags = corr.lags_fs[:upto]
    slope = np.polyfit(lags, np.log(values[:upto]), 1)[0]
    if slope >= 0:
        raise InvalidInputError(f"site {m}: autocorrelation does not decay")
    return -1.0 / slope


def rates_from_trajectory(
    traj: EnergyTrajectory, tau_fs: float | None = None, temperature_K: float | None = None
) -> DephasingRates:
    """Per-site rates from a trajectory's variance and fitted (or given) tau."""
    sigma = np.std(traj.frames, axis=0)
    if tau_fs is not None:
        tau = np.full(traj.n_sites, float(tau_fs))
    else:
        tau = np.array([fit_correlation_time(traj, m) for m in range(traj.n_sites)])
    return DephasingRates.from_statistics(sigma, tau, temperature_K=temperature_K)


def hsr_propagate(rho0: DensityMatrix, h_mean, rates: DephasingRates, t_grid) -> DensityTrace:
    """Integrate the pure-dephasing master equation on the given time grid.

    d rho / dt = -(i/hbar)[H, rho] - Gamma o rho with Gamma_mn =
    (gamma_m + gamma_n)/2 off the diagonal, integrated by fixed-step RK4 with
    internal steps no longer than 0.5 fs.  Trace drift beyond 1e-6 aborts.
    """
    h = np.asarray(h_mean, dtype=complex)
    n = h.shape[0]
    if h.shape != (n, n) or np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-10:
        raise InvalidInputError("H_mean must be a Hermitian square matrix")
    if rates.n_sites != n:
        raise InvalidInputError("rates dimension does not match the Hamiltonian")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.shape[0] < 1 or np.any(np.diff(t_grid) <= 0):
        raise InvalidInputError("t_grid must be strictly increasing")
    if abs(t_grid[0]) > 1e-12:
        raise InvalidInputError("t_grid must start at t = 0")

    gamma = rates.rates_fs
    damping = 0.5 * (gamma[:, None] + gamma[None, :])
    np.fill_diagonal(damping, 0.0)

    def rhs(rho):
        return -1j / HBAR_CM_FS * (h @ rho - rho @ h) - damping * rho

    rho = np.array(rho0.elements, dtype=complex)
    out = np.empty((t_grid.shape[0], n, n), dtype=complex)
    out[0] = rho
    for i in range(1, t_grid.shape[0]):
        span = t_grid[i] - t_grid[i - 1]
        n_sub = max(1, int(np.ceil(span / MAX_RK4_STEP_FS - 1e-12)))
        dt = span / n_sub
        for _ in range(n_sub):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * dt * k1)
            k3 = rhs(rho + 0.5 * dt * k2)
            k4 = rhs(rho + dt * k3)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        drift = abs(np.trace(rho) - 1.0)
        if not drift <= TRACE_DRIFT_TOL:  # catches NaN from an unstable step
            raise IntegrationError(
                f"trace drifted by {drift!r} at t = {t_grid[i]} fs; reduce the step"
            )
        out[i] = rho
    return DensityTrace(
        times=t_grid,
        rhos=out,
        meta=TraceMeta(
            method="HSR",
            seed=0,
            n_traj=1,
            dt_fs=float(t_grid[1] - t_grid[0]) if t_grid.shape[0] > 1 else 0.0,
            temperature_K=rates.temperature_K,
        ),
    )
