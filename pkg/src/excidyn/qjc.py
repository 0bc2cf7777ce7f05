"""Zero-point quantum-jump correction to the stochastic unitary dynamics.

The classical bath record cannot relax the exciton: its fluctuations heat the
system toward an even distribution.  This correction layers Monte-Carlo
wavefunction jumps between instantaneous eigenstates on top of the unitary
propagation, with downhill-only rates built from a spectral density, so that
zero-point relaxation survives even when the record is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR_CM_FS
from .errors import InvalidInputError, StepSizeError
from .model import ExcitonBasis, PureState, SiteSystem, exciton_basis, mean_hamiltonian
from .noise import FluctuationModel, SpectralDensity
from .propagator import (
    DensityTrace,
    EnsembleResult,
    SimConfig,
    step_unitary,
    _run_engine,
    _ZeroPointJumps,
)

#: gaps below this (cm^-1) count as degenerate and carry no jump rate
DEGENERATE_GAP_CM1 = _ZeroPointJumps.DEGENERATE_GAP_CM1


@dataclass(frozen=True)
class RateTable:
    """Downhill relaxation rates between instantaneous eigenstates.

    rates[M, N] is the M -> N rate in fs^-1; entries are nonzero only for
    E_M > E_N (the zero-point bath can only absorb energy).
    """

    basis: ExcitonBasis
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        n = self.basis.n_sites
        if rates.shape != (n, n):
            raise InvalidInputError(f"rates must have shape ({n}, {n})")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise InvalidInputError("rates must be finite and nonnegative")
        uphill = (self.basis.gaps() <= 0) & (rates > 0)
        if np.any(uphill):
            raise InvalidInputError("rate table contains an uphill (E_M <= E_N) entry")

    def total_outgoing(self) -> np.ndarray:
        """Total escape rate from each eigenstate, fs^-1."""
        return self.rates.sum(axis=1)


def zp_rates(basis: ExcitonBasis, sd: SpectralDensity) -> RateTable:
    """Secular-Redfield downhill rates for one eigenbasis snapshot.

    gamma(w_MN) = 2 pi J(w_MN) sum_m |c_m(M)|^2 |c_m(N)|^2 / hbar, with J = 0
    for w_MN <= 0 and for gaps below the degeneracy cutoff (0.1 cm^-1).
    """
    gaps = basis.gaps()
    j = sd.evaluate(gaps)
    j = np.where(gaps >= DEGENERATE_GAP_CM1, j, 0.0)
    prob = np.abs(basis.coefficients) ** 2
    overlap = np.einsum("mM,mN->MN", prob, prob)
    rates = (2.0 * np.pi / HBAR_CM_FS) * j * overlap
    return RateTable(basis=basis, rates=rates)


def mcwf_step(psi: PureState, h, rates: RateTable, dt: float, rng) -> PureState:
    """One first-order Monte-Carlo wavefunction step.

    With probability dt * gamma(w_MN) * |<M|psi>|^2 the amplitude on |M>
    collapses into |N> (a projective jump in the instantaneous eigenbasis);
    otherwise the state takes the unitary step and each eigencomponent is
    damped by exp(-dt * Gamma_M / 2), then renormalized.  The rate table must
    have been built from the eigenbasis of h.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be > 0")
    if rates.rates.max(initial=0.0) == 0.0:
        return step_unitary(psi, h, dt)
    basis = rates.basis
    amps = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi, dtype=complex)
    c = basis.coefficients.conj().T @ amps

    p_channel = dt * rates.rates * (np.abs(c) ** 2)[:, None]
    p_total = float(p_channel.sum())
    if p_total > _ZeroPointJumps.MAX_STEP_PROBABILITY:
        raise StepSizeError(
            f"per-step jump probability {p_total:.3g} exceeds "
            f"{_ZeroPointJumps.MAX_STEP_PROBABILITY}; reduce dt"
        )
    if rng.random() < p_total:
        flat = p_channel.reshape(-1)
        channel = int(np.searchsorted(np.cumsum(flat), rng.random() * p_total, side="right"))
        channel = min(channel, flat.size - 1)
        src, dst = divmod(channel, basis.n_sites)
        amp = c[src]
        c = np.zeros_like(c)
        c[dst] = amp / abs(amp) if abs(amp) > 0 else 1.0
    else:
        phases = np.exp(-1j * basis.energies * dt / HBAR_CM_FS)
        damping = np.exp(-0.5 * dt * rates.total_outgoing())
        c = c * phases * damping
        c = c / np.linalg.norm(c)
    out = basis.coefficients @ c
    return PureState(out) if isinstance(psi, PureState) else out


def run_ensemble_qjc(
    system: SiteSystem,
    fluct: FluctuationModel,
    sd: SpectralDensity,
    config: SimConfig,
) -> DensityTrace:
    """Ensemble of MCWF trajectories over the stochastic Hamiltonian.

    Rates are rebuilt every integration step from the instantaneous eigenbasis
    (the basis drifts with the bath record).  In the fluctuation-free limit
    the eigenbasis populations obey the downhill Pauli master equation and
    coherences decay at half the channel rate.
    """
    if config.method != "QJC":
        raise InvalidInputError(f"run_ensemble_qjc requires method 'QJC', got {config.method!r}")
    if config.record_propagator:
        raise InvalidInputError(
            "record_propagator is only meaningful for the purely unitary MD method"
        )
    result: EnsembleResult = _run_engine(
        system, fluct, config, jumps=_ZeroPointJumps(sd)
    )
    result.trace.validate()
    return result.trace


def static_rate_table(system: SiteSystem, sd: SpectralDensity) -> RateTable:
    """Rates in the eigenbasis of the mean Hamiltonian (fluctuation-free)."""
    return zp_rates(exciton_basis(mean_hamiltonian(system)), sd)
