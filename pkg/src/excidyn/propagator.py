"""Stochastic-Hamiltonian propagation and ensemble averaging.

Each trajectory integrates the time-dependent Schrodinger equation under a
piecewise-constant Hamiltonian whose diagonal is driven by a classical bath
record; the reduced density matrix is the average of the resulting pure-state
projectors over the ensemble.  Trajectories are independent work units with
per-trajectory seeds derived from (master seed, trajectory index), executed
in fixed-size blocks whose partial sums are reduced in deterministic order,
so results are bit-identical at any worker count.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import HBAR_CM_FS
from .errors import InvalidInputError, StepSizeError
from .model import DensityMatrix, PureState, SiteSystem, build_hamiltonian
from .noise import FluctuationModel

# Trajectories are processed in blocks of this size regardless of worker
# count; the reduction order over blocks is fixed, which keeps ensemble
# results bit-reproducible under any degree of parallelism.
BLOCK_SIZE = 256

METHODS = ("MD", "QJC", "HSR")


@dataclass(frozen=True)
class SimConfig:
    """Run parameters shared by the ensemble methods.

    dt/t_total in fs; initial_state is a site index, a PureState, or a
    DensityMatrix (mixed states are split into eigencomponents).  workers
    defaults to the available parallelism.
    """

    dt: float
    t_total: float
    n_traj: int
    seed: int
    method: str = "MD"
    initial_state: object = 0
    record_propagator: bool = False
    workers: int | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError("dt must be > 0")
        if self.t_total < self.dt:
            raise InvalidInputError("t_total must be >= dt")
        if self.n_traj < 1:
            raise InvalidInputError("n_traj must be >= 1")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise InvalidInputError("seed must be a nonnegative integer")
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        if self.workers is not None and self.workers < 1:
            raise InvalidInputError("workers must be >= 1 when given")

    @property
    def n_steps(self) -> int:
        ratio = self.t_total / self.dt
        nearest = round(ratio)
        if abs(ratio - nearest) < 1e-9 * max(1.0, abs(ratio)):
            return int(nearest)
        return int(np.floor(ratio))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class TraceMeta:
    method: str
    seed: int
    n_traj: int
    dt_fs: float
    temperature_K: float | None = None


@dataclass
class DensityTrace:
    """Ensemble-averaged reduced density matrix on a uniform time grid."""

    times: np.ndarray
    rhos: np.ndarray
    meta: TraceMeta

    populations: np.ndarray = field(init=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rhos = np.asarray(self.rhos, dtype=complex)
        self.times.setflags(write=False)
        self.rhos.setflags(write=False)
        self.populations = np.real(self.rhos.diagonal(axis1=1, axis2=2))
        self.populations.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return self.rhos.shape[1]

    def population(self, m: int) -> np.ndarray:
        return self.populations[:, m]

    def rho_element(self, m: int, n: int) -> np.ndarray:
        return self.rhos[:, m, n]

    def coherence(self, m: int, n: int) -> np.ndarray:
        """2|rho_mn(t)|, the pairwise coherence observable."""
        if m == n:
            raise InvalidInputError("coherence requires two distinct sites")
        return 2.0 * np.abs(self.rhos[:, m, n])

    def density_matrix(self, index: int) -> DensityMatrix:
        return DensityMatrix(self.rhos[index])

    def purity(self) -> np.ndarray:
        return np.real(np.einsum("tij,tji->t", self.rhos, self.rhos))

    def validate(self) -> None:
        """Check the physicality invariants at every output time."""
        herm = np.max(np.abs(self.rhos - self.rhos.conj().transpose(0, 2, 1)), initial=0.0)
        if herm > 1e-12:
            raise InvalidInputError(f"trace not Hermitian: max deviation {herm!r}")
        traces = np.einsum("tii->t", self.rhos)
        if np.max(np.abs(traces - 1.0), initial=0.0) > 1e-10:
            raise InvalidInputError("trace of rho drifts from 1 beyond 1e-10")
        min_eig = float(np.min(np.linalg.eigvalsh(self.rhos)))
        if min_eig < -1e-8:
            raise InvalidInputError(f"rho has negative eigenvalue {min_eig!r}")
        diag_imag = np.max(np.abs(np.imag(self.rhos.diagonal(axis1=1, axis2=2))), initial=0.0)
        if diag_imag > 1e-12:
            raise InvalidInputError("populations are not real within 1e-12")


@dataclass
class PropagatorRecord:
    """Ensemble-averaged propagator <U_mn(t, 0)> in the site basis."""

    times: np.ndarray
    mean_u: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean_u = np.asarray(self.mean_u, dtype=complex)
        n = self.mean_u.shape[1]
        if np.max(np.abs(self.mean_u[0] - np.eye(n)), initial=0.0) > 1e-12:
            raise InvalidInputError("<U(0,0)> must be the identity")
        self.times.setflags(write=False)
        self.mean_u.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return self.mean_u.shape[1]


@dataclass(frozen=True)
class TrajectoryResult:
    """Single-trajectory history: states and accumulated propagators."""

    times: np.ndarray
    states: np.ndarray
    propagators: np.ndarray

    def state(self, index: int) -> PureState:
        return PureState(self.states[index])


@dataclass(frozen=True)
class EnsembleResult:
    trace: DensityTrace
    propagator: PropagatorRecord | None = None


def step_unitary(psi, h, dt: float):
    """Advance a state by exp(-i H dt / hbar) via eigendecomposition of H.

    The propagator is exactly unitary, so the norm is preserved to rounding.
    Accepts and returns either a PureState or a bare amplitude vector.
    """
    h = np.asarray(h)
    if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-10:
        raise InvalidInputError("Hamiltonian must be Hermitian within 1e-10")
    amps = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi, dtype=complex)
    if amps.shape[0] != h.shape[0]:
        raise InvalidInputError("state and Hamiltonian dimensions differ")
    w, v = np.linalg.eigh(h)
    out = v @ (np.exp(-1j * w * dt / HBAR_CM_FS) * (v.conj().T @ amps))
    return PureState(out) if isinstance(psi, PureState) else out


def _initial_components(initial_state, n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """Split an initial state into pure components with weights.

    Returns (weights (K,), states (K, n)).  Mixed density matrices are
    eigendecomposed; components below 1e-12 weight are dropped.
    """
    if isinstance(initial_state, (int, np.integer)):
        return np.array([1.0]), PureState.site(n_sites, int(initial_state)).amplitudes[None, :]
    if isinstance(initial_state, PureState):
        if initial_state.n_sites != n_sites:
            raise InvalidInputError("initial state dimension does not match the system")
        return np.array([1.0]), initial_state.amplitudes[None, :]
    if isinstance(initial_state, DensityMatrix):
        rho0 = initial_state.elements
    else:
        rho0 = DensityMatrix(np.asarray(initial_state, dtype=complex)).elements
    if rho0.shape[0] != n_sites:
        raise InvalidInputError("initial density matrix dimension does not match the system")
    w, v = np.linalg.eigh(rho0)
    keep = w > 1e-12
    weights = w[keep]
    states = v[:, keep].T
    return weights / np.sum(weights), states


def _initial_density(weights: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.einsum("k,ki,kj->ij", weights, states, states.conj())


class _ZeroPointJumps:
    """Per-step zero-point relaxation context used by the QJC method.

    Holds the spectral density and turns an instantaneous eigendecomposition
    into downhill jump rates; the propagation kernel consults it every step.
    """

    #: gaps below this (cm^-1) are treated as exactly degenerate: no jump
    DEGENERATE_GAP_CM1 = 0.1
    #: hard ceiling on the per-step total jump probability
    MAX_STEP_PROBABILITY = 0.1

    def __init__(self, sd):
        self.sd = sd

    def rates(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Downhill rates gamma[..., M, N] (fs^-1) for eigh output (w, v)."""
        gaps = w[..., :, None] - w[..., None, :]
        j = self.sd.evaluate(gaps)
        j = np.where(gaps >= self.DEGENERATE_GAP_CM1, j, 0.0)
        prob = np.abs(v) ** 2
        overlap = np.einsum("...mM,...mN->...MN", prob, prob)
        return (2.0 * np.pi / HBAR_CM_FS) * j * overlap


def _apply_jumps(c: np.ndarray, rates: np.ndarray, dt: float, uniforms: np.ndarray) -> np.ndarray:
    """One first-order MCWF step in instantaneous eigen-coordinates.

    c: (B, K, n) eigenbasis amplitudes (unitary phases not yet applied);
    rates: (B, n, n); uniforms: (B, K, 2) per-walker draws.  Returns a boolean
    (B, K) mask of walkers that jumped, mutating c in place for those walkers.
    The remaining walkers must still be evolved and damped by the caller.
    """
    n = c.shape[-1]
    p_chan = dt * rates[:, None, :, :] * (np.abs(c) ** 2)[:, :, :, None]
    p_tot = p_chan.sum(axis=(2, 3))
    max_p = float(p_tot.max(initial=0.0))
    if max_p > _ZeroPointJumps.MAX_STEP_PROBABILITY:
        raise StepSizeError(
            f"per-step jump probability {max_p:.3g} exceeds "
            f"{_ZeroPointJumps.MAX_STEP_PROBABILITY}; reduce dt"
        )
    jumped = uniforms[:, :, 0] < p_tot
    for b, k in np.argwhere(jumped):
        flat = p_chan[b, k].reshape(-1)
        target = uniforms[b, k, 1] * p_tot[b, k]
        channel = int(np.searchsorted(np.cumsum(flat), target, side="right"))
        channel = min(channel, flat.size - 1)
        src, dst = divmod(channel, n)
        amp = c[b, k, src]
        c[b, k, :] = 0.0
        c[b, k, dst] = amp / abs(amp) if abs(amp) > 0 else 1.0
    return jumped


def _propagate_block(
    system: SiteSystem,
    fluct: FluctuationModel,
    config: SimConfig,
    indices: range,
    weights: np.ndarray,
    states0: np.ndarray,
    jumps: _ZeroPointJumps | None,
    want_u: bool,
):
    """Propagate one block of trajectories; return partial sums.

    Returns (rho_sum (T+1, n, n), u_sum (T+1, n, n) | None) where the sums run
    over the block's trajectories only.
    """
    n = system.n_sites
    n_steps = config.n_steps
    dt = config.dt
    n_block = len(indices)
    n_comp = states0.shape[0]

    energies = np.empty((n_block, n_steps, n))
    jump_uniforms = None
    if jumps is not None:
        jump_uniforms = np.empty((n_block, n_steps, n_comp, 2))
    for j, traj_index in enumerate(indices):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, traj_index)))
        energies[j] = fluct.step_energies(system, n_steps, dt, rng)
        if jumps is not None:
            jump_uniforms[j] = rng.random((n_steps, n_comp, 2))

    psi = np.broadcast_to(states0[None, :, :], (n_block, n_comp, n)).astype(complex)
    u = None
    u_sum = None
    if want_u:
        u = np.broadcast_to(np.eye(n, dtype=complex), (n_block, n, n)).copy()
        u_sum = np.zeros((n_steps + 1, n, n), dtype=complex)
        u_sum[0] = n_block * np.eye(n)
    rho_sum = np.zeros((n_steps + 1, n, n), dtype=complex)
    rho_sum[0] = n_block * _initial_density(weights, states0)

    hbuf = np.broadcast_to(system.couplings[None, :, :], (n_block, n, n)).astype(float)
    diag = np.arange(n)
    eig = None
    for k in range(n_steps):
        if eig is None or not fluct.is_static:
            hbuf[:, diag, diag] = energies[:, k, :]
            w, v = np.linalg.eigh(hbuf)
            phase = np.exp(-1j * w * (dt / HBAR_CM_FS))
            rates = jumps.rates(w, v) if jumps is not None else None
            eig = (w, v, phase, rates)
        w, v, phase, rates = eig

        c = np.einsum("bmj,bkm->bkj", v.conj(), psi)
        if rates is not None and rates.max(initial=0.0) > 0.0:
            jumped = _apply_jumps(c, rates, dt, jump_uniforms[:, k])
            evolve = ~jumped
            total_out = rates.sum(axis=2)
            damp = np.exp(-0.5 * dt * total_out)
            c_evolved = c * phase[:, None, :] * damp[:, None, :]
            norms = np.sqrt(np.sum(np.abs(c_evolved) ** 2, axis=2))
            c_evolved /= norms[:, :, None]
            c = np.where(evolve[:, :, None], c_evolved, c)
        else:
            c = c * phase[:, None, :]
        psi = np.einsum("bmj,bkj->bkm", v, c)

        if want_u:
            u_step = np.einsum("bij,bj,bkj->bik", v, phase, v.conj())
            u = u_step @ u
            u_sum[k + 1] = u.sum(axis=0)
        rho_sum[k + 1] = np.einsum("q,bqi,bqj->ij", weights, psi, psi.conj())
    if want_u and n_steps > 0:
        deviation = np.max(np.abs(u.conj().transpose(0, 2, 1) @ u - np.eye(n)), initial=0.0)
        if deviation > 1e-9:
            raise InvalidInputError(
                f"single-trajectory propagator lost unitarity ({deviation!r})"
            )
    return rho_sum, u_sum


def _run_engine(
    system: SiteSystem,
    fluct: FluctuationModel,
    config: SimConfig,
    jumps: _ZeroPointJumps | None,
    temperature_K: float | None = None,
) -> EnsembleResult:
    weights, states0 = _initial_components(config.initial_state, system.n_sites)
    want_u = config.record_propagator
    blocks = [
        range(start, min(start + BLOCK_SIZE, config.n_traj))
        for start in range(0, config.n_traj, BLOCK_SIZE)
    ]
    workers = config.workers or os.cpu_count() or 1

    def work(block):
        return _propagate_block(system, fluct, config, block, weights, states0, jumps, want_u)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(work, blocks))
    else:
        partials = [work(block) for block in blocks]

    n = system.n_sites
    n_steps = config.n_steps
    rho = np.zeros((n_steps + 1, n, n), dtype=complex)
    u_mean = np.zeros((n_steps + 1, n, n), dtype=complex) if want_u else None
    for rho_part, u_part in partials:
        rho += rho_part
        if want_u:
            u_mean += u_part
    rho /= config.n_traj
    trace = DensityTrace(
        times=config.times,
        rhos=rho,
        meta=TraceMeta(
            method=config.method,
            seed=config.seed,
            n_traj=config.n_traj,
            dt_fs=config.dt,
            temperature_K=temperature_K,
        ),
    )
    record = None
    if want_u:
        u_mean /= config.n_traj
        record = PropagatorRecord(times=config.times, mean_u=u_mean)
    return EnsembleResult(trace=trace, propagator=record)


def run_trajectory(
    system: SiteSystem, fluct: FluctuationModel, config: SimConfig, traj_index: int
) -> TrajectoryResult:
    """Propagate one trajectory, returning the state and U(t, 0) per step.

    Deterministic given (config.seed, traj_index).  The initial state must be
    pure (a site index or PureState).
    """
    weights, states0 = _initial_components(config.initial_state, system.n_sites)
    if weights.shape[0] != 1:
        raise InvalidInputError("run_trajectory requires a pure initial state")
    n = system.n_sites
    n_steps = config.n_steps
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, traj_index)))
    energies = fluct.step_energies(system, n_steps, config.dt, rng)

    states = np.empty((n_steps + 1, n), dtype=complex)
    propagators = np.empty((n_steps + 1, n, n), dtype=complex)
    states[0] = states0[0]
    propagators[0] = np.eye(n)
    eig = None
    for k in range(n_steps):
        if eig is None or not fluct.is_static:
            h = build_hamiltonian(system, energies[k])
            w, v = np.linalg.eigh(h)
            phase = np.exp(-1j * w * (config.dt / HBAR_CM_FS))
            eig = (w, v, phase)
        w, v, phase = eig
        u_step = (v * phase[None, :]) @ v.conj().T
        states[k + 1] = u_step @ states[k]
        propagators[k + 1] = u_step @ propagators[k]
    return TrajectoryResult(times=config.times, states=states, propagators=propagators)


def run_ensemble(system: SiteSystem, fluct: FluctuationModel, config: SimConfig) -> EnsembleResult:
    """Average an ensemble of stochastic unitary trajectories into rho_S(t).

    rho_S(t) = (1/M) sum_i |psi_i(t)><psi_i(t)|; mixed initial states are
    split into eigencomponents that share each trajectory's bath record.
    The averaged propagator is included when config.record_propagator is set.
    """
    if config.method != "MD":
        raise InvalidInputError(f"run_ensemble propagates method 'MD', got {config.method!r}")
    result = _run_engine(system, fluct, config, jumps=None)
    result.trace.validate()
    return result


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def write_density_trace_csv(trace, path, pairs=()) -> None:
    """Write `t_fs,pop_1..pop_N` plus re/im columns for selected site pairs.

    Pair indices are 0-based in the API and 1-based in the emitted header
    (`re_rho_1_2` for pair (0, 1)).
    """
    n = trace.populations.shape[1]
    header = ["t_fs"] + [f"pop_{m + 1}" for m in range(n)]
    for m, nn in pairs:
        header += [f"re_rho_{m + 1}_{nn + 1}", f"im_rho_{m + 1}_{nn + 1}"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, t in enumerate(trace.times):
            row = [repr(float(t))] + [repr(float(p)) for p in trace.populations[i]]
            for m, nn in pairs:
                el = trace.rho_element(m, nn)[i]
                row += [repr(float(np.real(el))), repr(float(np.imag(el)))]
            writer.writerow(row)


@dataclass
class CsvTrace:
    """Trace observables reloaded from CSV: populations and stored pairs."""

    times: np.ndarray
    pops: np.ndarray
    rho_elements: dict

    @property
    def n_sites(self) -> int:
        return self.pops.shape[1]

    def population(self, m: int) -> np.ndarray:
        return self.pops[:, m]

    def rho_element(self, m: int, n: int) -> np.ndarray:
        if (m, n) in self.rho_elements:
            return self.rho_elements[(m, n)]
        if (n, m) in self.rho_elements:
            return np.conj(self.rho_elements[(n, m)])
        raise InvalidInputError(f"trace file does not store the ({m + 1}, {n + 1}) element")

    def coherence(self, m: int, n: int) -> np.ndarray:
        return 2.0 * np.abs(self.rho_element(m, n))


def load_trace_csv(path) -> CsvTrace:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t_fs":
            raise InvalidInputError(f"{path}: first column must be t_fs")
        pop_cols = [i for i, name in enumerate(header) if name.startswith("pop_")]
        pair_cols = {}
        for i, name in enumerate(header):
            if name.startswith("re_rho_"):
                m, n = (int(s) - 1 for s in name[len("re_rho_") :].split("_"))
                pair_cols[(m, n)] = i
        rows = [row for row in reader if row]
    times = np.array([float(r[0]) for r in rows])
    pops = np.array([[float(r[i]) for i in pop_cols] for r in rows])
    elements = {}
    for (m, n), i in pair_cols.items():
        re = np.array([float(r[i]) for r in rows])
        im = np.array([float(r[i + 1]) for r in rows])
        elements[(m, n)] = re + 1j * im
    return CsvTrace(times=times, pops=pops, rho_elements=elements)


def write_propagator_csv(record: PropagatorRecord, path) -> None:
    """Write `t_fs` plus re_U_m_n/im_U_m_n columns in row-major site order."""
    n = record.n_sites
    header = ["t_fs"]
    for m in range(n):
        for nn in range(n):
            header += [f"re_U_{m + 1}_{nn + 1}", f"im_U_{m + 1}_{nn + 1}"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, t in enumerate(record.times):
            row = [repr(float(t))]
            u = record.mean_u[i]
            for m in range(n):
                for nn in range(n):
                    row += [repr(float(np.real(u[m, nn]))), repr(float(np.imag(u[m, nn])))]
            writer.writerow(row)


def load_propagator_csv(path) -> PropagatorRecord:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t_fs":
            raise InvalidInputError(f"{path}: first column must be t_fs")
        n_cols = len(header) - 1
        n = int(round(np.sqrt(n_cols / 2)))
        if 2 * n * n != n_cols:
            raise InvalidInputError(f"{path}: column count does not encode a square propagator")
        times = []
        mats = []
        for row in reader:
            if not row:
                continue
            times.append(float(row[0]))
            vals = np.array([float(v) for v in row[1:]])
            mats.append((vals[0::2] + 1j * vals[1::2]).reshape(n, n))
    return PropagatorRecord(times=np.asarray(times), mean_u=np.asarray(mats))
