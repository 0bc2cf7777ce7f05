"""Domain types for the excitonic system and its instantaneous Hamiltonians.

The site basis carries one two-level chromophore per index.  Site energies
are in cm^-1, geometry in angstrom, time in fs.  All types validate their
invariants on construction and freeze their array payloads, so instances can
be shared freely across concurrent trajectory workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constants import KB_CM_K
from .errors import InvalidInputError

COUPLING_SYMMETRY_TOL = 1e-12
UNIT_NORM_TOL = 1e-12
STATE_NORM_TOL = 1e-10
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-8
ORTHONORMALITY_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-8


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Geometry:
    """Site positions, transition dipoles, and the rotational symmetry axis.

    positions: (n_sites, 3) in angstrom; dipoles: (n_sites, 3) in arbitrary
    dipole units; symmetry_axis: unit 3-vector.
    """

    positions: np.ndarray
    dipoles: np.ndarray
    symmetry_axis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen_array(self.positions))
        object.__setattr__(self, "dipoles", _frozen_array(self.dipoles))
        object.__setattr__(self, "symmetry_axis", _frozen_array(self.symmetry_axis))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidInputError("positions must have shape (n_sites, 3)")
        if self.dipoles.shape != self.positions.shape:
            raise InvalidInputError("dipoles must have the same shape as positions")
        if self.symmetry_axis.shape != (3,):
            raise InvalidInputError("symmetry_axis must be a 3-vector")
        norm = float(np.linalg.norm(self.symmetry_axis))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise InvalidInputError(
                f"symmetry_axis must have unit norm, got |r| = {norm!r}"
            )

    @property
    def n_sites(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SiteSystem:
    """Static N-site exciton model: mean energies plus constant couplings.

    mean_energies: per-site mean excitation energy (cm^-1).  couplings:
    symmetric (n, n) electronic couplings (cm^-1) with an exactly zero
    diagonal; they are held constant in time (Condon approximation).
    """

    n_sites: int
    mean_energies: np.ndarray
    couplings: np.ndarray
    geometry: Geometry | None = None

    def __post_init__(self):
        if self.n_sites < 1:
            raise InvalidInputError("n_sites must be >= 1")
        object.__setattr__(self, "mean_energies", _frozen_array(self.mean_energies))
        object.__setattr__(self, "couplings", _frozen_array(self.couplings))
        n = self.n_sites
        if self.mean_energies.shape != (n,):
            raise InvalidInputError(
                f"mean_energies must have length {n}, got shape {self.mean_energies.shape}"
            )
        if self.couplings.shape != (n, n):
            raise InvalidInputError(
                f"couplings must have shape ({n}, {n}), got {self.couplings.shape}"
            )
        if np.max(np.abs(self.couplings - self.couplings.T), initial=0.0) > COUPLING_SYMMETRY_TOL:
            raise InvalidInputError("couplings must be symmetric within 1e-12 cm^-1")
        if np.any(np.diag(self.couplings) != 0.0):
            raise InvalidInputError("couplings must have an exactly zero diagonal")
        if self.geometry is not None and self.geometry.n_sites != n:
            raise InvalidInputError("geometry does not match n_sites")

    @classmethod
    def from_json(cls, text: str) -> "SiteSystem":
        """Build a system from the JSON document format (see README)."""
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"system JSON does not parse: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "SiteSystem":
        for key in ("n_sites", "mean_energies_cm1", "couplings_cm1"):
            if key not in doc:
                raise InvalidInputError(f"system document missing field '{key}'")
        geometry = None
        if doc.get("geometry") is not None:
            g = doc["geometry"]
            for key in ("positions_A", "dipoles", "symmetry_axis"):
                if key not in g:
                    raise InvalidInputError(f"geometry document missing field '{key}'")
            geometry = Geometry(
                positions=g["positions_A"],
                dipoles=g["dipoles"],
                symmetry_axis=g["symmetry_axis"],
            )
        return cls(
            n_sites=int(doc["n_sites"]),
            mean_energies=doc["mean_energies_cm1"],
            couplings=doc["couplings_cm1"],
            geometry=geometry,
        )

    @classmethod
    def from_file(cls, path) -> "SiteSystem":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        doc = {
            "n_sites": self.n_sites,
            "mean_energies_cm1": self.mean_energies.tolist(),
            "couplings_cm1": self.couplings.tolist(),
        }
        if self.geometry is not None:
            doc["geometry"] = {
                "positions_A": self.geometry.positions.tolist(),
                "dipoles": self.geometry.dipoles.tolist(),
                "symmetry_axis": self.geometry.symmetry_axis.tolist(),
            }
        return doc


@dataclass(frozen=True)
class EnergyTrajectory:
    """Time-discretized fluctuating site energies: the classical bath record.

    frames: (n_frames, n_sites) site energies in cm^-1 on a uniform grid of
    spacing dt_frame (fs).
    """

    dt_frame: float
    frames: np.ndarray
    label: str = ""

    def __post_init__(self):
        if not self.dt_frame > 0:
            raise InvalidInputError("dt_frame must be > 0")
        object.__setattr__(self, "frames", _frozen_array(self.frames))
        if self.frames.ndim != 2:
            raise InvalidInputError("frames must be a (n_frames, n_sites) matrix")
        if self.frames.shape[0] < 2:
            raise InvalidInputError("trajectory needs at least 2 frames")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("trajectory contains non-finite energies")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_sites(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_fs(self) -> float:
        """Time spanned by the frames: (n_frames - 1) * dt_frame."""
        return (self.n_frames - 1) * self.dt_frame

    @property
    def times_fs(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.dt_frame


@dataclass(frozen=True)
class PureState:
    """Normalized complex amplitude vector in the site basis."""

    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _frozen_array(self.amplitudes, dtype=complex))
        if self.amplitudes.ndim != 1:
            raise InvalidInputError("amplitudes must be a vector")
        norm_sq = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm_sq - 1.0) > STATE_NORM_TOL:
            raise InvalidInputError(f"state norm^2 = {norm_sq!r}, must be 1 within 1e-10")

    @classmethod
    def site(cls, n_sites: int, m: int) -> "PureState":
        if not 0 <= m < n_sites:
            raise InvalidInputError(f"site index {m} out of range for {n_sites} sites")
        amps = np.zeros(n_sites, dtype=complex)
        amps[m] = 1.0
        return cls(amps)

    @property
    def n_sites(self) -> int:
        return self.amplitudes.shape[0]

    def density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite matrix in the site basis."""

    elements: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "elements", _frozen_array(self.elements, dtype=complex))
        el = self.elements
        if el.ndim != 2 or el.shape[0] != el.shape[1]:
            raise InvalidInputError("density matrix must be square")
        if np.max(np.abs(el - el.conj().T), initial=0.0) > HERMITICITY_TOL:
            raise InvalidInputError("density matrix must be Hermitian within 1e-10")
        trace = complex(np.trace(el))
        if abs(trace - 1.0) > TRACE_TOL:
            raise InvalidInputError(f"density matrix trace = {trace!r}, must be 1 within 1e-10")
        min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (el + el.conj().T))))
        if min_eig < -POSITIVITY_TOL:
            raise InvalidInputError(
                f"density matrix has negative eigenvalue {min_eig!r} below -1e-8"
            )

    @classmethod
    def from_site(cls, n_sites: int, m: int) -> "DensityMatrix":
        return PureState.site(n_sites, m).density_matrix()

    @property
    def n_sites(self) -> int:
        return self.elements.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.elements))

    def purity(self) -> float:
        return float(np.real(np.trace(self.elements @ self.elements)))


@dataclass(frozen=True)
class ExcitonBasis:
    """Instantaneous eigenbasis of a one-exciton Hamiltonian.

    energies: ascending eigenvalues E_M (cm^-1); coefficients: column M of the
    (n, n) matrix is the eigenvector of E_M, i.e. coefficients[m, M] translates
    site m into exciton state M.
    """

    energies: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "energies", _frozen_array(self.energies))
        object.__setattr__(self, "coefficients", _frozen_array(self.coefficients, dtype=complex))
        n = self.energies.shape[0]
        if self.coefficients.shape != (n, n):
            raise InvalidInputError("coefficients must be a square matrix matching energies")
        if np.any(np.diff(self.energies) < 0):
            raise InvalidInputError("energies must be ascending")
        gram = self.coefficients.conj().T @ self.coefficients
        if np.max(np.abs(gram - np.eye(n)), initial=0.0) > ORTHONORMALITY_TOL:
            raise InvalidInputError("eigenvector columns must be orthonormal within 1e-10")

    @property
    def n_sites(self) -> int:
        return self.energies.shape[0]

    def gaps(self) -> np.ndarray:
        """Transition frequencies omega[M, N] = E_M - E_N in cm^-1."""
        return self.energies[:, None] - self.energies[None, :]

    def reconstruct(self) -> np.ndarray:
        return (self.coefficients * self.energies[None, :]) @ self.coefficients.conj().T


@dataclass(frozen=True)
class ThermalParams:
    """Bath temperature and the derived inverse energy beta = 1/(k_B T)."""

    temperature: float
    beta: float = field(init=False)

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be > 0 K")
        object.__setattr__(self, "beta", 1.0 / (KB_CM_K * self.temperature))


def build_hamiltonian(system: SiteSystem, instantaneous_energies) -> np.ndarray:
    """Assemble the instantaneous Hamiltonian H(t) in cm^-1.

    Diagonal = the supplied instantaneous site energies, off-diagonal = the
    system's constant couplings.  The result is exactly symmetric by
    construction.
    """
    energies = np.asarray(instantaneous_energies, dtype=float)
    if energies.shape != (system.n_sites,):
        raise InvalidInputError(
            f"expected {system.n_sites} site energies, got shape {energies.shape}"
        )
    h = np.array(system.couplings, dtype=float)
    h[np.diag_indices(system.n_sites)] = energies
    return h


def mean_hamiltonian(system: SiteSystem) -> np.ndarray:
    """The time-independent Hamiltonian built from the mean site energies."""
    return build_hamiltonian(system, system.mean_energies)


def _require_hermitian(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvalidInputError("Hamiltonian must be a square matrix")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > HERMITICITY_TOL:
        raise InvalidInputError("Hamiltonian must be Hermitian within 1e-10")
    return h


def exciton_basis(h) -> ExcitonBasis:
    """Diagonalize a Hermitian Hamiltonian into the exciton basis.

    Eigenvalues come out ascending.  The phase of each eigenvector is fixed by
    making its largest-magnitude component real and positive, so the output is
    deterministic across runs and platforms.  For degenerate eigenvalues any
    orthonormal basis of the degenerate subspace may be returned; downstream
    rates and populations are covariant within a degenerate block.
    """
    h = _require_hermitian(h)
    energies, vecs = np.linalg.eigh(h)
    anchor = np.argmax(np.abs(vecs), axis=0)
    anchor_values = vecs[anchor, np.arange(vecs.shape[1])]
    phases = anchor_values / np.abs(anchor_values)
    vecs = vecs / phases[None, :]
    return ExcitonBasis(energies=energies, coefficients=vecs)


def pairwise_coherence(rho, m: int, n: int) -> float:
    """The coherence observable 2*|rho_mn| between two distinct sites."""
    elements = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho)
    n_sites = elements.shape[0]
    if not (0 <= m < n_sites and 0 <= n < n_sites):
        raise InvalidInputError(f"site indices ({m}, {n}) out of range")
    if m == n:
        raise InvalidInputError("pairwise coherence requires two distinct sites")
    return 2.0 * float(np.abs(elements[m, n]))
