"""Absorption, linear-dichroism, and circular-dichroism spectra.

Spectra are Fourier transforms of response functions built from the
ensemble-averaged propagator in the site basis.  With static transition
dipoles (Condon approximation) the geometric weights factor out of the
trajectory average, so each spectrum is a weighted sine transform of
Im <U_mn(t, 0)>, apodized by a Gaussian time window.  Intensities are in
arbitrary units, normalized to unit peak magnitude.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .constants import HBAR_CM_FS
from .errors import InvalidInputError
from .model import SiteSystem
from .propagator import PropagatorRecord

KINDS = ("abs", "ld", "cd")

#: default apodization window (fs); resolves a few-hundred cm^-1 band spread
#: while suppressing truncation ringing of ~1 ps records
DEFAULT_WINDOW_FS = 100.0

#: a record should span at least this many inverse grid resolutions
MIN_RESOLUTION_SPANS = 5.0


@dataclass(frozen=True)
class Spectrum:
    """Intensity on a strictly increasing frequency grid (cm^-1)."""

    omega_cm1: np.ndarray
    intensity: np.ndarray
    kind: str
    shift_cm1: float = 0.0
    warning: str | None = None

    def __post_init__(self):
        omega = np.asarray(self.omega_cm1, dtype=float)
        intensity = np.asarray(self.intensity, dtype=float)
        omega.setflags(write=False)
        intensity.setflags(write=False)
        object.__setattr__(self, "omega_cm1", omega)
        object.__setattr__(self, "intensity", intensity)
        if omega.ndim != 1 or omega.shape != intensity.shape:
            raise InvalidInputError("omega grid and intensity must be matching vectors")
        if np.any(np.diff(omega) <= 0):
            raise InvalidInputError("omega grid must be strictly increasing")
        if not np.all(np.isfinite(intensity)):
            raise InvalidInputError("intensity must be finite")

    def peak_position(self) -> float:
        return float(self.omega_cm1[int(np.argmax(np.abs(self.intensity)))])


def _weights(system: SiteSystem, kind: str) -> np.ndarray:
    geom = system.geometry
    d = geom.dipoles
    if kind == "abs":
        return d @ d.T
    if kind == "ld":
        proj = d @ geom.symmetry_axis
        return 3.0 * np.outer(proj, proj) - d @ d.T
    # circular dichroism: mean site energy times the chiral triple product
    cross = np.cross(d[:, None, :], d[None, :, :])
    separation = geom.positions[:, None, :] - geom.positions[None, :, :]
    return system.mean_energies[:, None] * np.einsum("mnx,mnx->mn", separation, cross)


def compute_spectrum(
    record: PropagatorRecord,
    system: SiteSystem,
    kind: str,
    window_fs: float = DEFAULT_WINDOW_FS,
    omega_grid=None,
) -> Spectrum:
    """Transform an averaged propagator record into a spectrum.

    I(w) = Re int_0^T dt e^{i w t} sum_mn W_mn {<U_mn> - <U_mn>*} A(t) with a
    Gaussian apodization A(t) = exp(-t^2 / 2 window^2), evaluated by
    trapezoidal quadrature on the record's time grid.  The weight W depends on
    the kind: dipole products (abs), the orientational combination against the
    symmetry axis (ld), or the chiral triple product (cd).
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise InvalidInputError(f"kind must be one of {KINDS}")
    if system.geometry is None:
        raise InvalidInputError("spectrum computation requires system geometry")
    if system.n_sites != record.n_sites:
        raise InvalidInputError("record and system have different site counts")
    if not window_fs > 0:
        raise InvalidInputError("window_fs must be > 0")
    if omega_grid is None:
        center = float(np.mean(system.mean_energies))
        halfwidth = 6.0 * HBAR_CM_FS / window_fs + float(np.ptp(system.mean_energies))
        # default spacing at the resolution the record actually supports
        spacing = max(
            MIN_RESOLUTION_SPANS * HBAR_CM_FS / float(record.times[-1]),
            2.0 * halfwidth / 4000.0,
        )
        n_points = int(np.floor(2.0 * halfwidth / spacing)) + 1
        omega_grid = center - halfwidth + spacing * np.arange(n_points)
    omega = np.asarray(omega_grid, dtype=float)

    t = record.times
    weights = _weights(system, kind)
    # {<U> - <U>*} = 2i Im<U>; Re of (2i e^{iwt} X) folds into a sine transform
    signal = -2.0 * np.einsum("mn,tmn->t", weights, np.imag(record.mean_u))
    signal = signal * np.exp(-(t**2) / (2.0 * window_fs**2))
    intensity = np.trapezoid(np.sin(np.outer(omega / HBAR_CM_FS, t)) * signal[None, :], t, axis=1)

    peak = float(np.max(np.abs(intensity)))
    if peak > 0.0:
        intensity = intensity / peak

    warning = None
    spacing = float(np.min(np.diff(omega)))
    needed = MIN_RESOLUTION_SPANS * HBAR_CM_FS / spacing
    if t[-1] < needed * (1.0 - 1e-9):
        warning = (
            f"record spans {t[-1]:.0f} fs but the grid resolution {spacing:.3g} cm^-1 "
            f"asks for {needed:.0f} fs"
        )
    return Spectrum(omega_cm1=omega, intensity=intensity, kind=kind, warning=warning)


def overlay_shift(spec: Spectrum, shift: float) -> Spectrum:
    """Translate the frequency grid by -shift for experimental overlays."""
    if shift == 0.0:
        return spec
    return replace(
        spec,
        omega_cm1=spec.omega_cm1 - shift,
        shift_cm1=spec.shift_cm1 + shift,
    )


def write_spectrum_csv(spec: Spectrum, path, overlay=None) -> None:
    """Write `omega_cm1,intensity` rows; an optional experimental overlay is
    interpolated onto the grid as a third column (side by side, no fitting)."""
    header = ["omega_cm1", "intensity"]
    columns = [spec.omega_cm1, spec.intensity]
    if overlay is not None:
        exp_omega, exp_intensity = overlay
        header.append("exp_intensity")
        columns.append(
            np.interp(spec.omega_cm1, np.asarray(exp_omega), np.asarray(exp_intensity))
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


def load_xy_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column CSV (with or without a header line)."""
    xs, ys = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                x = float(row[0])
            except ValueError:
                continue  # header line
            xs.append(x)
            ys.append(float(row[1]))
    if not xs:
        raise InvalidInputError(f"{path}: no numeric rows found")
    return np.asarray(xs), np.asarray(ys)
