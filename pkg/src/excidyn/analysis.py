"""Derived observables and cross-method trace comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_LIFETIME_THRESHOLD = float(np.exp(-1.0))


@dataclass(frozen=True)
class LifetimeEstimate:
    """Envelope-threshold coherence lifetime; found=False carries a diagnostic."""

    found: bool
    lifetime_fs: float | None
    detail: str = ""


@dataclass(frozen=True)
class TraceComparison:
    rmsd: float
    max_abs_dev: float
    time_of_max_dev_fs: float

    def __post_init__(self):
        if self.rmsd < 0 or self.max_abs_dev < 0:
            raise InvalidInputError("deviations must be nonnegative")
        if self.rmsd > self.max_abs_dev + 1e-15:
            raise InvalidInputError("rmsd cannot exceed the maximum deviation")


def _envelope_maxima(times: np.ndarray, values: np.ndarray):
    """Parabolically refined local maxima of a sampled signal.

    The first sample counts as a maximum when the signal starts by falling, so
    envelopes that begin at their peak keep their initial value.
    """
    peaks_t, peaks_v = [], []
    n = values.shape[0]
    if n >= 2 and values[0] >= values[1]:
        peaks_t.append(times[0])
        peaks_v.append(values[0])
    for i in range(1, n - 1):
        if values[i] >= values[i - 1] and values[i] > values[i + 1]:
            y0, y1, y2 = values[i - 1], values[i], values[i + 1]
            denom = y0 - 2.0 * y1 + y2
            if denom < 0:
                offset = 0.5 * (y0 - y2) / denom
                offset = float(np.clip(offset, -1.0, 1.0))
                dt = times[i + 1] - times[i]
                peaks_t.append(times[i] + offset * dt)
                peaks_v.append(y1 - 0.25 * (y0 - y2) * offset)
            else:
                peaks_t.append(times[i])
                peaks_v.append(y1)
    if n >= 2 and values[-1] > values[-2]:
        peaks_t.append(times[-1])
        peaks_v.append(values[-1])
    return np.asarray(peaks_t), np.asarray(peaks_v)


def coherence_lifetime(trace, m: int, n: int, threshold: float = DEFAULT_LIFETIME_THRESHOLD) -> LifetimeEstimate:
    """First time after which the coherence envelope stays below threshold.

    The envelope is the sequence of (peak-interpolated) local maxima of
    2|rho_mn(t)|; the reference value is the first envelope point, and the
    crossing is interpolated linearly between the last envelope point at or
    above threshold * reference and the next one below it.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError("threshold must be strictly between 0 and 1")
    values = np.asarray(trace.coherence(m, n), dtype=float)
    times = np.asarray(trace.times, dtype=float)
    peaks_t, peaks_v = _envelope_maxima(times, values)
    if peaks_t.shape[0] < 3:
        return LifetimeEstimate(
            found=False,
            lifetime_fs=None,
            detail=f"only {peaks_t.shape[0]} envelope maxima; need at least 3",
        )
    reference = peaks_v[0]
    if reference <= 0:
        return LifetimeEstimate(found=False, lifetime_fs=None, detail="zero initial envelope")
    cut = threshold * reference
    above = peaks_v >= cut
    if above[-1]:
        return LifetimeEstimate(
            found=False,
            lifetime_fs=None,
            detail="envelope never stays below threshold within the trace",
        )
    last = int(np.max(np.nonzero(above))) if np.any(above) else 0
    t0, v0 = peaks_t[last], peaks_v[last]
    t1, v1 = peaks_t[last + 1], peaks_v[last + 1]
    if v0 == v1:
        crossing = t1
    else:
        crossing = t0 + (v0 - cut) / (v0 - v1) * (t1 - t0)
    return LifetimeEstimate(found=True, lifetime_fs=float(crossing))


def dephasing_slope(temperatures, rates) -> float:
    """Least-squares slope of dephasing rate against temperature (cm^-1 / K)."""
    temps = np.asarray(temperatures, dtype=float)
    vals = np.asarray(rates, dtype=float)
    if temps.shape != vals.shape or temps.ndim != 1 or temps.shape[0] < 2:
        raise InvalidInputError("need at least two (temperature, rate) points")
    if np.ptp(temps) == 0.0:
        raise InvalidInputError("temperatures are degenerate; slope is undefined")
    return float(np.polyfit(temps, vals, 1)[0])


def _select_observable(trace, observable):
    kind = observable[0]
    if kind == "population":
        return np.asarray(trace.population(observable[1]), dtype=float)
    if kind == "coherence":
        return np.asarray(trace.coherence(observable[1], observable[2]), dtype=float)
    raise InvalidInputError("observable must be ('population', m) or ('coherence', m, n)")


def compare_traces(a, b, observable) -> TraceComparison:
    """RMSD and maximum deviation of one observable between two traces."""
    ta = np.asarray(a.times, dtype=float)
    tb = np.asarray(b.times, dtype=float)
    if ta.shape != tb.shape or np.max(np.abs(ta - tb), initial=0.0) > 1e-9:
        raise InvalidInputError("traces must share an identical time grid")
    va = _select_observable(a, observable)
    vb = _select_observable(b, observable)
    diff = np.abs(va - vb)
    idx = int(np.argmax(diff))
    return TraceComparison(
        rmsd=float(np.sqrt(np.mean(diff**2))),
        max_abs_dev=float(diff[idx]),
        time_of_max_dev_fs=float(ta[idx]),
    )
