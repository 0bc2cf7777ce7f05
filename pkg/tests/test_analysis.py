"""Coherence lifetimes, dephasing slopes, and trace comparison."""

from dataclasses import dataclass

import numpy as np
import pytest

from excidyn import (
    InvalidInputError,
    coherence_lifetime,
    compare_traces,
    dephasing_slope,
)


@dataclass
class FakeTrace:
    times: np.ndarray
    pops: np.ndarray = None
    signal: np.ndarray = None

    def population(self, m):
        return self.pops[:, m]

    def coherence(self, m, n):
        return self.signal


def damped_beats(tau=200.0, period=70.0, t_max=1200.0):
    times = np.arange(0.0, t_max, 1.0)
    return FakeTrace(times=times, signal=np.exp(-times / tau) * np.abs(np.cos(2 * np.pi * times / period)))


class TestCoherenceLifetime:
    def test_exponential_envelope_oracle(self):
        estimate = coherence_lifetime(damped_beats(), 0, 1, threshold=np.exp(-1.0))
        assert estimate.found
        assert abs(estimate.lifetime_fs - 200.0) < 20.0

    def test_undamped_oscillation_not_found(self):
        times = np.arange(0.0, 500.0, 1.0)
        trace = FakeTrace(times=times, signal=np.abs(np.cos(2 * np.pi * times / 70.0)))
        estimate = coherence_lifetime(trace, 0, 1)
        assert not estimate.found
        assert "below threshold" in estimate.detail

    def test_too_few_maxima_reports_diagnostic(self):
        times = np.arange(0.0, 50.0, 1.0)
        trace = FakeTrace(times=times, signal=np.exp(-times / 10.0))
        estimate = coherence_lifetime(trace, 0, 1)
        assert not estimate.found
        assert "envelope maxima" in estimate.detail

    def test_monotone_in_threshold(self):
        trace = damped_beats()
        lifetimes = [
            coherence_lifetime(trace, 0, 1, threshold=thr).lifetime_fs
            for thr in (0.6, 0.45, 0.3, 0.15)
        ]
        assert all(a <= b + 1e-9 for a, b in zip(lifetimes, lifetimes[1:]))

    def test_threshold_bounds(self):
        with pytest.raises(InvalidInputError):
            coherence_lifetime(damped_beats(), 0, 1, threshold=1.0)


class TestDephasingSlope:
    def test_two_point_reference(self):
        # line through the low/high temperature rate pair
        assert dephasing_slope([77.0, 300.0], [37.3, 145.5]) == pytest.approx(0.485, abs=0.001)

    def test_zero_rates(self):
        assert dephasing_slope([77.0, 150.0, 300.0], [0.0, 0.0, 0.0]) == 0.0

    def test_exact_linear(self):
        temps = np.array([50.0, 100.0, 200.0, 400.0])
        assert dephasing_slope(temps, 0.37 * temps) == pytest.approx(0.37, abs=1e-12)

    def test_offset_invariance(self):
        temps = np.array([77.0, 150.0, 300.0])
        rates = np.array([30.0, 70.0, 140.0])
        a = dephasing_slope(temps, rates)
        b = dephasing_slope(temps, rates + 55.0)
        assert a == pytest.approx(b, rel=1e-12)

    def test_degenerate_temperatures_rejected(self):
        with pytest.raises(InvalidInputError):
            dephasing_slope([300.0, 300.0], [1.0, 2.0])


class TestCompareTraces:
    def make(self, values):
        times = np.arange(0.0, float(len(values)), 1.0)
        return FakeTrace(times=times, pops=np.asarray(values)[:, None])

    def test_identical_traces_are_zero(self):
        a = self.make(np.linspace(0, 1, 50))
        result = compare_traces(a, a, ("population", 0))
        assert result.rmsd == 0.0
        assert result.max_abs_dev == 0.0

    def test_constant_offset(self):
        a = self.make(np.linspace(0, 1, 50))
        b = self.make(np.linspace(0, 1, 50) + 0.1)
        result = compare_traces(a, b, ("population", 0))
        assert result.rmsd == pytest.approx(0.1)
        assert result.max_abs_dev == pytest.approx(0.1)

    def test_rmsd_bounded_by_max(self):
        rng = np.random.default_rng(3)
        a = self.make(rng.random(100))
        b = self.make(rng.random(100))
        result = compare_traces(a, b, ("population", 0))
        assert result.rmsd <= result.max_abs_dev

    def test_grid_mismatch_rejected(self):
        a = self.make(np.zeros(10))
        b = self.make(np.zeros(11))
        with pytest.raises(InvalidInputError):
            compare_traces(a, b, ("population", 0))

    def test_time_of_max_dev(self):
        values = np.zeros(20)
        other = values.copy()
        other[7] = 0.5
        result = compare_traces(self.make(values), self.make(other), ("population", 0))
        assert result.time_of_max_dev_fs == 7.0
