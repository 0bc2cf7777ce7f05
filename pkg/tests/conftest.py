"""Shared fixtures: small systems and the seven-site benchmark."""

import numpy as np
import pytest

from excidyn import Geometry, SiteSystem
from excidyn.constants import HBAR_CM_FS

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# Community literature parameterization of the seven-bacteriochlorophyll
# complex (MEAD couplings); used as the benchmark system throughout.
SEVEN_SITE_ENERGIES = np.array([12410.0, 12530.0, 12210.0, 12320.0, 12480.0, 12620.0, 12440.0])
SEVEN_SITE_COUPLINGS = np.array(
    [
        [0.0, -87.7, 5.5, -5.9, 6.7, -13.7, -9.9],
        [-87.7, 0.0, 30.8, 8.2, 0.7, 11.8, 4.3],
        [5.5, 30.8, 0.0, -53.5, -2.2, -9.6, 6.0],
        [-5.9, 8.2, -53.5, 0.0, -70.7, -17.0, -63.3],
        [6.7, 0.7, -2.2, -70.7, 0.0, 81.1, -1.3],
        [-13.7, 11.8, -9.6, -17.0, 81.1, 0.0, 39.7],
        [-9.9, 4.3, 6.0, -63.3, -1.3, 39.7, 0.0],
    ]
)


def sigma_for_width(width_cm1: float, tau_fs: float) -> float:
    """Site-energy sigma whose pure-dephasing width 2 sigma^2 tau / hbar matches."""
    return float(np.sqrt(width_cm1 * HBAR_CM_FS / (2.0 * tau_fs)))


@pytest.fixture(scope="session")
def seven_site_system() -> SiteSystem:
    return SiteSystem(7, SEVEN_SITE_ENERGIES, SEVEN_SITE_COUPLINGS)


@pytest.fixture(scope="session")
def dimer_system() -> SiteSystem:
    return SiteSystem(2, [0.0, 0.0], [[0.0, 100.0], [100.0, 0.0]])


@pytest.fixture(scope="session")
def decoupled_dimer() -> SiteSystem:
    return SiteSystem(2, [0.0, 0.0], np.zeros((2, 2)))


@pytest.fixture()
def single_site_system() -> SiteSystem:
    geometry = Geometry(
        positions=[[0.0, 0.0, 0.0]],
        dipoles=[[1.0, 0.0, 0.0]],
        symmetry_axis=[0.0, 0.0, 1.0],
    )
    return SiteSystem(1, [12000.0], [[0.0]], geometry=geometry)
