"""Stochastic-Hamiltonian exciton dynamics for pigment-protein complexes.

Reduced density-matrix dynamics as ensembles of unitary trajectories driven
by classical site-energy records (recorded or AR(1) surrogates), an optional
zero-point quantum-jump relaxation correction, a Haken-Strobl-Reineker
pure-dephasing comparison model, and derived observables: correlation
functions, spectral densities, dephasing rates, coherence lifetimes, and
absorption/LD/CD spectra.
"""

__version__ = "0.1.0"

from .constants import HBAR_CM_FS, KB_CM_K
from .errors import ExcidynError, IntegrationError, InvalidInputError, StepSizeError
from .model import (
    DensityMatrix,
    EnergyTrajectory,
    ExcitonBasis,
    Geometry,
    PureState,
    SiteSystem,
    ThermalParams,
    build_hamiltonian,
    exciton_basis,
    mean_hamiltonian,
    pairwise_coherence,
)
from .noise import (
    AR1Fluctuations,
    CorrelationFunction,
    DrudeLorentzDensity,
    NoFluctuations,
    RecordedFluctuations,
    StaticDisorder,
    TabulatedDensity,
    ar1_generate,
    correlation,
    cosine_transform,
    decorrelate,
    drude_lorentz_eval,
    sample_window,
    spectral_density,
)
from .propagator import (
    DensityTrace,
    EnsembleResult,
    PropagatorRecord,
    SimConfig,
    TrajectoryResult,
    run_ensemble,
    run_trajectory,
    step_unitary,
)
from .qjc import RateTable, mcwf_step, run_ensemble_qjc, zp_rates
from .hsr import DephasingRates, dephasing_rate, dephasing_width_cm1, hsr_propagate
from .spectra import Spectrum, compute_spectrum, overlay_shift
from .analysis import (
    LifetimeEstimate,
    TraceComparison,
    coherence_lifetime,
    compare_traces,
    dephasing_slope,
)
