"""Quasi-steady-state power system simulator with per-bus complex frequency
(eta = rho + j*omega) computed at every accepted integration step."""

from .casefile import Case, CaseError, load_case
from .cfreq import (
    ComplexFrequencyObserver,
    FrequencyDivider,
    collect_device_rows,
    solve_cf_compact_form,
    solve_cf_current_form,
    solve_cf_power_form,
)
from .devices import AVR, CIG, Governor, PLLEstimator, StaticLoad, SynMachine, VoltDepLoad
from .engine import Event, EventError, InitError, Simulator, StepError, solve_power_flow
from .estimators import (
    estimate_vdl_exponents,
    estimate_vdl_exponents_approx,
    eta_finite_difference,
    median_exponents,
)
from .network import (
    ApproxMatrices,
    Branch,
    Bus,
    Grid,
    ModelError,
    build_admittance,
    build_approx_matrices,
    build_injection_matrix,
)
from .runner import RunResult, run_case

__version__ = "0.1.0"

__all__ = [
    "AVR",
    "ApproxMatrices",
    "Branch",
    "Bus",
    "CIG",
    "Case",
    "CaseError",
    "ComplexFrequencyObserver",
    "Event",
    "EventError",
    "FrequencyDivider",
    "Governor",
    "Grid",
    "InitError",
    "ModelError",
    "PLLEstimator",
    "RunResult",
    "Simulator",
    "StaticLoad",
    "StepError",
    "SynMachine",
    "VoltDepLoad",
    "build_admittance",
    "build_approx_matrices",
    "build_injection_matrix",
    "collect_device_rows",
    "estimate_vdl_exponents",
    "estimate_vdl_exponents_approx",
    "eta_finite_difference",
    "load_case",
    "median_exponents",
    "run_case",
    "solve_cf_compact_form",
    "solve_cf_current_form",
    "solve_cf_power_form",
    "solve_power_flow",
]
