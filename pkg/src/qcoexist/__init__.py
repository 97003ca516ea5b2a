"""Model, simulate and plan entanglement distribution over fibers carrying classical traffic."""

__version__ = "0.1.0"

from .spectra import ClassicalPlan, Spectrum, interpolate, load_spectrum, scale_sprs
from .link_model import LinkParams, RatePrediction, predict, sweep, visibility
from .quantum_state import (
    AnalyzerSetting,
    CountRecord,
    TwoQubitState,
    fidelity,
    tomography_reconstruct,
    werner_state,
)
from .event_sim import ClockModel, EventStream, SimConfig, correlate, simulate
from .allocation import AllocationRequest, allocate, pair_allocate
from .scenario import Scenario, load_scenario

__all__ = [
    "AllocationRequest",
    "AnalyzerSetting",
    "ClassicalPlan",
    "ClockModel",
    "CountRecord",
    "EventStream",
    "LinkParams",
    "RatePrediction",
    "Scenario",
    "SimConfig",
    "Spectrum",
    "TwoQubitState",
    "allocate",
    "correlate",
    "fidelity",
    "interpolate",
    "load_scenario",
    "pair_allocate",
    "predict",
    "scale_sprs",
    "simulate",
    "sweep",
    "tomography_reconstruct",
    "visibility",
    "werner_state",
]
