"""Exact and Monte Carlo simulation of an atomic-ensemble memory for polarization photons."""

__version__ = "0.1.0"

from .analysis import aggregate, exact_success_probability, fidelity
from .detection import ClickPattern, DetectorModel, enumerate_outcomes
from .fock import MixedState, ModeLabel, PureState
from .protocol import PatternClass, ProtocolConfig, run_trial, run_trials

__all__ = [
    "ClickPattern",
    "DetectorModel",
    "MixedState",
    "ModeLabel",
    "PatternClass",
    "ProtocolConfig",
    "PureState",
    "aggregate",
    "enumerate_outcomes",
    "exact_success_probability",
    "fidelity",
    "run_trial",
    "run_trials",
]
