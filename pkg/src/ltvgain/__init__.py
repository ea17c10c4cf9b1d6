"""Integral small-gain analysis of interconnected linear time-varying systems."""

__version__ = "0.1.0"

from .certify import Certificate, CertifySettings, CorollaryData, certificate_envelope, \
    classify, corollary_check
from .config import Config, ConfigError, load_config
from .envelopes import EnvelopeSet, WeightSet, phi, g, validate_envelopes, weighted_norm
from .expr import evaluate, lambdify, parse
from .flow import evolution, simulate
from .gains import GainMatrix, GainSettings, gain_matrix, integral_gain, limit_gain_matrix, \
    spectral_radius_2x2
from .lyapunov import LyapunovGrid, h_bounds, picard_solve, residual_check
from .system import InterconnectedSystem, check_wazewski, comparison_system, load_system
from .validate import ValidationReport, dominance_check, dv_check, monotonicity_check, validate

__all__ = [
    "Certificate", "CertifySettings", "CorollaryData", "certificate_envelope", "classify",
    "corollary_check", "Config", "ConfigError", "load_config", "EnvelopeSet", "WeightSet",
    "phi", "g", "validate_envelopes", "weighted_norm", "evaluate", "lambdify", "parse",
    "evolution", "simulate", "GainMatrix", "GainSettings", "gain_matrix", "integral_gain",
    "limit_gain_matrix", "spectral_radius_2x2", "LyapunovGrid", "h_bounds", "picard_solve",
    "residual_check", "InterconnectedSystem", "check_wazewski", "comparison_system",
    "load_system", "ValidationReport", "dominance_check", "dv_check", "monotonicity_check",
    "validate",
]
