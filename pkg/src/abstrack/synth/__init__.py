"""Certificate synthesis for the error dynamics."""
from __future__ import annotations

from .algorithm import (ExpansionSchedule, GammaStep, SynthesisInfeasible, constraint_polys,
                        gamma_step, init_v0, iterate, lqr_seed, reverify, synthesize, v_step)
from .certificate import Certificate, log_volume
from .config import ConfigError, SynthesisConfig
from .lqr import StabilizabilityError, lqr
from .validate import ValidationReport, validate_certificate

__all__ = [
    "Certificate", "ConfigError", "ExpansionSchedule", "GammaStep", "StabilizabilityError",
    "SynthesisConfig", "SynthesisInfeasible", "ValidationReport", "constraint_polys", "gamma_step", "init_v0",
    "iterate", "log_volume", "lqr", "lqr_seed", "reverify", "synthesize", "v_step",
    "validate_certificate",
]
