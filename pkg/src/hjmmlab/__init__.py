"""Simulation, measure change and condition audits for HJM-type forward-curve models with jumps.

Curves live on a uniform maturity grid whose step equals the time step, so
the Musiela shift is an exact index shift. See :func:`hjmmlab.zoo.build_model`
for ready-made models and :func:`hjmmlab.simulator.simulate` for path
ensembles.
"""

from .checks import run_checks
from .curves import CovarianceSpec, CurveGrid, ForwardCurve, inner_beta, norm_beta, shift
from .diagnostics import girsanov_consistency, martingale_test, positivity_test
from .errors import (
    AccuracyError,
    BlowUpError,
    ConfigError,
    ContractViolation,
    DomainError,
    HJMMError,
    StructuralError,
)
from .measure_change import density_tracker, reweighted_expectation
from .model import ModelSpec
from .simulator import PathEnsemble, SimConfig, simulate
from .zoo import MODEL_NAMES, build_model

__version__ = "0.1.0"

__all__ = [
    "AccuracyError",
    "BlowUpError",
    "ConfigError",
    "ContractViolation",
    "CovarianceSpec",
    "CurveGrid",
    "DomainError",
    "ForwardCurve",
    "HJMMError",
    "MODEL_NAMES",
    "ModelSpec",
    "PathEnsemble",
    "SimConfig",
    "StructuralError",
    "build_model",
    "density_tracker",
    "girsanov_consistency",
    "inner_beta",
    "martingale_test",
    "norm_beta",
    "positivity_test",
    "reweighted_expectation",
    "run_checks",
    "shift",
    "simulate",
]
