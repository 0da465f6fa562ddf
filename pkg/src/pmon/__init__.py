"""Persistent monitoring with elliptical agent trajectories.

Simulation of the uncertainty dynamics, exact sample-path gradients,
projected descent, stochastic-comparison global search and a heading
optimal-control baseline.
"""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .descent import DescentSettings, optimize, project_feasible
from .errors import (ConfigurationError, DegenerateCoverageError, GrazingEventError,
                     InfeasibleConfigurationError, NumericalFailure, PmonError)
from .ipa import grad_check
from .model import MissionConfig, SensingModel
from .search import CscSettings, SamplingBox, StochasticGrowthSpec, make_growth_field, run_algorithm2
from .simulator import IntegratorOptions, normalized_cost, simulate
from .tpbvp import ControlSchedule, TpbvpSettings, headings_from_ellipses, solve_tpbvp
from .trajectory import EllipseParams

__all__ = [
    "ConfigurationError", "ControlSchedule", "CscSettings", "DegenerateCoverageError", "DescentSettings",
    "EllipseParams", "GrazingEventError", "InfeasibleConfigurationError", "IntegratorOptions",
    "MissionConfig", "NumericalFailure", "PmonError", "SamplingBox", "SensingModel",
    "StochasticGrowthSpec", "TpbvpSettings", "grad_check", "headings_from_ellipses",
    "make_growth_field", "normalized_cost", "optimize", "project_feasible", "run_algorithm2",
    "simulate", "solve_tpbvp", "__version__",
]
