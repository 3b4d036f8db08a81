"""Bayesian updates under uncertain evidence.

Three ways to condition a known model ``p(y|x) p(x)`` on an uncertain
observation of ``y``: Jeffrey's rule, virtual evidence and distributional
evidence, with exact, closed-form and Monte Carlo engines and diagnostics
for when Jeffrey's rule is consistent with the model.
"""

from uev.core import (
    AnalyticPosterior,
    Exact,
    SamplePosterior,
    TablePosterior,
    TypeI,
    TypeII,
    TypeIII,
    dispatch_infer,
)
from uev.errors import *  # noqa: F401,F403
from uev.model import BaseModel, Density, log_joint, normal, point_mass, truncated_normal
from uev.montecarlo import EngineConfig, WeightedSamples

__version__ = "0.1.0"

__all__ = [
    "AnalyticPosterior", "BaseModel", "Density", "EngineConfig", "Exact",
    "SamplePosterior", "TablePosterior", "TypeI", "TypeII", "TypeIII",
    "WeightedSamples", "dispatch_infer", "log_joint", "normal", "point_mass",
    "truncated_normal",
]
