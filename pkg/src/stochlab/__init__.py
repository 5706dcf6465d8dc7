"""Stochastic properties of model manifolds, graphs, submersions and immersions.

Parabolicity, stochastic completeness and the Feller property are decided
numerically (tri-state: Holds / Fails / Inconclusive) and cross-checked by
Monte-Carlo simulation of Brownian motion.
"""

__version__ = "0.1.0"

from .errors import (DegenerateImmersionError, DomainError, InternalError, NumericError,
                     PreconditionError, StochlabError)
from .profile import ModelManifold, ProfileKind, WarpingProfile
from .verdicts import Outcome, Property, Verdict

__all__ = [
    "DegenerateImmersionError", "DomainError", "InternalError", "ModelManifold",
    "NumericError", "Outcome", "PreconditionError", "ProfileKind", "Property",
    "StochlabError", "Verdict", "WarpingProfile", "__version__",
]
