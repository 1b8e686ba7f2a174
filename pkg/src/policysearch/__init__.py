"""
Policy Search Toolkit - steepest, natural, EM and approximate Newton policy search.

Exact search directions on tabular MDPs, Monte Carlo estimators for sampled
environments, and a seeded benchmark workbench.
"""

__version__ = "0.1.0"

from .exact import ExactEngine
from .exceptions import (
    ConfigError,
    NonAscent,
    NotClosedForm,
    OperationError,
    PolicySearchError,
    SeedMatrixMismatch,
    ValidationError,
)
from .mdp import SearchDirectionBundle, TabularMdp, load_mdp, random_mdp, validate
from .policies import GaussianLinearPolicy, GibbsPolicy, reparametrize
from .workbench import RunResult, Workbench

__all__ = [
    "Workbench",
    "RunResult",
    "ExactEngine",
    "TabularMdp",
    "SearchDirectionBundle",
    "GibbsPolicy",
    "GaussianLinearPolicy",
    "reparametrize",
    "load_mdp",
    "random_mdp",
    "validate",
    "PolicySearchError",
    "ValidationError",
    "ConfigError",
    "OperationError",
    "NonAscent",
    "NotClosedForm",
    "SeedMatrixMismatch",
]
