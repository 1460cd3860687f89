"""Simulation toolkit for model stealing attacks and query-perturbation defenses."""

__version__ = "0.1.0"

from .attackers import KNN, ElasticNet, Lasso, LinearClassERM, PolyGIC, attack
from .core import (
    FittedModel,
    LinearClassifierTarget,
    LinearTarget,
    LossFunction,
    PolynomialTarget,
    ProbClassifierTarget,
    QuerySet,
    ResponseKind,
    ResponseVector,
    UtilityBudget,
    empirical_utility_loss,
    evaluate_target,
)
from .defenses import (
    MVP,
    BoundaryShift,
    ConstantNoising,
    IIDNoising,
    LabelFlip,
    LongRangeNoising,
    MisleadingShift,
    NoDefense,
    OrderDisguise,
    RandomShuffle,
    defend,
)
from .errors import (
    CalibrationError,
    ConfigurationError,
    ConvergenceError,
    DegenerateTargetError,
    FitError,
    ModelPrivacyError,
    SingularDesignError,
)
from .evaluation import PrivacyEstimate, privacy_level_estimate, symmetric_difference, zero_one_error
from .harness import ScenarioConfig, load_scenario, parse_config, run_scenario
