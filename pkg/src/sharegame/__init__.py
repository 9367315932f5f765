"""Simulation and structural estimation of a voluntary resource-sharing
game played on endogenous directed networks."""

from .core import (
    COVARIATE_NAMES,
    HET_PARAM_NAMES,
    InfoSet,
    MpcrSpec,
    NetworkState,
    ContributionProfile,
    PARAM_NAMES,
    PlayerCovariates,
    Regime,
    ThetaParams,
    behavioral_beta,
    contribution_grid,
    externality,
    info_sets_from_state,
    mpcr,
    payoff,
    potential,
)
from .choices import ChoiceDistribution, choice_distribution
from .dynamics import (
    GroupDesign,
    GroupPanel,
    SimConfig,
    design_of,
    simulate_design,
    simulate_panel,
    step_exact,
    step_mh,
)
from .estimation import (
    EstimationResult,
    FitOptions,
    fit,
    fit_heterogeneous,
    gradient,
    loglik,
    pseudo_loglik,
)
from .errors import (
    ConfigurationError,
    DataError,
    DomainError,
    NonConvergenceError,
    NumericError,
    SharegameError,
    SingularHessianError,
)

__version__ = "0.1.0"
