"""Possibilistic instrumental-variable regression.

Inference on a scalar treatment effect when the instruments may violate
exogeneity: the analyst supplies a set of tolerated direct effects, and the
library returns a possibility curve over the treatment effect, calibrated
confidence intervals, and lower/upper probabilities for one-sided
hypotheses, plus a simulation harness for coverage studies.
"""

from .dataset import (
    CanonicalData,
    IvDataset,
    load_csv,
    project_out_covariates,
    standardise_instruments,
)
from .errors import (
    ConfigurationError,
    DataError,
    DegeneracyError,
    NumericalError,
    ParseError,
    PossivError,
)
from .posterior import (
    BetaGrid,
    GridOptions,
    HypothesisBounds,
    LevelSet,
    PossibilityCurve,
    build_curve,
    conditional_log_possibility,
    hypothesis_bounds,
    level_set,
    partial_identification_interval,
    tsls_anchor,
)
from .reduced_form import ReducedFormFit, fit_reduced_form, sigma11_hat, t_of_beta
from .simulate import (
    CoverageReport,
    CoverageRow,
    DgpConfig,
    MethodSpec,
    TslsResult,
    experiment1_config,
    experiment2_config,
    generate_dataset,
    parse_method_spec,
    run_experiment,
    tsls,
)
from .structural import (
    StructuralPoint,
    gamma_star,
    log_structural_possibility,
    profile_log_possibility,
    rotation,
    sigma_hat_of_beta,
)
from .validify import (
    Chi2,
    MonteCarlo,
    ValidifiedCurve,
    ValidifyMethod,
    chi2_cdf_1dof,
    simulate_under_beta,
    validify,
    validify_chi2,
    validify_mc,
    validify_mc_point,
)
from .violation import (
    Box,
    L2Ball,
    ProjectionResult,
    Singleton,
    Unconstrained,
    ViolationSet,
    contains,
    format_violation,
    parse_violation,
    project,
    project_box,
    project_l2ball,
)

__version__ = "0.1.0"

__all__ = [
    "BetaGrid",
    "Box",
    "CanonicalData",
    "Chi2",
    "ConfigurationError",
    "CoverageReport",
    "CoverageRow",
    "DataError",
    "DegeneracyError",
    "DgpConfig",
    "GridOptions",
    "HypothesisBounds",
    "IvDataset",
    "L2Ball",
    "LevelSet",
    "MethodSpec",
    "MonteCarlo",
    "NumericalError",
    "ParseError",
    "PossibilityCurve",
    "PossivError",
    "ProjectionResult",
    "ReducedFormFit",
    "Singleton",
    "StructuralPoint",
    "TslsResult",
    "Unconstrained",
    "ValidifiedCurve",
    "ValidifyMethod",
    "ViolationSet",
    "build_curve",
    "chi2_cdf_1dof",
    "conditional_log_possibility",
    "contains",
    "experiment1_config",
    "experiment2_config",
    "fit_reduced_form",
    "format_violation",
    "gamma_star",
    "generate_dataset",
    "hypothesis_bounds",
    "level_set",
    "load_csv",
    "log_structural_possibility",
    "parse_method_spec",
    "parse_violation",
    "partial_identification_interval",
    "profile_log_possibility",
    "project",
    "project_box",
    "project_l2ball",
    "project_out_covariates",
    "rotation",
    "run_experiment",
    "sigma11_hat",
    "sigma_hat_of_beta",
    "simulate_under_beta",
    "standardise_instruments",
    "t_of_beta",
    "tsls",
    "tsls_anchor",
    "validify",
    "validify_chi2",
    "validify_mc",
    "validify_mc_point",
]
