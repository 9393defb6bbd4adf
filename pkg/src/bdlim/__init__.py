"""Bayesian distributed lag interaction models.

Typical use::

    from bdlim import build_basis, BdlimData, BdlimSpec, ChainConfig, run_chains, summarize_fit

    basis, scores = build_basis(X)
    data = BdlimData(y, scores, groups, Z, basis.column_sums)
    chains = run_chains(BdlimSpec(pattern="b", n_groups=2, covariate_count=Z.shape[1]),
                        data, ChainConfig())
    summary = summarize_fit(chains, data, basis)
"""

from .basis import (
    BasisSet,
    ExposureMatrix,
    build_basis,
    compute_pc_basis,
    presmooth_exposures,
    project_scores,
    read_exposures_csv,
    smooth_covariance,
)
from .errors import (
    BdlimError,
    ConstraintError,
    DataError,
    DegenerateCovarianceError,
    DispatchError,
    InsufficientDataError,
    ParameterError,
    SamplerError,
    SamplerStuckError,
    SeparationError,
    UnsupportedError,
)
from .gig import sample_gig
from .model import (
    BdlimData,
    BdlimSpec,
    Family,
    ModelState,
    Pattern,
    linear_predictor,
    log_likelihood,
    log_prior,
)
from .posterior import (
    FitSummary,
    ModelScore,
    WeightSummary,
    anova_decomposition,
    cumulative_effect,
    dic,
    identify_windows,
    mlppd,
    normalized_model_probs,
    pairwise_posterior_prob,
    pointwise_bands,
    project_weight_mean,
    score_models,
    summarize_fit,
)
from .samplers import (
    ChainConfig,
    PosteriorSample,
    ess_constrained,
    gibbs_linear_reparam,
    run_chains,
)
from .simulation import MetricsTable, Scenario, get_scenario, run_scenario

__all__ = [
    "BasisSet",
    "ExposureMatrix",
    "build_basis",
    "compute_pc_basis",
    "presmooth_exposures",
    "project_scores",
    "read_exposures_csv",
    "smooth_covariance",
    "BdlimError",
    "ConstraintError",
    "DataError",
    "DegenerateCovarianceError",
    "DispatchError",
    "InsufficientDataError",
    "ParameterError",
    "SamplerError",
    "SamplerStuckError",
    "SeparationError",
    "UnsupportedError",
    "BdlimData",
    "BdlimSpec",
    "Family",
    "ModelState",
    "Pattern",
    "linear_predictor",
    "log_likelihood",
    "log_prior",
    "FitSummary",
    "ModelScore",
    "WeightSummary",
    "anova_decomposition",
    "cumulative_effect",
    "dic",
    "identify_windows",
    "mlppd",
    "normalized_model_probs",
    "pairwise_posterior_prob",
    "pointwise_bands",
    "project_weight_mean",
    "score_models",
    "summarize_fit",
    "ChainConfig",
    "PosteriorSample",
    "ess_constrained",
    "gibbs_linear_reparam",
    "run_chains",
    "sample_gig",
    "MetricsTable",
    "Scenario",
    "get_scenario",
    "run_scenario",
]

__version__ = "0.1.0"
