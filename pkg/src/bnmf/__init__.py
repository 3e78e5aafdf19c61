"""Quasi-Bayesian non-negative matrix factorization toolkit."""

from .bound import (
    BoundBreakdown,
    BoundQuery,
    best_bound_over_grid,
    corollary_bound,
    query_from_factorization,
    theorem_bound,
)
from .core import (
    ConfigError,
    DenseMatrix,
    Factorization,
    ModelConfig,
    NumericalError,
    ShapeError,
    effective_rank,
    frobenius_sq,
    mse,
    random_init,
    reconstruct,
)
from .data import MatrixParseError, SyntheticSpec, generate_synthetic, load_matrix, save_matrix
from .map_optimizer import (
    MapConfig,
    MapTrace,
    grad_U,
    grad_V,
    map_objective,
    projected_gradient_block,
    run_map,
    update_gamma_mode,
)
from .priors import (
    ConstantsUnavailableError,
    ElementPrior,
    Exponential,
    GammaShape,
    HeavyTail,
    InverseGamma,
    PriorConstants,
    PriorSpec,
    ScaleHyperprior,
    TruncatedGaussian,
    element_log_density,
    element_prior_from_string,
    hyper_log_density,
    hyperprior_from_string,
    log_prior,
    prior_constants,
    scaled_log_density,
)
from .sampler import (
    ChainState,
    GibbsConfig,
    RowConditional,
    gibbs_step,
    row_conditional_exponential,
    row_conditional_truncgauss,
    run_gibbs,
    sample_gamma_conditional,
    sample_inverse_gaussian,
    sample_truncated_mvn,
    sample_univariate_truncnorm,
)
from .sweep import SweepReport, sweep_b

__version__ = "0.1.0"
