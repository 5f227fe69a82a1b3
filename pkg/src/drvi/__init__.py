"""Distributionally robust variational inequalities over finite-mixture
ambiguity sets: posterior box construction, box/simplex optimization with a
risk-measure cross-check, an extragradient equilibrium solver and a
reproducible multi-portfolio benchmark."""

from .ambiguity import (
    BoxSimplexSet,
    EmpiricalBall,
    InfeasibleSetError,
    LowerLevelResult,
    cdf_envelope,
    clip_bounds,
    cvar_value,
    empirical_cdf_envelope,
    empirical_linear_max,
    empirical_radius,
    hausdorff_pair,
    linear_max,
    linf_distance,
    project_box_simplex,
    project_simplex,
    regularized_max,
)
from .bayes import (
    BayesAmbiguityResult,
    DirichletPrior,
    PosteriorSummary,
    SingularInformationError,
    bonferroni_radius,
    build_bayes_set,
    em_map,
    observed_information,
    posterior_summary,
)
from .experiment import (
    BenchmarkReport,
    ExperimentConfig,
    MetricsReport,
    benchmark,
    derive_seed,
    experiment_config,
    metrics,
    run_method,
    solve_truth,
)
from .mixture import (
    DomainViolationError,
    FactorModelConfig,
    GaussianComponent,
    Regime,
    SamplePool,
    build_pools,
    expectations,
    mixture_log_pdf,
    regime_distribution,
    sample_mixture,
)
from .quantiles import chi2_quantile, normal_quantile, tail_quantile
from .vi import (
    LipschitzParams,
    SolveResult,
    SolverConfig,
    bayes_field,
    empirical_field,
    extragradient,
    joint_projector,
    lipschitz_bound,
    natural_residual,
    project_portfolio,
)

__version__ = "0.1.0"
