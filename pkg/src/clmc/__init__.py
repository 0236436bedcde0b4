"""Composite-likelihood estimation and simultaneous inference for clustered data.

The package fits marginal/conditional composite-likelihood models to
clustered responses (gaussian, probit, pairwise-association binary, gamma),
estimates the sandwich covariance of the estimator, and applies simultaneous
multiple-comparison procedures whose sharpest member thresholds the
statistics at the equicoordinate quantile of their estimated joint normal
law.  A self-contained quasi-Monte Carlo engine supplies the multivariate
normal rectangle probabilities and quantiles, and a replicated simulation
harness estimates familywise error rates and power for whole scenarios.
"""

from .data import (
    Cluster,
    ClusteredDataset,
    ContrastFamily,
    ValidationReport,
    build_contrasts,
    validate_dataset,
)
from .inference import (
    MethodDecision,
    TestReport,
    adjust,
    correlation_matrix_V,
    evaluate_tests,
    test_statistics,
)
from .models import (
    FitError,
    FitOptions,
    FitResult,
    SeparationError,
    gamma_cl_fit,
    mvn_cl_fit,
    mvn_mle_fit,
    probit_cl_fit,
    quadexp_cl_fit,
    sandwich,
)
from .mvnprob import (
    ProbEstimate,
    QmcConfig,
    chi_square_quantile,
    equicoordinate_quantile,
    mvn_rectangle_prob,
    std_normal_cdf,
    std_normal_quantile,
    studentized_range_quantile,
)
from .harness import (
    ExperimentConfig,
    SimSummary,
    preset_config,
    run_experiment,
    sample_size_scan,
)
from .simgen import (
    Exchangeable,
    ScenarioSpec,
    Unstructured,
    gen_gamma,
    gen_mvn,
    gen_probit,
    gen_quadexp,
    generate,
    quadexp_enumeration_oracle,
)

__version__ = "0.1.0"
