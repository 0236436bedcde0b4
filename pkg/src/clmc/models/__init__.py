from .base import FitError, FitOptions, FitResult, SeparationError, sandwich
from .gamma import gamma_cl_fit, gamma_cl_loglik, gamma_cl_score
from .mvn import mvn_cl_fit, mvn_cl_loglik, mvn_cl_score, mvn_mle_fit
from .probit import probit_cl_fit, probit_cl_loglik, probit_cl_score
from .quadexp import quadexp_cl_fit, quadexp_cl_loglik, quadexp_cl_score

__all__ = [
    "FitError",
    "FitOptions",
    "FitResult",
    "SeparationError",
    "sandwich",
    "mvn_cl_fit",
    "mvn_mle_fit",
    "mvn_cl_loglik",
    "mvn_cl_score",
    "probit_cl_fit",
    "probit_cl_loglik",
    "probit_cl_score",
    "quadexp_cl_fit",
    "quadexp_cl_loglik",
    "quadexp_cl_score",
    "gamma_cl_fit",
    "gamma_cl_loglik",
    "gamma_cl_score",
]
