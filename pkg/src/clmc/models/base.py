"""Shared fitting machinery: result/option types, the sandwich covariance,
and a step-halving Fisher-scoring driver used by the likelihood-based fitters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["FitError", "SeparationError", "FitOptions", "FitResult", "sandwich"]

_MAX_CONDITION = 1e12
_DIVERGENCE_BOUND = 1e3
_MAX_HALVINGS = 30


class FitError(RuntimeError):
    """Structural failure while fitting (singular design, bad responses, ...)."""


class SeparationError(FitError):
    """Binary-response estimates diverged, indicating complete separation."""


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    param_tol: float = 1e-8
    score_tol: float = 1e-6
    naive: bool = False

    def __post_init__(self):
        if self.param_tol <= 0 or self.score_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class FitResult:
    """Maximum composite likelihood fit with its sandwich covariance.

    `theta_hat` is the estimated parameter vector; its leading `n_beta`
    entries are the regression coefficients (models with an interaction or
    dispersion parameter append it after the coefficients or report it in
    `nuisance`).  `gamma_hat` estimates the asymptotic covariance of
    sqrt(n) * (theta_hat - theta), i.e. H^-1 J H^-1, or H^-1 when the fit
    was requested with the correlation-ignoring (naive) option.
    """

    theta_hat: np.ndarray
    h_hat: np.ndarray
    j_hat: np.ndarray
    gamma_hat: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    n_beta: int
    nuisance: dict = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.theta_hat[: self.n_beta]


def sandwich(h_hat: np.ndarray, j_hat: np.ndarray, naive: bool = False) -> np.ndarray:
    """H^-1 J H^-1, or plain H^-1 for the naive variant; symmetrized output."""
    h = np.asarray(h_hat, dtype=float)
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise FitError(f"sensitivity matrix is ill-conditioned (cond ~ {cond:.2e})")
    h_inv = np.linalg.inv(h)
    out = h_inv if naive else h_inv @ np.asarray(j_hat, dtype=float) @ h_inv
    return 0.5 * (out + out.T)


def fisher_scoring(
    theta0: np.ndarray,
    loglik: Callable[[np.ndarray], float],
    score: Callable[[np.ndarray], np.ndarray],
    information: Callable[[np.ndarray], np.ndarray],
    opts: FitOptions,
    score_tol: float | None = None,
) -> tuple[np.ndarray, int, bool]:
    """Maximize a concave objective by Fisher scoring with step halving.

    Returns (theta, iterations, converged); converged means the score's sup
    norm fell below the tolerance.  Divergence past a fixed bound raises
    SeparationError, a singular information matrix raises FitError.
    """
    tol = opts.score_tol if score_tol is None else score_tol
    theta = np.array(theta0, dtype=float)
    ll = loglik(theta)
    if not np.isfinite(ll):
        raise FitError("objective not finite at the starting point")
    steps = 0
    while steps < opts.max_iter:
        s = score(theta)
        if np.max(np.abs(s)) <= tol:
            return theta, steps, True
        try:
            step = np.linalg.solve(information(theta), s)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular information matrix") from exc
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = theta + scale * step
            ll_new = loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            break
        steps += 1
        moved = np.max(np.abs(cand - theta))
        theta, ll = cand, ll_new
        if np.max(np.abs(theta)) > _DIVERGENCE_BOUND:
            raise SeparationError("estimates diverged; responses may be separable")
        if moved < opts.param_tol:
            break
    return theta, steps, bool(np.max(np.abs(score(theta))) <= tol)
