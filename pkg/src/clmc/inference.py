"""Simultaneous test statistics and multiple-comparison procedures.

Given a fit with estimated sandwich covariance Gamma and a contrast family C,
the statistic for hypothesis i is

    T_i = C_i' theta_hat / sqrt(C_i' Gamma C_i / n),

jointly asymptotically N(0, V) with V the correlation matrix obtained by
standardizing D = C Gamma C'.  Each procedure turns the T vector into
per-hypothesis reject decisions: one-step normal-margin cutoffs (Bonferroni,
Dunn-Sidak), the Holm step-down rule, the projection (Scheffe) cutoff, the
studentized-range (Tukey) cutoff for all-pairwise families, and the
equicoordinate quantile of N(0, V) ("mnq"), which accounts for the estimated
correlation between the statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ContrastFamily
from .models.base import FitResult
from .mvnprob import (
    QmcConfig,
    chi_square_quantile,
    equicoordinate_quantile,
    mvn_rectangle_prob,
    std_normal_cdf,
    std_normal_quantile,
    studentized_range_quantile,
)

__all__ = [
    "METHODS",
    "MethodDecision",
    "TestReport",
    "test_statistics",
    "correlation_matrix_V",
    "adjust",
    "evaluate_tests",
]

METHODS = ("bonferroni", "sidak", "holm", "scheffe", "tukey", "mnq")


def _beta_block(fit_or_matrix, cf: ContrastFamily, what: str) -> np.ndarray:
    """Leading block of theta/Gamma addressed by a width-p contrast family."""
    m = np.asarray(fit_or_matrix)
    width = cf.p
    if m.ndim == 1:
        if len(m) < width:
            raise ValueError(f"{what}: contrasts address {width} parameters, fit has {len(m)}")
        return m[:width]
    if m.shape[0] < width:
        raise ValueError(f"{what}: contrasts address {width} parameters, fit has {m.shape[0]}")
    return m[:width, :width]


def test_statistics(fit: FitResult, cf: ContrastFamily, n: int) -> np.ndarray:
    """Standardized contrast statistics T_i; uses the coefficient block of
    theta/Gamma when the model carries trailing extra parameters."""
    theta = _beta_block(fit.theta_hat, cf, "theta")
    gamma = _beta_block(fit.gamma_hat, cf, "gamma")
    c = cf.matrix
    num = c @ theta
    var = np.einsum("ij,jk,ik->i", c, gamma, c) / n
    if np.any(var <= 0):
        raise ValueError("nonpositive contrast variance; sandwich estimate is degenerate")
    return num / np.sqrt(var)


def correlation_matrix_V(gamma_hat: np.ndarray, cf: ContrastFamily) -> np.ndarray:
    """Correlation matrix of the T vector: standardize D = C Gamma C'."""
    gamma = _beta_block(gamma_hat, cf, "gamma")
    d = cf.matrix @ gamma @ cf.matrix.T
    diag = np.diag(d)
    if np.any(diag <= 0):
        raise ValueError("zero contrast variance in D; cannot standardize")
    s = 1.0 / np.sqrt(diag)
    v = d * np.outer(s, s)
    v = 0.5 * (v + v.T)
    np.fill_diagonal(v, 1.0)
    return v


@dataclass(frozen=True)
class MethodDecision:
    method: str
    reject: np.ndarray
    threshold: float | None = None
    per_hypothesis_threshold: np.ndarray | None = None
    adjusted_p: np.ndarray | None = None

    @property
    def global_reject(self) -> bool:
        return bool(np.any(self.reject))


def _two_sided_p(t: np.ndarray) -> np.ndarray:
    return 2.0 * std_normal_cdf(-np.abs(t))


def _holm(t: np.ndarray, alpha: float) -> MethodDecision:
    c = len(t)
    p = _two_sided_p(t)
    order = np.argsort(p, kind="stable")
    reject = np.zeros(c, dtype=bool)
    levels = np.empty(c)
    stopped = False
    adj = np.empty(c)
    running = 0.0
    for k, idx in enumerate(order):
        level = alpha / (c - k)
        levels[idx] = level
        running = max(running, min(1.0, (c - k) * p[idx]))
        adj[idx] = running
        if not stopped and p[idx] <= level:
            reject[idx] = True
        else:
            stopped = True
    return MethodDecision(
        method="holm",
        reject=reject,
        per_hypothesis_threshold=std_normal_quantile(1.0 - levels / 2.0),
        adjusted_p=adj,
    )


def adjust(
    method: str,
    t: np.ndarray,
    v_hat: np.ndarray,
    alpha: float,
    cf: ContrastFamily,
    cfg: QmcConfig = QmcConfig(),
    mnq_adjusted_p: bool = False,
) -> MethodDecision:
    """Apply one multiple-comparison procedure to the statistics `t`."""
    t = np.asarray(t, dtype=float)
    c = len(t)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if cf.c != c:
        raise ValueError("statistics and contrast family sizes differ")
    abs_t = np.abs(t)

    if method == "bonferroni":
        cut = std_normal_quantile(1.0 - alpha / (2.0 * c))
        return MethodDecision("bonferroni", abs_t > cut, cut,
                              adjusted_p=np.minimum(1.0, c * _two_sided_p(t)))
    if method == "sidak":
        cut = std_normal_quantile(1.0 - (1.0 - (1.0 - alpha) ** (1.0 / c)) / 2.0)
        return MethodDecision("sidak", abs_t > cut, cut,
                              adjusted_p=1.0 - (1.0 - _two_sided_p(t)) ** c)
    if method == "holm":
        return _holm(t, alpha)
    if method == "scheffe":
        cut = float(np.sqrt(chi_square_quantile(int(np.linalg.matrix_rank(cf.matrix)), 1.0 - alpha)))
        return MethodDecision("scheffe", abs_t > cut, cut)
    if method == "tukey":
        if cf.kind != "all_pairwise":
            raise ValueError("tukey applies to all-pairwise families only")
        cut = studentized_range_quantile(cf.p, alpha) / np.sqrt(2.0)
        return MethodDecision("tukey", abs_t > cut, cut)
    if method == "mnq":
        cut = equicoordinate_quantile(v_hat, alpha, cfg)
        adj = None
        if mnq_adjusted_p:
            adj = np.array(
                [
                    1.0 - mvn_rectangle_prob(-np.full(c, ti), np.full(c, ti), v_hat, cfg).value
                    if ti > 0.0
                    else 1.0
                    for ti in abs_t
                ]
            )
        return MethodDecision("mnq", abs_t > cut, cut, adjusted_p=adj)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class TestReport:
    """Joint test of one contrast family under one fitted model."""

    t_stats: np.ndarray
    v_hat: np.ndarray
    alpha: float
    labels: tuple[str, ...]
    decisions: dict = field(default_factory=dict)

    def global_reject(self, method: str) -> bool:
        return self.decisions[method].global_reject


def evaluate_tests(
    fit: FitResult,
    cf: ContrastFamily,
    n: int,
    alpha: float = 0.05,
    methods: tuple[str, ...] = ("mnq", "bonferroni", "sidak", "holm", "scheffe"),
    cfg: QmcConfig = QmcConfig(),
    mnq_adjusted_p: bool = False,
) -> TestReport:
    """Compute T, estimate V, and run each requested procedure."""
    t = test_statistics(fit, cf, n)
    v = correlation_matrix_V(fit.gamma_hat, cf)
    decisions = {
        m: adjust(m, t, v, alpha, cf, cfg, mnq_adjusted_p=mnq_adjusted_p) for m in methods
    }
    return TestReport(t_stats=t, v_hat=v, alpha=alpha, labels=cf.labels, decisions=decisions)
