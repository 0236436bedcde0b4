import math

import numpy as np
import pytest

from clmc.mvnprob import (
    ProbEstimate,
    QmcConfig,
    chi_square_quantile,
    equicoordinate_quantile,
    mvn_rectangle_prob,
    std_normal_cdf,
    std_normal_quantile,
    studentized_range_quantile,
)

FAST = QmcConfig(points_per_shift=1024, shifts=8, target_abs_error=1e-3, seed=7)


# ---------------------------------------------------------------------------
# independent oracles, built on stdlib math only


def phi_oracle(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def phi_inv_oracle(p: float) -> float:
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi_oracle(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gammainc_lower_oracle(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by series expansion."""
    if x <= 0.0:
        return 0.0
    term = 1.0 / a
    total = term
    k = 0
    while True:
        k += 1
        term *= x / (a + k)
        total += term
        if abs(term) < 1e-17 * abs(total) or k > 10_000:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_quantile_oracle(df: int, p: float) -> float:
    lo, hi = 0.0, 1e4
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gammainc_lower_oracle(df / 2.0, mid / 2.0) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bvn_rect_oracle(lo1, hi1, lo2, hi2, rho, n=2001):
    """Bivariate rectangle probability by composite-Simpson double integral."""
    xs = np.linspace(lo1, hi1, n)
    ys = np.linspace(lo2, hi2, n)
    det = 1.0 - rho * rho
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    dens = np.exp(-(xg * xg - 2 * rho * xg * yg + yg * yg) / (2 * det)) / (
        2 * np.pi * math.sqrt(det)
    )
    wx = np.ones(n)
    wx[1:-1:2], wx[2:-1:2] = 4.0, 2.0
    w2 = np.outer(wx, wx)
    hx = (hi1 - lo1) / (n - 1)
    hy = (hi2 - lo2) / (n - 1)
    return float((dens * w2).sum() * hx * hy / 9.0)


def range_cdf_oracle(q: float, k: int, n=40001, span=10.0) -> float:
    """Fine-grid Simpson integration of the normal range CDF."""
    zs = np.linspace(-span, span + q, n)
    pdf = np.exp(-0.5 * zs * zs) / math.sqrt(2 * math.pi)
    cdf_lo = 0.5 * (1.0 + np.vectorize(math.erf)(zs / math.sqrt(2)))
    cdf_hi = 0.5 * (1.0 + np.vectorize(math.erf)((zs - q) / math.sqrt(2)))
    integrand = pdf * (cdf_lo - cdf_hi) ** (k - 1)
    w = np.ones(n)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    h = zs[1] - zs[0]
    return k * float((integrand * w).sum() * h / 3.0)


def random_correlation(c, rng):
    a = rng.standard_normal((c, c + 2))
    s = a @ a.T
    d = np.sqrt(np.diag(s))
    return s / np.outer(d, d)


# ---------------------------------------------------------------------------


class TestUnivariate:
    def test_cdf_at_zero(self):
        assert std_normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_cdf_symmetry(self):
        for z in (-5.5, -1.0, 0.3, 2.0, 7.7):
            assert std_normal_cdf(z) + std_normal_cdf(-z) == pytest.approx(1.0, abs=1e-14)

    def test_quantile_0975(self):
        assert std_normal_quantile(0.975) == pytest.approx(phi_inv_oracle(0.975), abs=1e-6)
        assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_cdf_quantile_roundtrip(self):
        for p in (1e-10, 0.001, 0.3, 0.5, 0.999, 1 - 1e-12):
            assert std_normal_cdf(std_normal_quantile(p)) == pytest.approx(p, rel=1e-12)

    def test_tail_no_underflow(self):
        assert std_normal_cdf(-37.0) > 0.0
        assert std_normal_cdf(37.0) < 1.0 or std_normal_cdf(-37.0) > 0.0

    def test_quantile_domain(self):
        with pytest.raises(ValueError):
            std_normal_quantile(0.0)
        with pytest.raises(ValueError):
            std_normal_quantile(1.0)


class TestRectangleProb:
    def test_univariate_interval(self):
        est = mvn_rectangle_prob([-1.96], [1.96], [[1.0]], FAST)
        want = phi_oracle(1.96) - phi_oracle(-1.96)
        assert est.value == pytest.approx(want, abs=1e-12)
        assert est.std_error == 0.0

    def test_independent_square(self):
        est = mvn_rectangle_prob([-1.96, -1.96], [1.96, 1.96], np.eye(2), FAST)
        margin = phi_oracle(1.96) - phi_oracle(-1.96)
        assert est.value == pytest.approx(margin**2, abs=2e-3)
        assert est.value == pytest.approx(0.9025, abs=2.5e-3)

    def test_correlated_square_vs_quadrature(self):
        corr = np.array([[1.0, 0.5], [0.5, 1.0]])
        est = mvn_rectangle_prob([-2.0, -2.0], [2.0, 2.0], corr, FAST)
        assert est.value == pytest.approx(bvn_rect_oracle(-2, 2, -2, 2, 0.5), abs=2e-3)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        corr = random_correlation(4, rng)
        lo = np.array([-1.0, -2.0, -0.5, -3.0])
        hi = np.array([1.5, 0.7, 2.0, 1.0])
        perm = np.array([2, 0, 3, 1])
        a = mvn_rectangle_prob(lo, hi, corr, FAST)
        b = mvn_rectangle_prob(lo[perm], hi[perm], corr[np.ix_(perm, perm)], FAST)
        assert a.value == pytest.approx(b.value, abs=1e-12)

    def test_reproducible_for_fixed_seed(self):
        corr = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 1.0]])
        a = mvn_rectangle_prob([-1, -1, -1], [2, 2, 2], corr, FAST)
        b = mvn_rectangle_prob([-1, -1, -1], [2, 2, 2], corr, FAST)
        assert a.value == b.value
        assert a.std_error == b.std_error

    def test_infinite_bounds_give_one(self):
        corr = random_correlation(3, np.random.default_rng(11))
        est = mvn_rectangle_prob([-np.inf] * 3, [np.inf] * 3, corr, FAST)
        assert est.value == pytest.approx(1.0, abs=max(3 * est.std_error, 1e-9))

    def test_half_infinite_bounds(self):
        est = mvn_rectangle_prob([-np.inf, -np.inf], [0.0, 0.0], np.eye(2), FAST)
        assert est.value == pytest.approx(0.25, abs=2e-3)

    def test_rejects_bad_matrices(self):
        with pytest.raises(ValueError):
            mvn_rectangle_prob([-1], [1], [[2.0]], FAST)
        with pytest.raises(ValueError):
            mvn_rectangle_prob([-1, -1], [1, 1], [[1.0, 1.3], [1.3, 1.0]], FAST)
        with pytest.raises(ValueError):
            mvn_rectangle_prob([-1, -1, -1], [1, 1, 1], np.eye(2), FAST)
        with pytest.raises(ValueError):
            mvn_rectangle_prob([1.0, -1.0], [1.0, 1.0], np.eye(2), FAST)

    def test_psd_repair_accepts_estimation_noise(self):
        corr = np.array([[1.0, 0.9999999999], [0.9999999999, 1.0]])
        est = mvn_rectangle_prob([-1.0, -1.0], [1.0, 1.0], corr, FAST)
        margin = phi_oracle(1.0) - phi_oracle(-1.0)
        assert est.value == pytest.approx(margin, abs=5e-3)


class TestEquicoordinateQuantile:
    def test_single_hypothesis_reduces_to_univariate(self):
        q = equicoordinate_quantile(np.eye(1), 0.05, FAST)
        assert q == pytest.approx(1.959964, abs=1e-3)

    @pytest.mark.parametrize("c", [5, 10])
    def test_identity_matches_dunn_sidak(self, c):
        q = equicoordinate_quantile(np.eye(c), 0.05, FAST)
        sidak = phi_inv_oracle(1.0 - (1.0 - 0.95 ** (1.0 / c)) / 2.0)
        assert q == pytest.approx(sidak, abs=1e-3)

    def test_exchangeable_below_identity(self):
        c = 10
        exch = np.full((c, c), 0.5)
        np.fill_diagonal(exch, 1.0)
        q_exch = equicoordinate_quantile(exch, 0.05, FAST)
        q_ind = equicoordinate_quantile(np.eye(c), 0.05, FAST)
        assert q_exch < q_ind

    def test_never_exceeds_bonferroni(self):
        rng = np.random.default_rng(5)
        for _ in range(8):
            c = int(rng.integers(2, 8))
            corr = random_correlation(c, rng)
            q = equicoordinate_quantile(corr, 0.05, FAST)
            bonf = std_normal_quantile(1.0 - 0.05 / (2 * c))
            assert q <= bonf + 1e-9

    def test_quantile_inverts_rectangle_probability(self):
        corr = np.array([[1.0, 0.4, 0.2], [0.4, 1.0, 0.4], [0.2, 0.4, 1.0]])
        q = equicoordinate_quantile(corr, 0.10, FAST)
        est = mvn_rectangle_prob([-q] * 3, [q] * 3, corr, FAST)
        assert est.value == pytest.approx(0.90, abs=1e-3 + 3 * est.std_error)

    def test_alpha_domain(self):
        with pytest.raises(ValueError):
            equicoordinate_quantile(np.eye(2), 0.0, FAST)


class TestChiSquareQuantile:
    def test_df1_is_squared_normal(self):
        assert chi_square_quantile(1, 0.95) == pytest.approx(1.959963985**2, abs=1e-6)

    def test_df2_closed_form(self):
        assert chi_square_quantile(2, 0.95) == pytest.approx(-2.0 * math.log(0.05), rel=1e-10)

    @pytest.mark.parametrize("df,p", [(9, 0.95), (3, 0.5), (17, 0.99)])
    def test_matches_series_oracle(self, df, p):
        assert chi_square_quantile(df, p) == pytest.approx(
            chi2_quantile_oracle(df, p), rel=1e-8
        )

    def test_domain(self):
        with pytest.raises(ValueError):
            chi_square_quantile(0, 0.5)
        with pytest.raises(ValueError):
            chi_square_quantile(3, 1.0)


class TestStudentizedRange:
    def test_k2_closed_form(self):
        q = studentized_range_quantile(2, 0.05)
        assert q == pytest.approx(math.sqrt(2.0) * 1.959964, abs=1e-4)

    def test_k3_vs_grid_oracle(self):
        q = studentized_range_quantile(3, 0.05)
        assert range_cdf_oracle(q, 3) == pytest.approx(0.95, abs=1e-4)

    def test_increasing_in_k(self):
        qs = [studentized_range_quantile(k, 0.05) for k in (2, 3, 4, 6, 9)]
        assert all(a < b for a, b in zip(qs, qs[1:]))

    def test_domain(self):
        with pytest.raises(ValueError):
            studentized_range_quantile(1, 0.05)


def test_qmc_config_validation():
    with pytest.raises(ValueError):
        QmcConfig(points_per_shift=8)
    with pytest.raises(ValueError):
        QmcConfig(shifts=2)
    with pytest.raises(ValueError):
        QmcConfig(target_abs_error=0.0)


def test_prob_estimate_validation():
    with pytest.raises(ValueError):
        ProbEstimate(1.5, 0.0)
    with pytest.raises(ValueError):
        ProbEstimate(0.5, -1.0)
