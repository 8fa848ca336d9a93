import numpy as np
import pytest
from scipy import integrate, special

from vixvolterra.errors import (NumericalError, UnsupportedOperationError,
                                ValidationError)
from vixvolterra.kernels import (CallableKernel, CovarianceSpec,
                                 PowerLawKernel, ZeroKernel,
                                 covariance_matrix,
                                 covariance_matrix_hypergeometric,
                                 cumulative_energy, hyp2f1)


def window_grid(t=0.0, horizon=1.0, window=0.1, n=40, kappa=2.0):
    dates = horizon + window * (np.arange(n + 1) / n) ** kappa
    return CovarianceSpec(t, horizon, tuple(dates))


class TestPowerLawKernel:
    def test_parameter_validation(self):
        with pytest.raises(ValidationError):
            PowerLawKernel(alpha=0.0, hurst=0.1)
        with pytest.raises(ValidationError):
            PowerLawKernel(alpha=1.0, hurst=1.0)

    def test_evaluate_rejects_s_at_or_after_t(self):
        kern = PowerLawKernel(alpha=1.0, hurst=0.3)
        with pytest.raises(ValidationError):
            kern.evaluate(1.0, 1.0)
        with pytest.raises(ValidationError):
            kern.evaluate(1.0, 2.0)

    def test_vol_of_vol_constructor(self):
        # alpha = 2 nu sqrt(Gamma(3/2-H) / (Gamma(H+1) Gamma(2-2H)))
        kern = PowerLawKernel.from_vol_of_vol(nu=1.3, hurst=0.25)
        g = special.gamma
        expected = 2 * 1.3 * np.sqrt(g(1.25) / (g(1.25) * g(1.5)))
        assert kern.alpha == pytest.approx(expected, rel=1e-14)


class TestCumulativeEnergy:
    def test_brownian_case(self):
        kern = PowerLawKernel(alpha=1.0, hurst=0.5)
        assert cumulative_energy(kern, 2.0) == pytest.approx(2.0, abs=1e-14)

    def test_rough_closed_form(self):
        kern = PowerLawKernel(alpha=1.0, hurst=0.1)
        assert cumulative_energy(kern, 1.0) == pytest.approx(5.0, rel=1e-14)

    def test_against_quadrature_oracle(self):
        # frozen from scipy adaptive quadrature of 0.04 s^(2H-1)
        kern = PowerLawKernel(alpha=0.2, hurst=0.1)
        assert cumulative_energy(kern, 0.5) == pytest.approx(
            0.1741101126592227, abs=1e-10)

    def test_monotone(self):
        kern = PowerLawKernel(alpha=0.7, hurst=0.2)
        ts = np.linspace(0.0, 2.0, 50)
        vals = cumulative_energy(kern, ts)
        assert np.all(np.diff(vals) >= 0.0)

    def test_callable_kernel_quadrature(self):
        kern = CallableKernel(lambda tau: np.exp(-tau))
        # int_0^t e^{-2s} ds
        assert cumulative_energy(kern, 1.5) == pytest.approx(
            (1 - np.exp(-3.0)) / 2.0, rel=1e-12)

    def test_non_homogeneous_rejected(self):
        class Weird(PowerLawKernel):
            pass
        kern = Weird(alpha=1.0, hurst=0.3)
        object.__setattr__(kern, "time_homogeneous", False)
        with pytest.raises(UnsupportedOperationError):
            cumulative_energy(kern, 1.0)


class TestCovariance:
    def test_brownian_diagonal(self):
        kern = PowerLawKernel(alpha=1.0, hurst=0.5)
        spec = CovarianceSpec(0.0, 1.0, (1.0, 1.1))
        cov, mean = covariance_matrix(kern, spec)
        assert np.allclose(np.diag(cov), 4.0, atol=1e-12)
        assert np.allclose(cov, 4.0, atol=1e-10)

    def test_single_date_closed_form(self):
        kern = PowerLawKernel(alpha=0.2, hurst=0.1)
        spec = CovarianceSpec(0.0, 1.0, (1.05,))
        cov, mean = covariance_matrix(kern, spec)
        assert cov[0, 0] == pytest.approx(0.3684204208163412, rel=1e-12)
        assert mean[0] == pytest.approx(-cov[0, 0] / 2.0, rel=1e-14)

    @pytest.mark.parametrize("n,kappa", [(40, 1.0), (90, 2.0)])
    def test_quadrature_matches_hypergeometric(self, n, kappa):
        kern = PowerLawKernel(alpha=0.2, hurst=0.1)
        spec = window_grid(n=n, kappa=kappa)
        cov, _ = covariance_matrix(kern, spec)
        ref = covariance_matrix_hypergeometric(kern, spec)
        rel = np.max(np.abs(cov - ref) / (np.abs(ref) + 1e-300))
        assert rel < 1e-8

    def test_symmetry_and_psd(self):
        kern = PowerLawKernel(alpha=0.2, hurst=0.1)
        cov, mean = covariance_matrix(kern, window_grid(n=60))
        assert np.max(np.abs(cov - cov.T)) < 1e-14
        eigs = np.linalg.eigvalsh(cov)
        assert eigs.min() >= -1e-10 * np.trace(cov)
        assert np.allclose(mean, -np.diag(cov) / 2.0, atol=1e-14)

    def test_short_maturity_grid(self):
        kern = PowerLawKernel(alpha=0.2, hurst=0.1)
        spec = window_grid(horizon=7 / 365, window=30 / 365, n=90, kappa=2.0)
        cov, _ = covariance_matrix(kern, spec)
        ref = covariance_matrix_hypergeometric(kern, spec)
        assert np.max(np.abs(cov - ref) / (np.abs(ref) + 1e-300)) < 1e-8

    def test_degenerate_valuation_at_horizon(self):
        kern = PowerLawKernel(alpha=0.2, hurst=0.1)
        spec = CovarianceSpec(1.0, 1.0, (1.0, 1.1))
        cov, mean = covariance_matrix(kern, spec)
        assert not cov.any() and not mean.any()

    def test_zero_kernel(self):
        cov, mean = covariance_matrix(ZeroKernel(), window_grid(n=5))
        assert not cov.any() and not mean.any()

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            CovarianceSpec(0.0, 1.0, (1.2, 1.1))
        with pytest.raises(ValidationError):
            CovarianceSpec(0.5, 0.2, (1.0,))
        with pytest.raises(ValidationError):
            CovarianceSpec(0.0, 1.0, (0.9,))


class TestHyp2f1:
    def test_at_zero(self):
        assert hyp2f1(0.4, 0.6, 1.6, 0.0) == 1.0

    def test_log_identity(self):
        # 2F1(1,1;2;z) = -log(1-z)/z
        assert hyp2f1(1.0, 1.0, 2.0, -1.0) == pytest.approx(
            0.6931471805599453, abs=1e-13)

    def test_against_integral_oracle(self):
        # frozen from quadrature of the Euler integral representation
        assert hyp2f1(0.4, 0.6, 1.6, -1.0) == pytest.approx(
            0.8918546388107303, abs=1e-10)

    @pytest.mark.parametrize("x", [-1e-6, -0.5, -1.0, -5.0, -12.0, -1e3, -1e7])
    def test_deep_negative_axis(self, x):
        a, b, c = 0.4, 0.6, 1.6
        coef = special.gamma(c) / (special.gamma(b) * special.gamma(c - b))
        # the integrand has a boundary layer of width 1/|x| at t = 0
        pts = sorted({0.0, min(1.0, 1.0 / abs(x)), 1.0})
        oracle, quad_err = integrate.quad(
            lambda t: t ** (b - 1) * (1 - t) ** (c - b - 1)
            * (1 - x * t) ** (-a), 0, 1, points=pts, limit=400)
        tol = max(1e-10, 3.0 * coef * quad_err)
        assert hyp2f1(a, b, c, x) == pytest.approx(coef * oracle, abs=tol)

    def test_covariance_parameterisation(self):
        h = 0.1
        a, b, c = 0.5 - h, 0.5 + h, 1.5 + h
        xs = -np.geomspace(1e-6, 1e6, 25)
        ours = hyp2f1(a, b, c, xs)
        ref = special.hyp2f1(a, b, c, xs)
        assert np.max(np.abs(ours - ref)) < 1e-12

    def test_domain_errors(self):
        with pytest.raises(ValidationError):
            hyp2f1(0.4, 0.6, 1.6, 0.5)
        with pytest.raises(ValidationError):
            hyp2f1(0.4, 1.6, 0.6, -1.0)

    def test_integer_difference_deep_branch_rejected(self):
        with pytest.raises(NumericalError):
            hyp2f1(0.5, 1.5, 2.0, -100.0)
