"""Tests for the special-function and beta-density primitives.

Reference values are frozen from independent oracles: mpmath for the
gamma-family functions and adaptive quadrature for density integrals.
"""

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import betaln
from scipy.stats import kstest

from robustbeta.exceptions import DomainError, NonIntegrableError
from robustbeta.special import (
    beta_logpdf,
    beta_star_moments,
    digamma,
    log_beta_fn,
    powered_density_log_integral,
    sample_beta,
    trigamma,
)


class TestDigamma:
    def test_at_one(self):
        # mpmath oracle: psi(1) = -EulerGamma
        assert digamma(1.0) == pytest.approx(-0.5772156649015329, rel=1e-12)

    def test_at_half(self):
        # closed form -gamma - 2 ln 2
        assert digamma(0.5) == pytest.approx(-1.9635100260214235, rel=1e-12)

    def test_recurrence_at_two(self):
        assert digamma(2.0) == pytest.approx(digamma(1.0) + 1.0, rel=1e-13)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            digamma(0.0)
        with pytest.raises(DomainError):
            digamma(-1.5)

    def test_accuracy_against_mpmath(self):
        rng = np.random.default_rng(10)
        xs = np.concatenate([10 ** rng.uniform(-6, 4, 200), [1e-6, 0.37, 5.999, 6.0, 8.0]])
        for x in xs:
            expected = float(mp.digamma(mp.mpf(float(x))))
            assert digamma(float(x)) == pytest.approx(expected, rel=1e-12)

    def test_vectorized_matches_scalar(self):
        xs = np.array([0.2, 1.0, 3.7, 42.0])
        np.testing.assert_allclose(digamma(xs), [digamma(float(x)) for x in xs], rtol=1e-15)


class TestTrigamma:
    def test_at_one(self):
        assert trigamma(1.0) == pytest.approx(np.pi**2 / 6.0, rel=1e-12)

    def test_at_half(self):
        assert trigamma(0.5) == pytest.approx(np.pi**2 / 2.0, rel=1e-12)

    def test_recurrence_at_two(self):
        assert trigamma(2.0) == pytest.approx(trigamma(1.0) - 1.0, rel=1e-12)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            trigamma(-0.1)

    def test_accuracy_against_mpmath(self):
        rng = np.random.default_rng(11)
        for x in 10 ** rng.uniform(-6, 4, 200):
            expected = float(mp.polygamma(1, mp.mpf(float(x))))
            assert trigamma(float(x)) == pytest.approx(expected, rel=1e-10)


class TestRecurrenceProperty:
    def test_digamma_recurrence_grid(self):
        xs = 10 ** np.linspace(-4, 4, 400)
        lhs = digamma(xs + 1.0)
        rhs = digamma(xs) + 1.0 / xs
        scale = np.maximum(np.abs(lhs), 1.0)
        assert np.max(np.abs(lhs - rhs) / scale) < 1e-12

    def test_trigamma_recurrence_grid(self):
        xs = 10 ** np.linspace(-4, 4, 400)
        lhs = trigamma(xs + 1.0)
        rhs = trigamma(xs) - 1.0 / xs**2
        scale = np.maximum(np.abs(lhs), 1.0)
        assert np.max(np.abs(lhs - rhs) / scale) < 1e-12


class TestLogBeta:
    def test_one_one(self):
        assert log_beta_fn(1.0, 1.0) == 0.0

    def test_two_two(self):
        assert log_beta_fn(2.0, 2.0) == pytest.approx(np.log(1.0 / 6.0), rel=1e-14)

    def test_against_mpmath(self):
        # frozen from mpmath: log B(45, 45)
        expected = float(mp.log(mp.beta(45, 45)))
        assert log_beta_fn(45.0, 45.0) == pytest.approx(expected, rel=1e-13)

    def test_large_shapes_stable(self):
        value = log_beta_fn(1e6, 1e6)
        assert np.isfinite(value)
        expected = float(mp.log(mp.beta(mp.mpf(1e6), mp.mpf(1e6))))
        assert value == pytest.approx(expected, rel=1e-12)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            log_beta_fn(0.0, 1.0)


class TestBetaLogpdf:
    def test_uniform(self):
        # mu = 0.5, phi = 2 is the uniform density
        assert beta_logpdf(0.3, 0.5, 2.0) == pytest.approx(0.0, abs=1e-15)

    def test_beta22_at_half(self):
        # Beta(2, 2) density at 0.5 is 1.5
        assert beta_logpdf(0.5, 0.5, 4.0) == pytest.approx(np.log(1.5), rel=1e-14)

    def test_boundary_rejected(self):
        with pytest.raises(DomainError):
            beta_logpdf(0.0, 0.5, 2.0)
        with pytest.raises(DomainError):
            beta_logpdf(1.0, 0.5, 2.0)

    @pytest.mark.parametrize("mu,phi", [(0.06, 90.0), (0.5, 2.0), (0.9, 5.0),
                                        (0.3, 40.0), (0.01, 150.0)])
    def test_integrates_to_one(self, mu, phi):
        value, _ = quad(lambda y: np.exp(beta_logpdf(y, mu, phi)), 0.0, 1.0,
                        epsabs=1e-12, epsrel=1e-12, limit=200)
        assert value == pytest.approx(1.0, abs=1e-8)


class TestPoweredIntegral:
    def test_power_one_exact_zero(self):
        assert powered_density_log_integral(0.37, 13.0, 1.0) == 0.0

    def test_uniform_any_power(self):
        assert powered_density_log_integral(0.5, 2.0, 3.0) == pytest.approx(0.0, abs=1e-14)

    def test_against_quadrature(self):
        mu, phi, c = 0.3, 10.0, 1.5
        a, b = mu * phi, (1 - mu) * phi

        def integrand(y):
            return np.exp(c * ((a - 1) * np.log(y) + (b - 1) * np.log1p(-y) - betaln(a, b)))

        value, _ = quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        assert powered_density_log_integral(mu, phi, c) == pytest.approx(np.log(value), abs=1e-8)

    def test_non_integrable(self):
        # mu*phi = 0.5: the 2.5-powered first shape is 2.5*(0.5-1)+1 < 0
        with pytest.raises(NonIntegrableError):
            powered_density_log_integral(0.05, 10.0, 2.5)


class TestSampleBeta:
    def test_uniform_case_ks(self):
        rng = np.random.default_rng(123)
        draws = sample_beta(0.5, 2.0, rng, size=1_000_000)
        statistic = kstest(draws, "uniform").statistic
        assert statistic < 0.002

    def test_mean_near_boundary(self):
        rng = np.random.default_rng(7)
        mu, phi, n = 0.06, 90.0, 1_000_000
        draws = sample_beta(mu, phi, rng, size=n)
        se = np.sqrt(mu * (1 - mu) / (1 + phi) / n)
        assert abs(draws.mean() - mu) < 4 * se

    def test_variance_matches_moment(self):
        rng = np.random.default_rng(8)
        mu, phi, n = 0.3, 25.0, 400_000
        draws = sample_beta(mu, phi, rng, size=n)
        var_expected = mu * (1 - mu) / (1 + phi)
        # SE of the sample variance from the fourth central moment
        centered = draws - draws.mean()
        se_var = np.sqrt((np.mean(centered**4) - np.var(draws) ** 2) / n)
        assert abs(np.var(draws) - var_expected) < 4 * se_var

    def test_deterministic_stream(self):
        a = sample_beta(0.3, 9.0, np.random.default_rng(99), size=100)
        b = sample_beta(0.3, 9.0, np.random.default_rng(99), size=100)
        np.testing.assert_array_equal(a, b)

    def test_open_interval(self):
        rng = np.random.default_rng(5)
        draws = sample_beta(0.02, 0.5, rng, size=20_000)
        assert np.all(draws > 0.0) and np.all(draws < 1.0)


class TestStarMoments:
    def test_against_quadrature(self):
        a, b = 4.5, 12.0
        mu_star, mu_dag, v = beta_star_moments(a, b)

        def density(y):
            return np.exp((a - 1) * np.log(y) + (b - 1) * np.log1p(-y) - betaln(a, b))

        m1, _ = quad(lambda y: np.log(y / (1 - y)) * density(y), 0, 1, epsabs=1e-12)
        m2, _ = quad(lambda y: np.log1p(-y) * density(y), 0, 1, epsabs=1e-12)
        m1sq, _ = quad(lambda y: np.log(y / (1 - y)) ** 2 * density(y), 0, 1, epsabs=1e-12)
        assert mu_star == pytest.approx(m1, abs=1e-9)
        assert mu_dag == pytest.approx(m2, abs=1e-9)
        assert v == pytest.approx(m1sq - m1**2, abs=1e-8)
