"""Special functions: reference values, recurrences, and quadrature checks.

Frozen expected values were computed with mpmath at 30 decimal digits;
integral oracles use scipy's adaptive quadrature over the target density,
which shares no code path with the functions under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from evidencer.errors import DomainError
from evidencer.special import (
    QuadratureRule,
    digamma,
    gamma_quadrature,
    log_gamma,
    log_sum_exp,
    reg_incomplete_beta,
    reg_lower_incomplete_gamma,
)

EULER_GAMMA = 0.5772156649015329


def gamma_pdf(q, shape):
    with np.errstate(divide="ignore"):
        return np.exp((shape - 1.0) * np.log(q) - q - log_gamma(shape))


class TestLogGamma:
    def test_integer_anchors(self):
        assert log_gamma(1.0) == 0.0
        assert log_gamma(2.0) == 0.0

    def test_half(self):
        # ln Gamma(1/2) = ln sqrt(pi); mpmath reference
        np.testing.assert_allclose(
            log_gamma(0.5), 0.5723649429247001, rtol=1e-12
        )

    def test_accuracy_against_reference(self):
        # reference values from mpmath.loggamma at 30 digits
        cases = {
            1e-3: 6.9071788853838537,
            0.25: 1.2880225246980775,
            3.75: 1.4868155785934171,
            142.5: 562.6460872862025,
            1e6: 12815504.569147612,
        }
        for x, expected in cases.items():
            np.testing.assert_allclose(log_gamma(x), expected, rtol=1e-12)

    def test_rejects_bad_input(self):
        for bad in (0.0, -1.0, np.nan, np.inf):
            with pytest.raises(DomainError):
                log_gamma(bad)

    def test_array_input(self):
        out = log_gamma(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out, [0.0, 0.0, np.log(2.0)])


class TestDigamma:
    def test_euler_mascheroni(self):
        np.testing.assert_allclose(digamma(1.0), -EULER_GAMMA, atol=1e-10)
        np.testing.assert_allclose(digamma(2.0), 1.0 - EULER_GAMMA, atol=1e-10)

    def test_asymptotic_at_large_argument(self):
        # psi(x) ~ ln x - 1/(2x) - 1/(12 x^2) for large x
        x = 1e6
        expected = np.log(x) - 1.0 / (2.0 * x) - 1.0 / (12.0 * x**2)
        np.testing.assert_allclose(digamma(x), expected, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=1e6))
    def test_recurrence(self, x):
        np.testing.assert_allclose(
            digamma(x + 1.0) - digamma(x), 1.0 / x, atol=1e-10, rtol=1e-10
        )

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            digamma(0.0)
        with pytest.raises(DomainError):
            digamma(-2.5)


class TestRegLowerIncompleteGamma:
    def test_exponential_cdf(self):
        np.testing.assert_allclose(
            reg_lower_incomplete_gamma(1.0, 1.0), 1.0 - np.exp(-1.0), rtol=1e-12
        )

    def test_zero(self):
        assert reg_lower_incomplete_gamma(3.2, 0.0) == 0.0

    def test_against_quadrature_oracle(self):
        # adaptive quadrature of the Gamma density, frozen from a direct run
        a, x = 2.5, 3.7
        oracle, err = integrate.quad(
            lambda t: gamma_pdf(t, a), 0.0, x, epsabs=1e-14, epsrel=1e-14
        )
        assert err < 1e-12
        np.testing.assert_allclose(
            reg_lower_incomplete_gamma(a, x), oracle, atol=1e-10
        )
        np.testing.assert_allclose(oracle, 0.8074495669206042, atol=1e-12)

    def test_monotone_and_saturating(self):
        rng = np.random.default_rng(11)
        for a in rng.uniform(0.2, 30.0, size=8):
            xs = np.linspace(0.0, 50.0 * a, 400)
            vals = reg_lower_incomplete_gamma(a, xs)
            assert np.all(np.diff(vals) >= 0)
            assert vals[-1] > 1.0 - 1e-12
            assert np.all((vals >= 0) & (vals <= 1))

    def test_rejects_bad_shape(self):
        with pytest.raises(DomainError):
            reg_lower_incomplete_gamma(0.0, 1.0)
        with pytest.raises(DomainError):
            reg_lower_incomplete_gamma(2.0, -1.0)


class TestRegIncompleteBeta:
    def test_uniform_cdf(self):
        assert reg_incomplete_beta(0.5, 1.0, 1.0) == pytest.approx(0.5)

    def test_power_law(self):
        # Beta(2, 1) CDF is x^2
        assert reg_incomplete_beta(0.5, 2.0, 1.0) == pytest.approx(0.25)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(min_value=0.01, max_value=0.99),
        st.floats(min_value=0.5, max_value=50.0),
        st.floats(min_value=0.5, max_value=50.0),
    )
    def test_reflection(self, x, a, b):
        # x bounded away from the endpoints so that 1 - x is itself exact
        # enough for the identity to be float-meaningful
        total = reg_incomplete_beta(x, a, b) + reg_incomplete_beta(1.0 - x, b, a)
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_reflection_at_endpoints(self):
        assert reg_incomplete_beta(0.0, 2.0, 3.0) == 0.0
        assert reg_incomplete_beta(1.0, 2.0, 3.0) == 1.0

    def test_monotone_in_x(self):
        xs = np.linspace(0, 1, 200)
        vals = reg_incomplete_beta(xs, 3.3, 1.7)
        assert np.all(np.diff(vals) >= 0)

    def test_rejects_out_of_range(self):
        with pytest.raises(DomainError):
            reg_incomplete_beta(1.5, 1.0, 1.0)
        with pytest.raises(DomainError):
            reg_incomplete_beta(-0.1, 1.0, 1.0)
        with pytest.raises(DomainError):
            reg_incomplete_beta(0.5, 0.0, 1.0)


class TestLogSumExp:
    def test_equal_entries_exact(self):
        assert log_sum_exp([-1000.0, -1000.0]) == -1000.0 + np.log(2.0)

    def test_deep_underflow_is_absorbed(self):
        # the smaller entry sits ~1000 log-units down; its exponential
        # underflows to zero and the result is the maximum, exactly
        assert log_sum_exp([-1000.0, -2000.0]) == -1000.0

    def test_singleton(self):
        assert log_sum_exp([0.0]) == 0.0

    def test_never_overflows(self):
        assert np.isfinite(log_sum_exp([1e308, 1e308]))

    def test_neg_inf_entries(self):
        assert log_sum_exp([-np.inf, 0.0]) == 0.0
        assert log_sum_exp([-np.inf, -np.inf]) == -np.inf

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            log_sum_exp([])

    def test_axis(self):
        arr = np.array([[0.0, 0.0], [np.log(3.0), -np.inf]])
        np.testing.assert_allclose(
            log_sum_exp(arr, axis=1), [np.log(2.0), np.log(3.0)]
        )

    @settings(max_examples=300, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=-1e6, max_value=1e6),
            min_size=1,
            max_size=16,
        )
    )
    def test_bounds(self, values):
        out = log_sum_exp(values)
        top = max(values)
        assert out >= top - 1e-12
        assert out <= top + np.log(len(values)) + 1e-12

    def test_monte_carlo_gamma_moments(self):
        # 1e6 draws reproduce the Gamma mean and mean-log within 3 SE
        rng = np.random.default_rng(2024)
        a, b = 3.7, 1.9
        draws = rng.gamma(a, 1.0 / b, size=1_000_000)
        mean_se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - a / b) < 3 * mean_se
        logs = np.log(draws)
        log_se = logs.std(ddof=1) / np.sqrt(draws.size)
        assert abs(logs.mean() - (digamma(a) - np.log(b))) < 3 * log_se


class TestGammaQuadrature:
    def test_domain_matches_exponential_quantile(self):
        rule = gamma_quadrature(1.0, rel_tail=1e-12)
        np.testing.assert_allclose(
            rule.domain[1], -np.log(1e-12), rtol=1e-9
        )

    @pytest.mark.parametrize("shape", [0.5, 1.0, 2.5, 7.0, 40.0, 300.0])
    def test_density_normalization(self, shape):
        rule = gamma_quadrature(shape)
        total = rule.integrate(gamma_pdf(rule.nodes, shape))
        np.testing.assert_allclose(total, 1.0, atol=1e-10)

    @pytest.mark.parametrize("shape", [0.5, 1.0, 2.5, 7.0, 40.0])
    def test_mean_recovery(self, shape):
        rule = gamma_quadrature(shape)
        mean = rule.integrate(rule.nodes * gamma_pdf(rule.nodes, shape))
        np.testing.assert_allclose(mean, shape, atol=1e-8)

    def test_rule_invariants(self):
        rule = gamma_quadrature(3.0)
        assert np.all(np.diff(rule.nodes) > 0)
        assert np.all(rule.weights > 0)
        assert rule.nodes[0] > 0.0
        assert rule.nodes[-1] < rule.domain[1]

    def test_invalid_construction(self):
        with pytest.raises(DomainError):
            gamma_quadrature(0.0)
        with pytest.raises(DomainError):
            gamma_quadrature(1.0, rel_tail=0.5)
        with pytest.raises(DomainError):
            QuadratureRule(
                nodes=np.array([1.0, 0.5]),
                weights=np.array([1.0, 1.0]),
                domain=(0.0, 2.0),
            )
        with pytest.raises(DomainError):
            QuadratureRule(
                nodes=np.array([0.5, 1.0]),
                weights=np.array([1.0, -1.0]),
                domain=(0.0, 2.0),
            )
