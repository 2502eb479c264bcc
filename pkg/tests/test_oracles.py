import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from heston_put.oracles import (
    american_put_binomial,
    deterministic_variance,
    european_put_quadrature,
    integrated_variance,
)


def black_scholes_put(s, k, t, r, d, total_var):
    sd = math.sqrt(total_var)
    d1 = (math.log(s / k) + (r - d) * t + 0.5 * total_var) / sd
    return k * math.exp(-r * t) * norm.cdf(-d1 + sd) - s * math.exp(-d * t) * norm.cdf(-d1)


class TestVariancePath:
    def test_flat_when_started_at_theta(self):
        assert deterministic_variance(1.5, 0.04, 0.04, 0.7) == pytest.approx(0.04)
        assert integrated_variance(1.5, 0.04, 0.04, 0.0, 2.0) == pytest.approx(0.08)

    @given(st.floats(0.1, 5.0), st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.floats(0.01, 3.0))
    def test_integral_matches_quadrature(self, kappa, theta, y0, t):
        from scipy.integrate import quad

        ref, _ = quad(lambda u: deterministic_variance(kappa, theta, y0, u), 0.0, t)
        assert integrated_variance(kappa, theta, y0, 0.0, t) == pytest.approx(ref, rel=1e-9,
                                                                              abs=1e-14)


class TestEuropeanQuadrature:
    @settings(max_examples=50)
    @given(st.floats(50, 150), st.floats(0.05, 2.0), st.floats(0.0, 0.1), st.floats(0.0, 0.1),
           st.floats(0.001, 0.5))
    def test_matches_closed_form(self, s, t, r, d, v):
        # the closed form is a test-side reference only; the package integrates the density
        ref = black_scholes_put(s, 100.0, t, r, d, v)
        assert european_put_quadrature(s, 100.0, t, r, d, v) == pytest.approx(ref, abs=1e-8)

    def test_zero_variance_is_intrinsic_forward(self):
        val = european_put_quadrature(90.0, 100.0, 1.0, 0.05, 0.0, 0.0)
        assert val == pytest.approx(math.exp(-0.05) * (100.0 - 90.0 * math.exp(0.05)))


class TestBinomial:
    def test_above_european_and_payoff(self):
        v = integrated_variance(1.5, 0.04, 0.04, 0.0, 1.0)
        am = american_put_binomial(100.0, 100.0, 1.0, 0.05, 0.02, 1.5, 0.04, 0.04, steps=1000)
        eu = european_put_quadrature(100.0, 100.0, 1.0, 0.05, 0.02, v)
        assert am > eu
        deep = american_put_binomial(40.0, 100.0, 1.0, 0.05, 0.02, 1.5, 0.04, 0.04, steps=500)
        assert deep == pytest.approx(60.0)

    def test_converges(self):
        args = (100.0, 100.0, 1.0, 0.05, 0.02, 1.5, 0.04, 0.09)
        a = american_put_binomial(*args, steps=1000)
        b = american_put_binomial(*args, steps=2000)
        assert abs(a - b) < 5e-3

    def test_zero_rate_matches_european(self):
        # no early exercise for a put without interest
        v = integrated_variance(1.5, 0.04, 0.04, 0.0, 1.0)
        am = american_put_binomial(100.0, 100.0, 1.0, 0.0, 0.02, 1.5, 0.04, 0.04, steps=2000)
        assert am == pytest.approx(european_put_quadrature(100.0, 100.0, 1.0, 0.0, 0.02, v),
                                   abs=5e-3)

    def test_needs_variance(self):
        with pytest.raises(ValueError):
            american_put_binomial(100.0, 100.0, 1.0, 0.05, 0.0, 1.5, 0.0, 0.0)
