"""One-dimensional reference prices for the deterministic-variance limit.

With sigma = 0 the variance follows y(t) = theta + (y0 - theta) e^{-kappa t}
and log S is Gaussian with integrated variance V = int_0^T y(t) dt. These
routines never touch the two-factor machinery and serve as oracles for it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize


def deterministic_variance(kappa: float, theta: float, y0: float, t: float) -> float:
    return theta + (y0 - theta) * math.exp(-kappa * t)


def integrated_variance(kappa: float, theta: float, y0: float, t0: float, t1: float) -> float:
    """int_{t0}^{t1} y(u) du for the deterministic variance path."""
    decay = (math.exp(-kappa * t0) - math.exp(-kappa * t1)) / kappa
    return theta * (t1 - t0) + (y0 - theta) * decay


def european_put_quadrature(
    spot: float,
    strike: float,
    maturity: float,
    r: float,
    delta: float,
    total_variance: float,
) -> float:
    """e^{-rT} E[(K - S_T)^+] with log S_T Gaussian, integrated over the density."""
    v = total_variance
    disc = math.exp(-r * maturity)
    if v <= 0.0:
        return disc * max(strike - spot * math.exp((r - delta) * maturity), 0.0)
    sd = math.sqrt(v)
    mean = math.log(spot) + (r - delta) * maturity - 0.5 * v
    z_star = (math.log(strike) - mean) / sd  # payoff vanishes above z_star

    def integrand(z: float) -> float:
        return (strike - math.exp(mean + sd * z)) * math.exp(-0.5 * z * z)

    lo = min(z_star, -12.0)
    val, _ = integrate.quad(integrand, lo, z_star, epsabs=1e-12, epsrel=1e-12, limit=200)
    return disc * val / math.sqrt(2.0 * math.pi)


def american_put_binomial(
    spot: float,
    strike: float,
    maturity: float,
    r: float,
    delta: float,
    kappa: float,
    theta: float,
    y0: float,
    steps: int = 2000,
) -> float:
    """CRR tree whose step times split the integrated variance evenly.

    Each step carries variance v = V / steps, so up/down factors are constant
    and the tree recombines even though the variance is time-dependent.
    """
    total = integrated_variance(kappa, theta, y0, 0.0, maturity)
    if total <= 0.0:
        raise ValueError("binomial oracle needs positive integrated variance")
    v = total / steps
    times = np.empty(steps + 1)
    times[0] = 0.0
    for i in range(1, steps):
        target = i * v
        times[i] = optimize.brentq(
            lambda t: integrated_variance(kappa, theta, y0, 0.0, t) - target,
            times[i - 1],
            maturity,
            xtol=1e-14,
        )
    times[steps] = maturity
    dts = np.diff(times)
    up = math.exp(math.sqrt(v))
    down = 1.0 / up
    growth = np.exp((r - delta) * dts)
    prob_up = (growth - down) / (up - down)
    if np.any((prob_up <= 0.0) | (prob_up >= 1.0)):
        raise ValueError("binomial oracle: increase steps, probabilities out of (0, 1)")
    discount = np.exp(-r * dts)

    j = np.arange(steps + 1)
    s = spot * up ** (2 * j - steps)
    value = np.maximum(strike - s, 0.0)
    for i in range(steps - 1, -1, -1):
        s = spot * up ** (2 * np.arange(i + 1) - i)
        cont = discount[i] * (prob_up[i] * value[1 : i + 2] + (1 - prob_up[i]) * value[: i + 1])
        value = np.maximum(cont, strike - s)
    return float(value[0])
