"""Heston model constants, the put payoff and the log-price generator.

The pair (X, Y) = (log S, Y) follows

    dX = (r - delta - Y/2) dt + sqrt(Y) dB
    dY = kappa (theta - Y) dt + sigma sqrt(Y) dW,    d<B, W> = rho dt

and everything downstream works in these (t, x, y) coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np


class ParameterError(ValueError):
    """Raised when a parameter set violates a model invariant."""


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    sigma: float
    rho: float
    r: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kappa", "theta", "sigma", "rho", "r", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value}")
        if self.kappa <= 0.0:
            raise ParameterError("kappa must be > 0")
        if self.theta < 0.0:
            raise ParameterError("theta must be >= 0")
        if self.sigma < 0.0:
            raise ParameterError("sigma must be >= 0")
        if not -1.0 < self.rho < 1.0:
            raise ParameterError("rho must lie in (-1, 1)")
        if self.r < 0.0:
            raise ParameterError("r must be >= 0")
        if self.delta < 0.0:
            raise ParameterError("delta must be >= 0")

    @property
    def oracle_mode(self) -> bool:
        """True for sigma == 0: deterministic variance, used only for oracle checks."""
        return self.sigma == 0.0

    @property
    def degenerate(self) -> bool:
        """True outside the theoretical setting (r > 0, theta > 0, sigma > 0)."""
        return self.r == 0.0 or self.theta == 0.0 or self.sigma == 0.0


@dataclass(frozen=True)
class PutSpec:
    strike: float
    maturity: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.strike) and self.strike > 0.0):
            raise ParameterError("strike must be > 0")
        if not (math.isfinite(self.maturity) and self.maturity > 0.0):
            raise ParameterError("maturity must be > 0")


@dataclass(frozen=True)
class GeneratorCoeffs:
    """Coefficients of the discounted generator at one point (x, y).

    The operator reads a_xx u_xx + 2 a_xy u_xy + a_yy u_yy + b_x u_x + b_y u_y + c u,
    so that with a_xy = rho sigma y / 2 the cross term is rho sigma y u_xy.
    """

    a_xx: float
    a_xy: float
    a_yy: float
    b_x: float
    b_y: float
    c: float

    def diffusion_matrix(self) -> np.ndarray:
        return np.array([[self.a_xx, self.a_xy], [self.a_xy, self.a_yy]])


def payoff_put(strike: float, s: float | np.ndarray) -> float | np.ndarray:
    """(strike - s)^+ ; works elementwise on arrays."""
    if strike <= 0.0:
        raise ParameterError("strike must be > 0")
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0):
        raise ParameterError("spot must be >= 0")
    out = np.maximum(strike - arr, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def payoff_put_log(strike: float, x: np.ndarray) -> np.ndarray:
    """Put payoff as a function of log-price, psi(x) = (K - e^x)^+."""
    return np.maximum(strike - np.exp(x), 0.0)


def feller_satisfied(params: HestonParams) -> bool:
    return 2.0 * params.kappa * params.theta >= params.sigma**2


def generator_coeffs(x: float, y: float, params: HestonParams) -> GeneratorCoeffs:
    """Coefficients of L~ - r at (x, y). None of them depend on x."""
    if y < 0.0:
        raise ParameterError("variance y must be >= 0")
    p = params
    return GeneratorCoeffs(
        a_xx=0.5 * y,
        a_xy=0.5 * p.rho * p.sigma * y,
        a_yy=0.5 * p.sigma**2 * y,
        b_x=p.r - p.delta - 0.5 * y,
        b_y=p.kappa * (p.theta - y),
        c=-p.r,
    )


def symmetry_dual(
    params: HestonParams, spec: PutSpec, spot: float
) -> tuple[HestonParams, PutSpec, float]:
    """Map call data to the put data with the same American price.

    Rates swap, correlation flips sign, spot and strike trade places. Under
    the share measure the variance picks up the drift rho sigma y, so the
    mean reversion becomes kappa - rho sigma with the long-run level scaled to
    keep kappa theta fixed. The map is an involution; for rho = 0 it leaves
    kappa and theta alone.
    """
    if spot <= 0.0:
        raise ParameterError("spot must be > 0")
    kappa = params.kappa - params.rho * params.sigma
    if kappa <= 0.0:
        raise ParameterError("kappa - rho*sigma must be > 0 for the dual variance to mean-revert")
    theta = params.kappa * params.theta / kappa
    dual = replace(params, r=params.delta, delta=params.r, rho=-params.rho,
                   kappa=kappa, theta=theta)
    return dual, PutSpec(strike=spot, maturity=spec.maturity), spec.strike


PROBLEM_KEYS = (
    "kappa",
    "theta",
    "sigma",
    "rho",
    "r",
    "delta",
    "strike",
    "maturity",
    "spot",
    "y0",
)


@dataclass(frozen=True)
class Problem:
    """A full pricing problem: model, contract and the initial state (spot, y0)."""

    params: HestonParams
    spec: PutSpec
    spot: float
    y0: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.spot) and self.spot > 0.0):
            raise ParameterError("spot must be > 0")
        if not (math.isfinite(self.y0) and self.y0 >= 0.0):
            raise ParameterError("y0 must be >= 0")

    def to_flat(self) -> dict[str, float]:
        flat = asdict(self.params)
        flat.update(strike=self.spec.strike, maturity=self.spec.maturity)
        flat.update(spot=self.spot, y0=self.y0)
        return {k: float(flat[k]) for k in PROBLEM_KEYS}

    @classmethod
    def from_flat(cls, data: dict[str, Any]) -> "Problem":
        unknown = set(data) - set(PROBLEM_KEYS)
        if unknown:
            raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
        missing = set(PROBLEM_KEYS) - set(data)
        if missing:
            raise ParameterError(f"missing parameter keys: {sorted(missing)}")
        try:
            vals = {k: float(data[k]) for k in PROBLEM_KEYS}
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"non-numeric parameter: {exc}") from exc
        params = HestonParams(
            kappa=vals["kappa"],
            theta=vals["theta"],
            sigma=vals["sigma"],
            rho=vals["rho"],
            r=vals["r"],
            delta=vals["delta"],
        )
        spec = PutSpec(strike=vals["strike"], maturity=vals["maturity"])
        return cls(params=params, spec=spec, spot=vals["spot"], y0=vals["y0"])


def dumps_problem(problem: Problem) -> str:
    return json.dumps(problem.to_flat(), indent=2)


def loads_problem(text: str) -> Problem:
    return Problem.from_flat(json.loads(text))


def load_problem(path: str | Path) -> Problem:
    return loads_problem(Path(path).read_text(encoding="utf-8"))
