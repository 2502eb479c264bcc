"""Smooth penalty family for the obstacle constraint u >= psi.

zeta(w) vanishes for w >= eps, is nondecreasing and concave, C^2, and has
slope saturating at ``slope`` for w <= 0 so its derivative stays bounded.
With z = (eps - w) / eps:

    zeta'(w) = slope * (3 z^2 - 2 z^3)        0 <= z <= 1
    zeta'(w) = slope                          z >= 1

The floor zeta(0) = -slope * eps / 2 is the value the penalised equation can
push against; it must lie below the obstacle source term (L~ - r) psi, which
on the exercise side equals delta e^x - r K >= -r K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PenaltyFamily:
    epsilon: float
    floor: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ValueError("penalty epsilon must be > 0")
        if self.floor > 0.0:
            raise ValueError("penalty floor zeta(0) must be <= 0")

    @property
    def slope(self) -> float:
        return -2.0 * self.floor / self.epsilon

    @property
    def shape(self) -> str:
        return "smoothstep-derivative, linear below 0"

    @classmethod
    def for_put(
        cls, strike: float, r: float, rel_eps: float = 1e-4, safety: float = 2.0
    ) -> "PenaltyFamily":
        """Default family: eps = rel_eps K, floor = -safety max(r K, 1e-3 K)."""
        scale = max(r * strike, 1e-3 * strike)
        return cls(epsilon=rel_eps * strike, floor=-safety * scale)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "floor": self.floor, "shape": self.shape}


def apply_penalty(
    w: np.ndarray | float, penalty: PenaltyFamily
) -> tuple[np.ndarray, np.ndarray]:
    """Return (zeta(w), zeta'(w))."""
    w = np.asarray(w, dtype=float)
    eps, L = penalty.epsilon, penalty.slope
    z = (eps - w) / eps
    zc = np.clip(z, 0.0, 1.0)
    dz = L * zc * zc * (3.0 - 2.0 * zc)
    val = -eps * L * (zc**3 - 0.5 * zc**4)
    below = z > 1.0
    val = np.where(below, -L * (0.5 * eps - w), val)
    return val, dz
