"""Tensor lattice over (t, x, y) with x = log-price and y = variance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import Problem


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    """Node counts and bounds. Counts are numbers of nodes, not intervals."""

    nt: int
    nx: int
    ny: int
    t_max: float
    x_min: float
    x_max: float
    y_max: float
    y_min: float = 0.0
    y_grading: str = "uniform"


@dataclass(frozen=True, eq=False)
class Lattice:
    t_nodes: np.ndarray
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    y_grading: str = "uniform"

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.t_nodes.size, self.x_nodes.size, self.y_nodes.size)

    @property
    def n_nodes(self) -> int:
        nt, nx, ny = self.shape
        return nt * nx * ny

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def s_nodes(self) -> np.ndarray:
        return np.exp(self.x_nodes)

    def spec_dict(self) -> dict:
        return {
            "nt": int(self.t_nodes.size),
            "nx": int(self.x_nodes.size),
            "ny": int(self.y_nodes.size),
            "t_max": float(self.t_nodes[-1]),
            "x_min": float(self.x_nodes[0]),
            "x_max": float(self.x_nodes[-1]),
            "y_max": float(self.y_nodes[-1]),
            "y_grading": self.y_grading,
        }

    def same_as(self, other: "Lattice") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.t_nodes, other.t_nodes)
            and np.array_equal(self.x_nodes, other.x_nodes)
            and np.array_equal(self.y_nodes, other.y_nodes)
        )


def build_lattice(config: GridConfig) -> Lattice:
    c = config
    if min(c.nt, c.nx, c.ny) < 2:
        raise LatticeError("every axis needs at least 2 nodes")
    if c.y_min != 0.0:
        raise LatticeError("the variance axis must start at y = 0")
    if not (c.t_max > 0.0 and c.x_max > c.x_min and c.y_max > 0.0):
        raise LatticeError("inconsistent lattice bounds")
    t = np.linspace(0.0, c.t_max, c.nt)
    x = np.linspace(c.x_min, c.x_max, c.nx)
    if c.y_grading == "uniform":
        y = np.linspace(0.0, c.y_max, c.ny)
    elif c.y_grading == "sqrt":
        k = np.arange(c.ny, dtype=float)
        y = c.y_max * (k / (c.ny - 1)) ** 2
    else:
        raise LatticeError(f"unknown y grading {c.y_grading!r}")
    return Lattice(t_nodes=t, x_nodes=x, y_nodes=y, y_grading=c.y_grading)


def problem_lattice(
    problem: Problem,
    nx: int = 161,
    ny: int = 81,
    nt: int = 100,
    *,
    x_half_width: float | None = None,
    y_max: float | None = None,
    y_grading: str = "uniform",
) -> Lattice:
    """Lattice centred on log(strike) sized for ``problem``.

    Defaults: log-price half-width 1.5 (never below 4 sqrt(max(theta, y0) T)),
    y_max = 10 max(theta, y0). With the desk defaults y0 falls on a node.
    """
    p, spec = problem.params, problem.spec
    v_ref = max(p.theta, problem.y0)
    half = 1.5 if x_half_width is None else float(x_half_width)
    half = max(half, 4.0 * math.sqrt(v_ref * spec.maturity))
    centre = math.log(spec.strike)
    if abs(math.log(problem.spot) - centre) > 0.6 * half:
        half = abs(math.log(problem.spot) - centre) / 0.6
    if y_max is None:
        y_max = 10.0 * v_ref if v_ref > 0 else 0.4
    if y_max < 3.0 * v_ref:
        raise LatticeError("y_max must be at least 3 max(theta, y0)")
    cfg = GridConfig(
        nt=nt,
        nx=nx,
        ny=ny,
        t_max=spec.maturity,
        x_min=centre - half,
        x_max=centre + half,
        y_max=y_max,
        y_grading=y_grading,
    )
    return build_lattice(cfg)
