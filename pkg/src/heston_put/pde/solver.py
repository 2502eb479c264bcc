"""Backward time-stepping for European and American (penalised) puts."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import optimize
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import splu

from ..model import HestonParams, PutSpec, payoff_put_log
from .lattice import Lattice
from .operator import DiscreteOperator, assemble_operator
from .penalty import PenaltyFamily, apply_penalty

log = logging.getLogger(__name__)

_PERM = "MMD_AT_PLUS_A"


class SolverError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "implicit"  # or "crank-nicolson"
    rannacher_steps: int = 2
    newton_tol_rel: float = 1e-9  # residual tolerance relative to K
    newton_max_iter: int = 60


@dataclass(eq=False)
class PriceSurface:
    """u(t_i, x_j, y_k) on a lattice; values has shape (nt, nx, ny)."""

    values: np.ndarray
    lattice: Lattice
    kind: str
    params: HestonParams
    spec: PutSpec
    penalty: PenaltyFamily | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def payoff(self) -> np.ndarray:
        return payoff_put_log(self.spec.strike, self.lattice.x_nodes)

    def excess(self) -> np.ndarray:
        """u - psi broadcast over (t, x, y)."""
        return self.values - self.payoff[None, :, None]

    def price_at(self, spot: float, y: float, t_index: int = 0) -> float:
        """Interpolated value at (t_i, log spot, y): cubic in x, linear in y."""
        lat = self.lattice
        x = math.log(spot)
        if not (lat.x_nodes[0] <= x <= lat.x_nodes[-1]):
            raise ValueError("spot outside the lattice")
        if not (0.0 <= y <= lat.y_nodes[-1]):
            raise ValueError("variance outside the lattice")
        j = np.searchsorted(lat.x_nodes, x)
        k = np.searchsorted(lat.y_nodes, y)
        u = self.values[t_index]
        if j < lat.x_nodes.size and lat.x_nodes[j] == x:
            if k < lat.y_nodes.size and lat.y_nodes[k] == y:
                return float(u[j, k])
        spline = RectBivariateSpline(lat.x_nodes, lat.y_nodes, u, kx=3, ky=1)
        return float(spline(x, y)[0, 0])

    def to_csv(self, path: str | Path) -> None:
        lat = self.lattice
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "value"])
            for i, t in enumerate(lat.t_nodes):
                for j, x in enumerate(lat.x_nodes):
                    for k, y in enumerate(lat.y_nodes):
                        w.writerow([repr(float(t)), repr(float(x)), repr(float(y)),
                                    repr(float(self.values[i, j, k]))])

    def sidecar(self) -> dict:
        from dataclasses import asdict

        return {
            "kind": self.kind,
            "lattice": self.lattice.spec_dict(),
            "params": asdict(self.params),
            "spec": asdict(self.spec),
            "penalty": self.penalty.to_dict() if self.penalty else None,
            "diagnostics": self.diagnostics,
        }

    def write(self, csv_path: str | Path, json_path: str | Path) -> None:
        self.to_csv(csv_path)
        Path(json_path).write_text(
            json.dumps(self.sidecar(), indent=2, sort_keys=True), encoding="utf-8"
        )


def far_field_low(
    lattice: Lattice, params: HestonParams, spec: PutSpec, tau: float, american: bool
) -> float:
    """Deep in-the-money value at x_min for time-to-maturity tau (unpenalised)."""
    s = math.exp(lattice.x_nodes[0])
    fwd = spec.strike * math.exp(-params.r * tau) - s * math.exp(-params.delta * tau)
    fwd = max(fwd, 0.0)
    if american:
        return max(fwd, spec.strike - s)
    return fwd


def _edge_excess(w_prev: float, dt: float, source: float, r: float, penalty: PenaltyFamily) -> float:
    """One implicit step of dw/dt = r w + zeta(w) - source, solved for w(t - dt).

    This is the penalised equation for u = psi + w with w flat in space; it
    gives the far-field excess over the payoff that the interior relaxes to.
    """
    rhs = w_prev + dt * source

    def f(w: float) -> float:
        return w + dt * (r * w + float(apply_penalty(w, penalty)[0])) - rhs

    lo, hi = min(rhs, 0.0) - 1.0, max(rhs, penalty.epsilon) + 1.0
    while f(lo) > 0.0:
        lo = 2.0 * lo - 1.0
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15)


def _time_steps(lattice: Lattice, config: SolverConfig):
    """Yield (i, sub-steps) going backwards; sub-steps are (dt, theta) pairs."""
    t = lattice.t_nodes
    n = t.size
    for count, i in enumerate(range(n - 2, -1, -1)):
        dt = t[i + 1] - t[i]
        if config.scheme == "implicit":
            yield i, [(dt, 1.0)]
        elif config.scheme == "crank-nicolson":
            if count < config.rannacher_steps:
                yield i, [(0.5 * dt, 1.0), (0.5 * dt, 1.0)]
            else:
                yield i, [(dt, 0.5)]
        else:
            raise ValueError(f"unknown time scheme {config.scheme!r}")


def _solve(
    params: HestonParams,
    spec: PutSpec,
    lattice: Lattice,
    penalty: PenaltyFamily | None,
    config: SolverConfig,
    op: DiscreteOperator | None = None,
) -> PriceSurface:
    american = penalty is not None
    op = op or assemble_operator(lattice, params)
    nt, nx, ny = lattice.shape
    n = nx * ny
    A = op.matrix.tocsc()
    pde = op.pde_rows
    eye = sp.identity(n, format="csc")
    psi2d = np.repeat(payoff_put_log(spec.strike, lattice.x_nodes)[:, None], ny, axis=1)
    psi = psi2d.ravel()
    tol = config.newton_tol_rel * spec.strike

    values = np.empty((nt, nx, ny))
    values[-1] = psi2d
    u = psi.copy()
    low_rows = np.arange(ny)  # j = 0
    high_rows = np.arange((nx - 1) * ny, n)

    # penalised far-field excess over the payoff at x_min / x_max
    psi_low = float(psi[0])
    src_low = params.delta * math.exp(lattice.x_nodes[0]) - params.r * spec.strike
    w_low = w_high = 0.0

    lu_cache: dict[tuple[float, float], object] = {}
    prev = None
    newton_total = 0
    newton_max = 0
    worst_residual = 0.0

    for i, substeps in _time_steps(lattice, config):
        t_sub = lattice.t_nodes[i + 1]
        for dt, theta in substeps:
            t_sub -= dt
            tau = spec.maturity - t_sub
            rhs = u.copy()
            if theta < 1.0:
                rhs = rhs + (1.0 - theta) * dt * (A @ u)
            low = far_field_low(lattice, params, spec, tau, american)
            high = 0.0
            if american:
                w_low = _edge_excess(w_low, dt, src_low, params.r, penalty)
                w_high = _edge_excess(w_high, dt, 0.0, params.r, penalty)
                low = max(low, psi_low + w_low)
                high = w_high
            rhs[low_rows] = low
            rhs[high_rows] = high
            key = (dt, theta)
            M = eye - theta * dt * A
            if not american:
                lu = lu_cache.get(key)
                if lu is None:
                    lu = splu(M.tocsc(), permc_spec=_PERM)
                    lu_cache[key] = lu
                u = lu.solve(rhs)
                continue
            # Newton on M u + dt zeta(u - psi) = rhs over the PDE rows,
            # started from a linear extrapolation in time
            if prev is not None and len(substeps) == 1:
                u = np.maximum(2.0 * u - prev, psi)
            it = 0
            while True:
                z, dz = apply_penalty(u - psi, penalty)
                F = M @ u + dt * np.where(pde, z, 0.0) - rhs
                res = float(np.max(np.abs(F)))
                if res <= tol:
                    break
                if it >= config.newton_max_iter:
                    raise SolverError(
                        f"Newton did not converge at t={t_sub:.6g}",
                        {"residual": res, "iterations": it, "t": t_sub},
                    )
                J = M + sp.diags(dt * np.where(pde, dz, 0.0), format="csc")
                u = u - splu(J.tocsc(), permc_spec=_PERM).solve(F)
                it += 1
            newton_total += it
            newton_max = max(newton_max, it)
            worst_residual = max(worst_residual, res)
        prev = values[i + 1].ravel()
        values[i] = u.reshape(nx, ny)

    diag = {"operator": op.diagnostics(), "scheme": config.scheme}
    if american:
        excess = values - psi2d[None]
        diag.update(
            newton_iterations=newton_total,
            newton_max_per_step=newton_max,
            final_penalty_residual=worst_residual,
            min_excess=float(excess.min()),
        )
        if excess.min() < -penalty.epsilon:
            log.warning("penalised surface undercuts the payoff by more than eps")
    return PriceSurface(
        values=values,
        lattice=lattice,
        kind="american" if american else "european",
        params=params,
        spec=spec,
        penalty=penalty,
        diagnostics=diag,
    )


def solve_european(
    params: HestonParams,
    spec: PutSpec,
    lattice: Lattice,
    config: SolverConfig | None = None,
) -> PriceSurface:
    return _solve(params, spec, lattice, None, config or SolverConfig())


def solve_american(
    params: HestonParams,
    spec: PutSpec,
    lattice: Lattice,
    penalty: PenaltyFamily | None = None,
    config: SolverConfig | None = None,
) -> PriceSurface:
    penalty = penalty or PenaltyFamily.for_put(spec.strike, params.r)
    return _solve(params, spec, lattice, penalty, config or SolverConfig())
