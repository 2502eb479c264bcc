"""Finite-difference discretisation of L~ - r on a lattice slice.

Unknowns are flattened C-order from an (nx, ny) array, index = j * ny + k.
Rows at x_min / x_max are Dirichlet rows and are left empty; the solver
turns them into identity rows.

Interior rows: central second differences, the 7-point cross stencil whose
corners follow sign(rho), and central first differences unless a coupling
would go negative, in which case the drift is upwinded. The row at y = 0 is
the degenerate first-order operator (r - delta) d_x + kappa theta d_y - r,
differenced one-sidedly. The row at y_max drops u_yy (and the cross term)
and upwinds the inward-pointing variance drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..model import HestonParams
from .lattice import Lattice

_TIE = 1e-12

# neighbour offsets (dj, dk)
_OFFSETS = {
    "W": (-1, 0),
    "E": (1, 0),
    "S": (0, -1),
    "N": (0, 1),
    "SW": (-1, -1),
    "NE": (1, 1),
    "NW": (-1, 1),
    "SE": (1, -1),
}


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix: sp.csr_matrix
    dirichlet: np.ndarray  # bool mask over flattened nodes
    negative_couplings: int
    min_coupling: float
    upwinded_x: int
    upwinded_y: int

    @property
    def pde_rows(self) -> np.ndarray:
        return ~self.dirichlet

    @property
    def m_matrix(self) -> bool:
        return self.negative_couplings == 0

    def diagnostics(self) -> dict:
        return {
            "negative_couplings": int(self.negative_couplings),
            "min_coupling": float(self.min_coupling),
            "upwinded_x_rows": int(self.upwinded_x),
            "upwinded_y_rows": int(self.upwinded_y),
        }


def assemble_operator(
    lattice: Lattice, params: HestonParams, t: float | None = None
) -> DiscreteOperator:
    """Sparse discrete L~ - r. Coefficients are time-homogeneous, so ``t`` is unused."""
    x, y = lattice.x_nodes, lattice.y_nodes
    nx, ny = x.size, y.size
    hx = lattice.dx
    p = params
    r = p.r

    coef = {name: np.zeros((nx, ny)) for name in _OFFSETS}

    # interior variance nodes 0 < k < ny-1
    if ny >= 3:
        ki = slice(1, ny - 1)
        yi = y[1:-1]
        hm = y[1:-1] - y[:-2]
        hp = y[2:] - y[1:-1]
        axx = 0.5 * yi
        ayy = 0.5 * p.sigma**2 * yi
        cross = p.rho * p.sigma * yi  # multiplies u_xy
        bx = p.r - p.delta - 0.5 * yi
        by = p.kappa * (p.theta - yi)
        c = np.abs(cross) / (hx * (hm + hp))

        # x direction
        w_c = axx / hx**2 - bx / (2 * hx) - c
        e_c = axx / hx**2 + bx / (2 * hx) - c
        # couplings that vanish in exact arithmetic must not flip the scheme
        # on rounding, so ties within _TIE of the row scale count as zero
        tie_x = _TIE * (axx / hx**2 + np.abs(bx) / hx + c)
        up_x = (w_c < -tie_x) | (e_c < -tie_x)
        w_u = axx / hx**2 + np.maximum(-bx, 0.0) / hx - c
        e_u = axx / hx**2 + np.maximum(bx, 0.0) / hx - c
        west = np.where(up_x, w_u, np.maximum(w_c, 0.0))
        east = np.where(up_x, e_u, np.maximum(e_c, 0.0))

        # y direction, non-uniform spacing
        s2 = 2.0 * ayy / (hm * (hm + hp))
        n2 = 2.0 * ayy / (hp * (hm + hp))
        s_c = s2 - by * hp / (hm * (hm + hp)) - c
        n_c = n2 + by * hm / (hp * (hm + hp)) - c
        tie_y = _TIE * (s2 + n2 + np.abs(by) / np.minimum(hm, hp) + c)
        up_y = (s_c < -tie_y) | (n_c < -tie_y)
        s_u = s2 + np.maximum(-by, 0.0) / hm - c
        n_u = n2 + np.maximum(by, 0.0) / hp - c
        south = np.where(up_y, s_u, np.maximum(s_c, 0.0))
        north = np.where(up_y, n_u, np.maximum(n_c, 0.0))

        # central first differences on a non-uniform axis carry a diagonal
        # term; it is recovered below from the zero row sum, so only the
        # off-diagonal part is tracked here.
        coef["W"][:, ki] = west
        coef["E"][:, ki] = east
        coef["S"][:, ki] = south
        coef["N"][:, ki] = north
        pos = cross > 0
        coef["NE"][:, ki] = np.where(pos, c, 0.0)
        coef["SW"][:, ki] = np.where(pos, c, 0.0)
        coef["NW"][:, ki] = np.where(pos, 0.0, c)
        coef["SE"][:, ki] = np.where(pos, 0.0, c)
        n_up_x = int(up_x.sum()) * (nx - 2)
        n_up_y = int(up_y.sum()) * (nx - 2)
    else:
        n_up_x = n_up_y = 0

    # y = 0: degenerate transport row
    b0 = p.r - p.delta
    coef["E"][:, 0] = max(b0, 0.0) / hx
    coef["W"][:, 0] = max(-b0, 0.0) / hx
    coef["N"][:, 0] = p.kappa * p.theta / (y[1] - y[0])

    # y = y_max: u_yy = 0, cross term dropped
    ym = y[-1]
    bx_m = p.r - p.delta - 0.5 * ym
    ax_m = 0.5 * ym / hx**2
    if ax_m >= abs(bx_m) / (2 * hx):
        coef["W"][:, -1] = ax_m - bx_m / (2 * hx)
        coef["E"][:, -1] = ax_m + bx_m / (2 * hx)
    else:
        coef["W"][:, -1] = ax_m + max(-bx_m, 0.0) / hx
        coef["E"][:, -1] = ax_m + max(bx_m, 0.0) / hx
    by_m = p.kappa * (p.theta - ym)
    coef["S"][:, -1] = max(-by_m, 0.0) / (y[-1] - y[-2])

    # x boundaries are Dirichlet rows
    for arr in coef.values():
        arr[0, :] = 0.0
        arr[-1, :] = 0.0

    rows, cols, vals = [], [], []
    idx = np.arange(nx * ny).reshape(nx, ny)
    diag = np.zeros((nx, ny))
    off_min = np.inf
    n_negative = 0
    for name, (dj, dk) in _OFFSETS.items():
        a = coef[name]
        js = slice(max(0, -dj), nx - max(0, dj))
        ks = slice(max(0, -dk), ny - max(0, dk))
        block = a[js, ks]
        nz = block != 0.0
        if not nz.any():
            continue
        src = idx[js, ks][nz]
        dst = idx[
            slice(max(0, dj), nx - max(0, -dj)), slice(max(0, dk), ny - max(0, -dk))
        ][nz]
        rows.append(src)
        cols.append(dst)
        vals.append(block[nz])
        diag[js, ks] -= block
        off_min = min(off_min, float(block[nz].min()))
        n_negative += int((block[nz] < 0).sum())
    interior = np.ones((nx, ny), dtype=bool)
    interior[0, :] = interior[-1, :] = False
    diag = np.where(interior, diag - r, 0.0)
    rows.append(idx[interior])
    cols.append(idx[interior])
    vals.append(diag[interior])

    n = nx * ny
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return DiscreteOperator(
        matrix=mat,
        dirichlet=~interior.ravel(),
        negative_couplings=n_negative,
        min_coupling=off_min if np.isfinite(off_min) else 0.0,
        upwinded_x=n_up_x,
        upwinded_y=n_up_y,
    )
