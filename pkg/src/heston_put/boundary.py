"""Exercise-boundary extraction and its structural checks.

The critical price b(t, y) is the largest spot below which the American put
equals its payoff. On a lattice it is read off column by column from the
contact set {u <= psi + tol}, scanning upward from x_min and stopping below
the strike.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pde.solver import PriceSurface
from .report import ReportEntry

OK, UNRESOLVED, CAPPED = "ok", "unresolved", "capped"


@dataclass(eq=False)
class ExerciseBoundary:
    """b(t_i, y_k) for t_i < T. ``cell`` holds the s-spacing at each extracted point."""

    t_nodes: np.ndarray
    y_nodes: np.ndarray
    b_values: np.ndarray  # (nt - 1, ny)
    cell: np.ndarray  # (nt - 1, ny)
    flags: np.ndarray  # (nt - 1, ny) of str
    tol: float
    strike: float
    s_min: float
    maturity: float
    contact_index: np.ndarray = field(default=None)  # last contact node per column

    @property
    def resolved(self) -> np.ndarray:
        return self.flags == OK

    def interpolate(self, t: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Bilinear in (t, y); held constant beyond the first/last nodes."""
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        tn, yn, b = self.t_nodes, self.y_nodes, self.b_values
        ti = np.clip(np.searchsorted(tn, t, side="right") - 1, 0, tn.size - 1)
        ti1 = np.minimum(ti + 1, tn.size - 1)
        dt = tn[ti1] - tn[ti]
        wt = np.where(dt > 0, np.clip((t - tn[ti]) / np.where(dt > 0, dt, 1.0), 0.0, 1.0), 0.0)
        yc = np.clip(y, yn[0], yn[-1])
        yi = np.clip(np.searchsorted(yn, yc, side="right") - 1, 0, yn.size - 2)
        wy = (yc - yn[yi]) / (yn[yi + 1] - yn[yi])
        b00, b01 = b[ti, yi], b[ti, yi + 1]
        b10, b11 = b[ti1, yi], b[ti1, yi + 1]
        return (1 - wt) * ((1 - wy) * b00 + wy * b01) + wt * ((1 - wy) * b10 + wy * b11)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "y", "b", "flag"])
            for i, t in enumerate(self.t_nodes):
                for k, y in enumerate(self.y_nodes):
                    w.writerow([repr(float(t)), repr(float(y)),
                                repr(float(self.b_values[i, k])), self.flags[i, k]])


def extract_boundary(surface: PriceSurface, tol: float | None = None) -> ExerciseBoundary:
    if surface.kind != "american":
        raise ValueError("exercise boundary needs an American surface")
    if tol is None:
        tol = 2.0 * surface.penalty.epsilon
    if surface.penalty is not None and tol <= surface.penalty.epsilon:
        raise ValueError("extraction tolerance must exceed the penalty epsilon")
    lat = surface.lattice
    K = surface.spec.strike
    s = lat.s_nodes
    below = np.flatnonzero(s < K)
    if below.size == 0:
        raise ValueError("lattice has no spot below the strike")
    j_top = int(below[-1])
    excess = surface.excess()[:-1, : j_top + 1, :]  # (nt-1, j_top+1, ny)
    nt1, _, ny = excess.shape
    contact = excess <= tol
    # first non-contact node per column, scanning up from x_min
    first_gap = np.where(contact.all(axis=1), j_top + 1, np.argmin(contact, axis=1))

    b = np.empty((nt1, ny))
    cell = np.empty((nt1, ny))
    flags = np.full((nt1, ny), OK, dtype=object)
    last = first_gap - 1
    for i in range(nt1):
        for k in range(ny):
            g = first_gap[i, k]
            if g == 0:
                b[i, k] = s[0]
                cell[i, k] = s[1] - s[0]
                flags[i, k] = UNRESOLVED
            elif g > j_top:
                b[i, k] = s[j_top]
                cell[i, k] = s[j_top + 1] - s[j_top]
                flags[i, k] = CAPPED
            else:
                e0, e1 = excess[i, g - 1, k], excess[i, g, k]
                frac = (tol - e0) / (e1 - e0)
                b[i, k] = s[g - 1] + frac * (s[g] - s[g - 1])
                cell[i, k] = s[g] - s[g - 1]
    return ExerciseBoundary(
        t_nodes=lat.t_nodes[:-1].copy(),
        y_nodes=lat.y_nodes.copy(),
        b_values=b,
        cell=cell,
        flags=flags,
        tol=float(tol),
        strike=K,
        s_min=float(s[0]),
        maturity=float(lat.t_nodes[-1]),
        contact_index=last,
    )


def check_boundary_monotone(b: ExerciseBoundary) -> ReportEntry:
    """t -> b nondecreasing, y -> b nonincreasing, each up to one cell."""
    vals, cell = b.b_values, b.cell
    ok = b.resolved
    # t direction: b(t_i) - b(t_{i+1}) should be <= 0
    dt_viol = (vals[:-1] - vals[1:]) / np.maximum(cell[:-1], cell[1:])
    dt_viol = np.where(ok[:-1] & ok[1:], dt_viol, -np.inf)
    # y direction: b(y_{k+1}) - b(y_k) should be <= 0
    dy_viol = (vals[:, 1:] - vals[:, :-1]) / np.maximum(cell[:, 1:], cell[:, :-1])
    dy_viol = np.where(ok[:, 1:] & ok[:, :-1], dy_viol, -np.inf)
    worst_t = float(dt_viol.max()) if dt_viol.size else 0.0
    worst_y = float(dy_viol.max()) if dy_viol.size else 0.0
    measured = max(worst_t, worst_y, 0.0)
    details = {"t_violation_cells": max(worst_t, 0.0), "y_violation_cells": max(worst_y, 0.0)}
    inversions = []
    for idx in np.argwhere(dt_viol > 1.0)[:20]:
        inversions.append({"axis": "t", "i": int(idx[0]), "k": int(idx[1])})
    for idx in np.argwhere(dy_viol > 1.0)[:20]:
        inversions.append({"axis": "y", "i": int(idx[0]), "k": int(idx[1])})
    details["inversions"] = inversions
    return ReportEntry(
        prop="boundary_monotone",
        anchor="t -> b(t,y) nondecreasing; y -> b(t,y) nonincreasing",
        measured=measured,
        threshold=1.0,
        passed=measured <= 1.0,
        details=details,
    )


def check_t_sections(b: ExerciseBoundary, terminal_fraction: float = 0.1) -> ReportEntry:
    """Discrete E_t = intersection of E_u over u > t.

    On the grid: b(t_i, y) <= min_{j > i} b(t_j, y), and the right limit
    b(t_{i+1}, y) agrees with b(t_i, y) to within one cell. Near maturity the
    boundary moves like a power of T - t and no grid resolves it, so the
    right-limit gap is only required for t_{i+1} <= (1 - terminal_fraction) T;
    the gap in the excluded layer is still reported.
    """
    vals, cell, ok = b.b_values, b.cell, b.resolved
    n = vals.shape[0]
    if n < 2:
        return ReportEntry("t_sections", "E_t = intersection over u > t of E_u", 0.0, 1.0, True,
                           {"note": "single time row"})
    future_min = np.minimum.accumulate(vals[::-1], axis=0)[::-1]  # min over j >= i
    later_min = future_min[1:]
    both = ok[:-1] & ok[1:]
    excess_cells = np.where(both, (vals[:-1] - later_min) / cell[:-1], -np.inf)
    gap_cells = np.abs(np.where(both, (vals[1:] - vals[:-1]) / cell[:-1], 0.0))
    gated = b.t_nodes[1:] <= (1.0 - terminal_fraction) * b.maturity + 1e-12 * b.maturity
    worst_excess = float(excess_cells.max())
    worst_gap = float(gap_cells[gated].max()) if gated.any() else 0.0
    terminal_gap = float(gap_cells[~gated].max()) if (~gated).any() else 0.0
    measured = max(worst_excess, worst_gap, 0.0)
    return ReportEntry(
        prop="t_sections",
        anchor="E_t = intersection over u > t of E_u",
        measured=measured,
        threshold=1.0,
        passed=measured <= 1.0,
        details={
            "intersection_violation_cells": max(worst_excess, 0.0),
            "max_right_limit_gap_cells": worst_gap,
            "terminal_layer_gap_cells": terminal_gap,
            "terminal_fraction": terminal_fraction,
            "strict_pairs": int(np.sum(gap_cells > 0)),
        },
    )


@dataclass
class CensusRow:
    level: int
    columns: int
    jumps: int

    @property
    def fraction(self) -> float:
        return self.jumps / self.columns if self.columns else 0.0


def jump_census(boundaries: list[ExerciseBoundary], cells: float = 5.0) -> dict:
    """Count y-columns holding a t-increment larger than ``cells`` cells, per level.

    Diagnostic only: continuity of t -> b(t, y) is not established, so the
    table is reported without a pass bar.
    """
    rows = []
    for level, b in enumerate(boundaries):
        inc = np.diff(b.b_values, axis=0) / b.cell[:-1]
        ok = b.resolved[:-1] & b.resolved[1:]
        jumping = np.any(np.where(ok, inc, 0.0) > cells, axis=0)
        rows.append(CensusRow(level=level, columns=int(b.y_nodes.size), jumps=int(jumping.sum())))
    fractions = [r.fraction for r in rows]
    nonincreasing = all(b <= a + 1e-15 for a, b in zip(fractions, fractions[1:]))
    return {
        "threshold_cells": cells,
        "levels": [
            {"level": r.level, "columns": r.columns, "jumps": r.jumps, "fraction": r.fraction}
            for r in rows
        ],
        "fraction_nonincreasing": nonincreasing,
    }


def write_census(census: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(census, indent=2, sort_keys=True), encoding="utf-8")
