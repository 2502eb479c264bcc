"""Orchestration shared by the command line and the acceptance tests."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import analysis
from .boundary import ExerciseBoundary, extract_boundary, jump_census
from .mc import MCConfig, lsmc_price
from .model import Problem, PutSpec, symmetry_dual
from .oracles import american_put_binomial, european_put_quadrature, integrated_variance
from .pde import (
    PenaltyFamily,
    PriceSurface,
    SolverConfig,
    problem_lattice,
    solve_american,
    solve_european,
)
from .report import ReportEntry, VerificationReport


@dataclass(frozen=True)
class GridOptions:
    nx: int = 161
    ny: int = 81
    nt: int = 100
    y_grading: str = "uniform"
    scheme: str = "implicit"
    x_half_width: float | None = None
    y_max: float | None = None
    penalty_eps: float = 1e-4  # relative to K
    levels: int = 3

    def coarsened(self, m: int) -> "GridOptions":
        """Mesh sizes multiplied by 2^m (node counts roughly halved m times).

        The penalty epsilon grows by 4^m with them: the contact tolerance
        offsets b by about sqrt(eps), so epsilon must track h^2 for the whole
        discretisation, and not only the mesh, to be refined.
        """
        f = 2**m

        def shrink(n: int) -> int:
            return max(1, int(round((n - 1) / f))) + 1

        return GridOptions(shrink(self.nx), shrink(self.ny), shrink(self.nt), self.y_grading,
                           self.scheme, self.x_half_width, self.y_max,
                           self.penalty_eps * 4**m, self.levels)


def lattice_for(problem: Problem, grid: GridOptions):
    return problem_lattice(problem, grid.nx, grid.ny, grid.nt, x_half_width=grid.x_half_width,
                           y_max=grid.y_max, y_grading=grid.y_grading)


def penalty_for(problem: Problem, grid: GridOptions) -> PenaltyFamily:
    return PenaltyFamily.for_put(problem.spec.strike, problem.params.r, rel_eps=grid.penalty_eps)


def solve_american_for(problem: Problem, grid: GridOptions) -> PriceSurface:
    return solve_american(problem.params, problem.spec, lattice_for(problem, grid),
                          penalty_for(problem, grid), SolverConfig(scheme=grid.scheme))


def solve_european_for(problem: Problem, grid: GridOptions) -> PriceSurface:
    return solve_european(problem.params, problem.spec, lattice_for(problem, grid),
                          SolverConfig(scheme=grid.scheme))


def spot_price(surface: PriceSurface, problem: Problem) -> float:
    return surface.price_at(problem.spot, problem.y0)


def _parallel(threads: int, jobs: list):
    if threads <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def dual_put_price(problem: Problem, grid: GridOptions) -> float:
    """American call at the original data, priced as a put at the dual data."""
    params, spec, spot = symmetry_dual(problem.params, problem.spec, problem.spot)
    dual = Problem(params, spec, spot, problem.y0)
    return spot_price(solve_american_for(dual, grid), dual)


# ---------------------------------------------------------------- oracles


def deterministic_oracles(problem: Problem, steps: int = 4000) -> dict:
    """Quadrature European and binomial American prices for sigma = 0."""
    p, spec = problem.params, problem.spec
    v = integrated_variance(p.kappa, p.theta, problem.y0, 0.0, spec.maturity)
    eu = european_put_quadrature(problem.spot, spec.strike, spec.maturity, p.r, p.delta, v)
    am = american_put_binomial(problem.spot, spec.strike, spec.maturity, p.r, p.delta,
                               p.kappa, p.theta, problem.y0, steps=steps)
    return {"european": eu, "american": am}


# ---------------------------------------------------------------- convergence


def converge_table(problem: Problem, grid: GridOptions, threads: int = 1) -> list[dict]:
    """One row per level, coarsest first; the last level is ``grid`` itself."""
    if grid.levels < 2:
        raise ValueError("a refinement study needs at least 2 levels")
    grids = [grid.coarsened(grid.levels - 1 - l) for l in range(grid.levels)]
    oracle = deterministic_oracles(problem) if problem.params.sigma == 0.0 else None

    def level(g: GridOptions):
        def job():
            am = solve_american_for(problem, g)
            eu = solve_european_for(problem, g)
            b = extract_boundary(am)
            return am, eu, b
        return job

    results = _parallel(threads, [level(g) for g in grids])
    rows = []
    for l, (g, (am, eu, b)) in enumerate(zip(grids, results)):
        pa, pe = spot_price(am, problem), spot_price(eu, problem)
        mono = [analysis.check_monotone_y(am), analysis.check_monotone_t(am),
                analysis.check_convex_s(am)]
        worst = max(max(-mono[0].measured, 0.0), max(mono[1].measured, 0.0),
                    max(-mono[2].measured, 0.0))
        row = {
            "level": l, "nx": g.nx, "ny": g.ny, "nt": g.nt,
            "american": pa, "european": pe,
            "smooth_fit_gap": analysis.smooth_fit_s_gap(am, b)["value"],
            "max_monotonicity_violation": worst,
        }
        if oracle is not None:
            row["oracle_european"] = oracle["european"]
            row["error_european"] = abs(pe - oracle["european"])
            row["oracle_american"] = oracle["american"]
            row["error_american"] = abs(pa - oracle["american"])
        rows.append(row)
    # price ratios compare successive changes; the gap ratio compares values
    for l, row in enumerate(rows):
        for key in ("american", "european"):
            ratio = ""
            if l >= 2:
                d1 = row[key] - rows[l - 1][key]
                d0 = rows[l - 1][key] - rows[l - 2][key]
                ratio = abs(d1 / d0) if d0 != 0 else ""
            row[f"ratio_{key}"] = ratio
        prev = rows[l - 1]["smooth_fit_gap"] if l >= 1 else float("nan")
        ok = math.isfinite(prev) and prev > 0
        row["ratio_smooth_fit_gap"] = row["smooth_fit_gap"] / prev if ok else ""
    return rows


# ---------------------------------------------------------------- verification


@dataclass
class SuiteResult:
    report: VerificationReport
    american: PriceSurface
    european: PriceSurface
    boundary: ExerciseBoundary
    premium: analysis.PremiumEstimate | None
    census: dict = field(default_factory=dict)


def verification_suite(
    problem: Problem,
    grid: GridOptions,
    mc: MCConfig,
    *,
    smoothing_paths: int = 20_000,
    threads: int = 1,
    include_mc: bool = True,
    config_echo: dict | None = None,
) -> SuiteResult:
    coarse_grid = grid.coarsened(1)
    coarser_grid = grid.coarsened(2)
    jobs = [
        lambda: solve_american_for(problem, grid),
        lambda: solve_european_for(problem, grid),
        lambda: solve_american_for(problem, coarse_grid),
        lambda: solve_american_for(problem, coarser_grid),
    ]
    if include_mc:
        jobs.append(lambda: dual_put_price(problem, grid))
    out = _parallel(threads, jobs)
    am, eu, amc, amcc = out[:4]
    b, bc, bcc = extract_boundary(am), extract_boundary(amc), extract_boundary(amcc)
    census = jump_census([bcc, bc, b])
    extra: list[ReportEntry] = [
        ReportEntry("jump_census", "t -> b(t,y) has left limits off a countable y-set",
                    float(census["levels"][-1]["fraction"]), float("nan"), True, census,
                    status="diagnostic"),
    ]
    premium = None
    K = problem.spec.strike
    pa, pe = spot_price(am, problem), spot_price(eu, problem)
    if include_mc:
        lsmc = lsmc_price(problem.params, problem.spec, problem.spot, problem.y0, mc)
        thr = max(3.0 * lsmc.stderr, 0.005 * K)
        diff = abs(pa - lsmc.price)
        extra.insert(0, ReportEntry(
            "cross_backend", "P(0,s0,y0) by finite differences vs regression Monte Carlo",
            diff, thr, diff <= thr,
            {"pde": pa, "lsmc": lsmc.price, "lsmc_se": lsmc.stderr}))
        premium = analysis.eep_premium(problem.params, problem.spec, problem.spot, problem.y0,
                                       b, mc, american=pa, european=pe)
        extra.append(analysis.check_symmetry(problem.params, problem.spec, problem.spot,
                                             problem.y0, out[4], mc))
        sm_cfg = MCConfig(n_paths=smoothing_paths, n_dates=mc.n_dates, substeps=2,
                          seed=mc.seed, threads=mc.threads)
        extra.append(analysis.check_smoothed_convergence(
            problem.params, math.log(problem.spot), problem.y0, problem.spec, sm_cfg))
    inputs = analysis.SuiteInputs(am, eu, b, coarse=(amc, bc), premium=premium, extra=extra)
    report = analysis.build_report(inputs, config_echo or {})
    return SuiteResult(report, am, eu, b, premium, census)


def strike_scaled(problem: Problem, factor: float) -> Problem:
    """Spot and strike multiplied by ``factor``: prices scale, properties do not change."""
    return Problem(problem.params, PutSpec(problem.spec.strike * factor, problem.spec.maturity),
                   problem.spot * factor, problem.y0)


__all__ = [
    "GridOptions", "lattice_for", "penalty_for", "solve_american_for", "solve_european_for",
    "spot_price", "dual_put_price", "deterministic_oracles", "converge_table",
    "verification_suite", "SuiteResult", "strike_scaled",
]
