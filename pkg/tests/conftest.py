"""Shared fixtures: desk-scale solves are expensive, so each is done once per session."""

from __future__ import annotations

import dataclasses
import time
from functools import lru_cache

import pytest

from heston_put.boundary import extract_boundary
from heston_put.cli import build_objects, resolve_config
from heston_put import pipeline as pl

ACCEPTANCE = pytest.StashKey[list]()


@dataclasses.dataclass
class DeskCase:
    problem: object
    grid: pl.GridOptions
    mc: object
    american: object
    european: object
    boundary: object
    coarse: object
    coarse_boundary: object
    solve_seconds: float


def desk_objects(**model):
    """(problem, grid, mc-config) for the default desk config with model overrides."""
    return build_objects(resolve_config({"model": model} if model else {}))


@lru_cache(maxsize=None)
def desk_case(sigma: float = 0.3, delta: float | None = None) -> DeskCase:
    overrides = {"sigma": sigma}
    if delta is not None:
        overrides["delta"] = delta
    problem, grid, mc = desk_objects(**overrides)
    start = time.perf_counter()
    am = pl.solve_american_for(problem, grid)
    elapsed = time.perf_counter() - start
    eu = pl.solve_european_for(problem, grid)
    coarse = pl.solve_american_for(problem, grid.coarsened(1))
    return DeskCase(problem, grid, mc, am, eu, extract_boundary(am), coarse,
                    extract_boundary(coarse), elapsed)


@pytest.fixture(scope="session")
def feller_case() -> DeskCase:
    return desk_case(0.3)


@pytest.fixture(scope="session")
def nonfeller_case() -> DeskCase:
    return desk_case(0.6)


@pytest.fixture(scope="session")
def acceptance_log(request) -> list:
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
