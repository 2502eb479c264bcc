"""Command-line entry point.

    heston-put [COMMAND] --config run.json [--out DIR] [--threads N] [--seed U64]
    heston-put --print-defaults

The run config is one JSON document. It is validated in full before any
output is written. Exit codes: 0 success, 1 verification failure, 2 config
or usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema

from . import pipeline
from .analysis import check_eep, check_symmetry, eep_premium
from .boundary import extract_boundary, jump_census, write_census
from .mc import LSMCError, MCConfig, european_mc_price
from .model import HestonParams, ParameterError, Problem, PutSpec, symmetry_dual
from .pde import LatticeError, SolverError
from .report import _clean

log = logging.getLogger("heston_put")

COMMANDS = ("price", "boundary", "eep", "verify", "converge", "symmetry")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

DEFAULTS: dict = {
    "command": "verify",
    "model": {"kappa": 1.5, "theta": 0.04, "sigma": 0.3, "rho": -0.5, "r": 0.05, "delta": 0.02},
    "instrument": {"strike": 100.0, "maturity": 1.0, "spot": 100.0, "y0": 0.04},
    "grid": {
        "nx": 161, "ny": 81, "nt": 100, "y_grading": "uniform", "scheme": "implicit",
        "x_half_width": None, "y_max": None, "penalty_eps": 1e-4, "levels": 3,
    },
    "mc": {
        "paths": 100_000, "dates": 50, "substeps": 4, "seed": 20240601,
        "training_paths": None, "smoothing_paths": 20_000,
    },
    "output": "heston_out",
    "threads": 1,
}

_count = {"type": "integer", "minimum": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "theta": {"type": "number", "minimum": 0},
                "sigma": {"type": "number", "minimum": 0},
                "rho": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "r": {"type": "number", "minimum": 0},
                "delta": {"type": "number", "minimum": 0},
            },
        },
        "instrument": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "strike": {"type": "number", "exclusiveMinimum": 0},
                "maturity": {"type": "number", "exclusiveMinimum": 0},
                "spot": {"type": "number", "exclusiveMinimum": 0},
                "y0": {"type": "number", "minimum": 0},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 5},
                "ny": {"type": "integer", "minimum": 3},
                "nt": _count,
                "y_grading": {"enum": ["uniform", "sqrt"]},
                "scheme": {"enum": ["implicit", "crank-nicolson"]},
                "x_half_width": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "y_max": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "penalty_eps": {"type": "number", "exclusiveMinimum": 0},
                "levels": _count,
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "paths": _count,
                "dates": {"type": "integer", "minimum": 1},
                "substeps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "training_paths": {"type": ["integer", "null"], "minimum": 2},
                "smoothing_paths": _count,
            },
        },
        "output": {"type": "string", "minLength": 1},
        "threads": {"type": "integer", "minimum": 1},
    },
}


class ConfigError(ValueError):
    pass


def resolve_config(user: dict) -> dict:
    """Validate ``user`` and fill defaults block by block."""
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in user.items():
        if isinstance(val, dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    try:
        build_objects(cfg)
    except (ParameterError, LatticeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def build_objects(cfg: dict):
    m, ins, g, mc = cfg["model"], cfg["instrument"], cfg["grid"], cfg["mc"]
    params = HestonParams(**m)
    spec = PutSpec(ins["strike"], ins["maturity"])
    problem = Problem(params, spec, ins["spot"], ins["y0"])
    grid = pipeline.GridOptions(**g)
    pipeline.lattice_for(problem, grid)  # raises on inconsistent bounds
    mcc = MCConfig(n_paths=mc["paths"], n_dates=mc["dates"], substeps=mc["substeps"],
                   seed=mc["seed"], training_paths=mc["training_paths"],
                   threads=cfg["threads"])
    return problem, grid, mcc


def result_echo(cfg: dict) -> dict:
    """The config as echoed into results: everything except the thread count and paths."""
    echo = copy.deepcopy(cfg)
    echo.pop("threads", None)
    echo.pop("output", None)
    return echo


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Lock:
    """Exclusive ownership of an output directory for one process."""

    def __init__(self, directory: Path):
        self.path = directory / ".lock"
        self.fd: int | None = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory is locked by another run: {self.path}") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)


# ---------------------------------------------------------------- commands


def _cmd_price(cfg, problem, grid, mcc, out: Path) -> int:
    am, eu = pipeline._parallel(cfg["threads"], [
        lambda: pipeline.solve_american_for(problem, grid),
        lambda: pipeline.solve_european_for(problem, grid),
    ])
    am.write(out / "american_surface.csv", out / "american_surface.json")
    eu.write(out / "european_surface.csv", out / "european_surface.json")
    _dump(out / "price.json", {
        "american": pipeline.spot_price(am, problem),
        "european": pipeline.spot_price(eu, problem),
        "spot": problem.spot, "y0": problem.y0,
        "oracle_mode": problem.params.oracle_mode,
        "degenerate_test_mode": problem.params.degenerate,
        "config": result_echo(cfg),
    })
    return EXIT_OK


def _cmd_boundary(cfg, problem, grid, mcc, out: Path) -> int:
    grids = [grid.coarsened(2), grid.coarsened(1), grid]
    surfaces = pipeline._parallel(cfg["threads"],
                                  [lambda g=g: pipeline.solve_american_for(problem, g) for g in grids])
    bounds = [extract_boundary(s) for s in surfaces]
    bounds[-1].to_csv(out / "boundary.csv")
    census = jump_census(bounds)
    census["config"] = result_echo(cfg)
    write_census(census, out / "census.json")
    return EXIT_OK


def _cmd_eep(cfg, problem, grid, mcc, out: Path) -> int:
    am, eu = pipeline._parallel(cfg["threads"], [
        lambda: pipeline.solve_american_for(problem, grid),
        lambda: pipeline.solve_european_for(problem, grid),
    ])
    b = extract_boundary(am)
    est = eep_premium(problem.params, problem.spec, problem.spot, problem.y0, b, mcc,
                      american=pipeline.spot_price(am, problem),
                      european=pipeline.spot_price(eu, problem))
    entry = check_eep(est, problem.spec.strike)
    _dump(out / "eep.json", {**est.to_dict(), "tolerance": entry.threshold,
                             "identity_holds": entry.passed, "config": result_echo(cfg)})
    return EXIT_OK


def _cmd_verify(cfg, problem, grid, mcc, out: Path) -> int:
    res = pipeline.verification_suite(problem, grid, mcc,
                                      smoothing_paths=cfg["mc"]["smoothing_paths"],
                                      threads=cfg["threads"], config_echo=result_echo(cfg))
    (out / "report.json").write_text(res.report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(res.report.to_text(), encoding="utf-8")
    return EXIT_OK if res.report.passed else EXIT_VERIFY


def _cmd_converge(cfg, problem, grid, mcc, out: Path) -> int:
    rows = pipeline.converge_table(problem, grid, threads=cfg["threads"])
    cols = list(rows[0].keys())
    with open(out / "converge.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


def _cmd_symmetry(cfg, problem, grid, mcc, out: Path) -> int:
    dual = pipeline.dual_put_price(problem, grid)
    entry = check_symmetry(problem.params, problem.spec, problem.spot, problem.y0, dual, mcc)
    euro_call = european_mc_price(problem.params, problem.spec, problem.spot, problem.y0, mcc,
                                  kind="call")
    _dump(out / "symmetry.json", {**entry.to_dict(), "european_call_mc": euro_call.price,
                                  "european_call_se": euro_call.stderr,
                                  "config": result_echo(cfg)})
    return EXIT_OK


_DISPATCH = {
    "price": _cmd_price,
    "boundary": _cmd_boundary,
    "eep": _cmd_eep,
    "verify": _cmd_verify,
    "converge": _cmd_converge,
    "symmetry": _cmd_symmetry,
}


def run(cfg: dict) -> int:
    """Run a resolved config; artifacts go to cfg['output']."""
    problem, grid, mcc = build_objects(cfg)
    if cfg["command"] == "converge" and grid.levels < 2:
        raise ConfigError("converge needs at least 2 levels")
    if cfg["command"] in ("verify", "symmetry"):
        try:
            symmetry_dual(problem.params, problem.spec, problem.spot)
        except ParameterError as exc:
            raise ConfigError(f"symmetry check impossible: {exc}") from exc
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    with _Lock(out):
        started = time.time()
        _dump(out / "resolved_config.json", result_echo(cfg))
        try:
            code = _DISPATCH[cfg["command"]](cfg, problem, grid, mcc, out)
        except (SolverError, LSMCError) as exc:
            diag = getattr(exc, "diagnostics", {})
            _dump(out / "error.json", {"error": str(exc), "diagnostics": diag})
            log.error("solver failure: %s", exc)
            code = EXIT_SOLVER
        meta = {"started_unix": started, "finished_unix": time.time(),
                "threads": cfg["threads"], "exit_code": code, "command": cfg["command"]}
        (out / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    return code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heston-put", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    p.add_argument("--config", type=Path, help="run config (JSON)")
    p.add_argument("--out", type=Path, help="output directory (overrides config)")
    p.add_argument("--threads", type=int, help="thread cap (overrides config)")
    p.add_argument("--seed", type=int, help="Monte Carlo seed, unsigned 64-bit (overrides config)")
    p.add_argument("--print-defaults", action="store_true", help="print the default config")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    if args.print_defaults:
        print(json.dumps(DEFAULTS, indent=2, sort_keys=True))
        return EXIT_OK
    user: dict = {}
    if args.config is not None:
        try:
            user = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if not isinstance(user, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    user = copy.deepcopy(user)
    if args.command:
        user["command"] = args.command
    if args.out is not None:
        user["output"] = str(args.out)
    if args.threads is not None:
        user["threads"] = args.threads
    if args.seed is not None:
        user.setdefault("mc", {})["seed"] = args.seed
    try:
        cfg = resolve_config(user)
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
