import csv
import json

import pytest

from heston_put import cli, pipeline
from heston_put.cli import ConfigError, main, resolve_config
from heston_put.pde import SolverError

SMALL = {
    "grid": {"nx": 41, "ny": 21, "nt": 26},
    "mc": {"paths": 3000, "smoothing_paths": 2000, "dates": 20, "substeps": 2},
}


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_defaults_resolve(self):
        cfg = resolve_config({})
        assert cfg["model"]["sigma"] == 0.3
        assert cfg["grid"]["nx"] == 161

    def test_partial_block_merges(self):
        cfg = resolve_config({"model": {"sigma": 0.6}})
        assert cfg["model"]["sigma"] == 0.6 and cfg["model"]["kappa"] == 1.5

    @pytest.mark.parametrize("user", [
        {"model": {"rho": 1.5}},
        {"model": {"vol": 0.2}},
        {"instrument": {"maturity": 0}},
        {"grid": {"levels": 1}},
        {"mc": {"seed": -1}},
        {"mystery": 1},
        {"grid": {"y_max": 0.05}},  # below 3 max(theta, y0)
    ])
    def test_rejected(self, user):
        with pytest.raises(ConfigError):
            resolve_config(user)

    def test_echo_drops_runtime_fields(self):
        echo = cli.result_echo(resolve_config({"threads": 4, "output": "x"}))
        assert "threads" not in echo and "output" not in echo


class TestExitCodes:
    def test_malformed_config_writes_nothing(self, tmp_path):
        out = tmp_path / "out"
        code = main(["price", "--config", str(write_config(tmp_path, {"model": {"rho": 1.5}})),
                     "--out", str(out)])
        assert code == cli.EXIT_CONFIG
        assert not out.exists()

    def test_unreadable_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["--config", str(bad)]) == cli.EXIT_CONFIG
        assert main(["--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG

    def test_print_defaults(self, capsys):
        assert main(["--print-defaults"]) == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)["command"] == "verify"

    def test_solver_failure(self, tmp_path, monkeypatch):
        def boom(problem, grid):
            raise SolverError("Newton did not converge", {"residual": 1.0})

        monkeypatch.setattr(pipeline, "solve_american_for", boom)
        out = tmp_path / "out"
        code = main(["price", "--config", str(write_config(tmp_path, SMALL)), "--out", str(out)])
        assert code == cli.EXIT_SOLVER
        err = json.loads((out / "error.json").read_text())
        assert err["diagnostics"]["residual"] == 1.0

    def test_locked_output(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / ".lock").write_text("123")
        code = main(["price", "--config", str(write_config(tmp_path, SMALL)), "--out", str(out)])
        assert code == cli.EXIT_CONFIG

    def test_infeasible_dual(self, tmp_path):
        cfg = {**SMALL, "model": {"kappa": 0.1, "rho": 0.5, "sigma": 0.3}}
        out = tmp_path / "out"
        code = main(["symmetry", "--config", str(write_config(tmp_path, cfg)), "--out", str(out)])
        assert code == cli.EXIT_CONFIG


class TestCommands:
    def run(self, tmp_path, command, extra=()):
        out = tmp_path / command
        code = main([command, "--config", str(write_config(tmp_path, SMALL)), "--out", str(out),
                     *extra])
        return code, out

    def test_price(self, tmp_path):
        code, out = self.run(tmp_path, "price")
        assert code == cli.EXIT_OK
        price = json.loads((out / "price.json").read_text())
        assert price["american"] >= price["european"] > 0
        assert (out / "american_surface.csv").exists()
        assert json.loads((out / "resolved_config.json").read_text())["grid"]["nx"] == 41
        assert json.loads((out / "run_metadata.json").read_text())["exit_code"] == 0
        assert not (out / ".lock").exists()

    def test_boundary(self, tmp_path):
        code, out = self.run(tmp_path, "boundary")
        assert code == cli.EXIT_OK
        census = json.loads((out / "census.json").read_text())
        assert len(census["levels"]) == 3
        with open(out / "boundary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(0 < float(r["b"]) < 100 for r in rows)

    def test_eep(self, tmp_path):
        code, out = self.run(tmp_path, "eep")
        assert code == cli.EXIT_OK
        data = json.loads((out / "eep.json").read_text())
        assert data["premium"] < 0 and data["identity_holds"]

    def test_converge(self, tmp_path):
        code, out = self.run(tmp_path, "converge")
        assert code == cli.EXIT_OK
        with open(out / "converge.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert rows[2]["ratio_american"] != "" and rows[2]["ratio_smooth_fit_gap"] != ""

    def test_symmetry(self, tmp_path):
        code, out = self.run(tmp_path, "symmetry")
        assert code == cli.EXIT_OK
        data = json.loads((out / "symmetry.json").read_text())
        assert {"dual_put_pde", "call_lsmc"} <= set(data["details"])

    def test_verify_reports_every_entry(self, tmp_path):
        code, out = self.run(tmp_path, "verify")
        report = json.loads((out / "report.json").read_text())
        names = {e["property"] for e in report["entries"]}
        assert names == {"dominance", "monotone_y", "monotone_t", "convex_s",
                         "boundary_monotone", "t_sections", "strict_convexity", "moduli",
                         "smooth_fit_s", "smooth_fit_y", "eep_identity", "cross_backend",
                         "jump_census", "symmetry", "smoothed_convergence"}
        assert code == (cli.EXIT_OK if report["passed"] else cli.EXIT_VERIFY)
        assert (out / "report.txt").read_text().rstrip().endswith(
            "PASS" if report["passed"] else "FAIL")

    def test_seed_override(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        _, a = self.run(tmp_path / "a", "eep")
        _, b = self.run(tmp_path / "b", "eep", ("--seed", "7"))
        pa = json.loads((a / "eep.json").read_text())
        pb = json.loads((b / "eep.json").read_text())
        assert pb["config"]["mc"]["seed"] == 7
        assert pa["premium"] != pb["premium"]


def test_converge_needs_two_levels():
    problem, _, _ = cli.build_objects(resolve_config(SMALL))
    with pytest.raises(ValueError):
        pipeline.converge_table(problem, pipeline.GridOptions(41, 21, 26, levels=1))
