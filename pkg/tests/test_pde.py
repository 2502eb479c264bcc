import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heston_put.model import HestonParams, Problem, PutSpec
from heston_put.oracles import european_put_quadrature, integrated_variance
from heston_put.pde import (
    GridConfig,
    LatticeError,
    PenaltyFamily,
    SolverConfig,
    SolverError,
    apply_penalty,
    assemble_operator,
    build_lattice,
    problem_lattice,
    solve_american,
    solve_european,
)
from heston_put.pde.solver import _edge_excess

DESK = HestonParams(kappa=1.5, theta=0.04, sigma=0.3, rho=-0.5, r=0.05, delta=0.02)
SPEC = PutSpec(100.0, 1.0)


def small_lattice(params=DESK, nx=41, ny=21, nt=26, spot=100.0, y0=0.04):
    return problem_lattice(Problem(params, SPEC, spot, y0), nx, ny, nt)


class TestLattice:
    def test_eight_nodes(self):
        lat = build_lattice(GridConfig(nt=2, nx=2, ny=2, t_max=1.0, x_min=0.0, x_max=1.0,
                                       y_max=1.0))
        assert lat.n_nodes == 8
        for axis in (lat.t_nodes, lat.x_nodes, lat.y_nodes):
            np.testing.assert_array_equal(axis, [0.0, 1.0])

    def test_sqrt_grading(self):
        lat = build_lattice(GridConfig(nt=3, nx=3, ny=5, t_max=1.0, x_min=0.0, x_max=1.0,
                                       y_max=0.4, y_grading="sqrt"))
        np.testing.assert_allclose(lat.y_nodes, 0.4 * (np.arange(5) / 4) ** 2)

    def test_y_min_rejected(self):
        with pytest.raises(LatticeError):
            build_lattice(GridConfig(nt=2, nx=2, ny=2, t_max=1.0, x_min=0.0, x_max=1.0,
                                     y_max=1.0, y_min=0.01))

    @pytest.mark.parametrize("kw", [dict(nt=1), dict(x_max=-1.0), dict(y_grading="log")])
    def test_bad_configs(self, kw):
        base = dict(nt=2, nx=2, ny=2, t_max=1.0, x_min=0.0, x_max=1.0, y_max=1.0)
        with pytest.raises(LatticeError):
            build_lattice(GridConfig(**{**base, **kw}))

    def test_desk_lattice(self):
        lat = small_lattice(nx=161, ny=81, nt=100)
        assert lat.shape == (100, 161, 81)
        assert lat.x_nodes[80] == pytest.approx(math.log(100.0))
        assert np.any(np.isclose(lat.y_nodes, 0.04, rtol=0, atol=1e-15))
        assert lat.y_nodes[-1] == pytest.approx(0.4)

    def test_same_as(self):
        assert small_lattice().same_as(small_lattice())
        assert not small_lattice().same_as(small_lattice(nx=43))


class TestOperator:
    def test_constant(self):
        lat = small_lattice()
        op = assemble_operator(lat, DESK)
        out = op.matrix @ np.full(lat.x_nodes.size * lat.y_nodes.size, 3.0)
        np.testing.assert_allclose(out[op.pde_rows], -DESK.r * 3.0, atol=1e-10)
        np.testing.assert_array_equal(out[op.dirichlet], 0.0)

    def test_linear_in_x(self):
        p = HestonParams(1.5, 0.04, 0.3, 0.0, 0.05, 0.02)
        lat = small_lattice(p)
        op = assemble_operator(lat, p)
        nx, ny = lat.x_nodes.size, lat.y_nodes.size
        u = np.repeat(lat.x_nodes[:, None], ny, axis=1)
        out = (op.matrix @ u.ravel()).reshape(nx, ny)
        y = lat.y_nodes[None, 1:-1]
        exact = (p.r - p.delta - 0.5 * y) - p.r * lat.x_nodes[1:-1, None]
        np.testing.assert_allclose(out[1:-1, 1:-1], exact, atol=1e-9)

    def test_m_matrix_on_desk(self):
        op = assemble_operator(small_lattice(nx=161, ny=81, nt=100), DESK)
        assert op.m_matrix
        assert op.diagnostics()["negative_couplings"] == 0

    def test_zero_variance_row_is_transport(self):
        lat = small_lattice()
        op = assemble_operator(lat, DESK)
        ny = lat.y_nodes.size
        row = op.matrix.getrow(10 * ny).toarray().ravel()
        nz = set(np.flatnonzero(row))
        # self, east (r > delta) and north only
        assert nz == {10 * ny, 11 * ny, 10 * ny + 1}

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.2, 4.0), st.floats(0.0, 0.2), st.floats(0.0, 1.0), st.floats(-0.9, 0.9),
           st.floats(0.0, 0.1), st.floats(0.0, 0.1))
    def test_off_diagonals_and_row_sums(self, kappa, theta, sigma, rho, r, delta):
        p = HestonParams(kappa, theta, sigma, rho, r, delta)
        lat = problem_lattice(Problem(p, SPEC, 100.0, 0.04), 21, 11, 5)
        op = assemble_operator(lat, p)
        A = op.matrix.tocsr()
        sums = np.asarray(A.sum(axis=1)).ravel()
        np.testing.assert_allclose(sums[op.pde_rows], -r, atol=1e-8 * (1 + abs(A).max()))
        off = A - np.diag(A.diagonal())
        assert (off.min() >= 0.0) == op.m_matrix


class TestPenalty:
    fam = PenaltyFamily.for_put(100.0, 0.05)

    def test_defaults(self):
        assert self.fam.epsilon == pytest.approx(1e-2)
        assert self.fam.floor == pytest.approx(-10.0)
        z, _ = apply_penalty(0.0, self.fam)
        assert float(z) == pytest.approx(self.fam.floor)

    def test_floor_uses_minimum_rate(self):
        assert PenaltyFamily.for_put(100.0, 0.0).floor == pytest.approx(-0.2)

    def test_vanishes_above_eps(self):
        z, dz = apply_penalty(np.array([0.01, 0.02, 5.0]), self.fam)
        np.testing.assert_array_equal(z, 0.0)
        np.testing.assert_array_equal(dz, 0.0)

    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    def test_monotone(self, w1, w2):
        lo, hi = sorted((w1, w2))
        assert apply_penalty(lo, self.fam)[0] <= apply_penalty(hi, self.fam)[0]

    @given(st.floats(-1.0, 0.05))
    def test_derivative_bounded_and_consistent(self, w):
        z, dz = apply_penalty(w, self.fam)
        assert 0.0 <= dz <= self.fam.slope + 1e-12
        h = 1e-7
        fd = (apply_penalty(w + h, self.fam)[0] - apply_penalty(w - h, self.fam)[0]) / (2 * h)
        assert float(fd) == pytest.approx(float(dz), rel=1e-4, abs=1e-3)

    @pytest.mark.parametrize("kw", [dict(epsilon=0.0, floor=-1.0), dict(epsilon=1.0, floor=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PenaltyFamily(**kw)

    @pytest.mark.parametrize("rel_eps", [1e-4, 1e-3, 1e-2])
    def test_scalar_excess_scales_with_eps(self, rel_eps):
        # steady state of the penalised scalar equation on the exercise side
        fam = PenaltyFamily.for_put(100.0, 0.05, rel_eps=rel_eps)
        source = 0.02 * 60.0 - 0.05 * 100.0
        w = 0.0
        for _ in range(400):
            w = _edge_excess(w, 0.05, source, 0.05, fam)
        assert 0.0 < w < fam.epsilon
        z, _ = apply_penalty(w, fam)
        assert float(z) + 0.05 * w == pytest.approx(source, rel=1e-9)


@pytest.fixture(scope="module")
def surfaces():
    lat = small_lattice()
    return solve_american(DESK, SPEC, lat), solve_european(DESK, SPEC, lat)


class TestSolver:
    def test_obstacle_and_dominance(self, surfaces):
        am, eu = surfaces
        eps = am.penalty.epsilon
        assert am.excess().min() >= -eps
        assert np.all(am.values >= eu.values - eps)
        assert eu.values.min() >= -1e-12
        assert am.diagnostics["final_penalty_residual"] <= 1e-9 * SPEC.strike

    def test_terminal_row(self, surfaces):
        am, eu = surfaces
        for s in surfaces:
            np.testing.assert_array_equal(s.values[-1], np.repeat(s.payoff[:, None], 21, axis=1))

    def test_price_at_node_and_between(self, surfaces):
        am, _ = surfaces
        assert am.price_at(100.0, 0.04) == pytest.approx(am.values[0, 20, 2])
        between = am.price_at(101.0, 0.05)
        assert am.values[0, 21, 2] - 1 <= between <= am.values[0, 20, 3] + 1
        with pytest.raises(ValueError):
            am.price_at(1e6, 0.04)

    def test_deterministic_variance_european(self):
        p = HestonParams(1.5, 0.04, 0.0, 0.0, 0.05, 0.02)
        eu = solve_european(p, SPEC, small_lattice(p, nx=81, ny=21, nt=51))
        v = integrated_variance(1.5, 0.04, 0.04, 0.0, 1.0)
        ref = european_put_quadrature(100.0, 100.0, 1.0, 0.05, 0.02, v)
        assert eu.price_at(100.0, 0.04) == pytest.approx(ref, abs=0.1)

    def test_crank_nicolson_close_to_implicit(self, surfaces):
        am, _ = surfaces
        cn = solve_american(DESK, SPEC, small_lattice(), config=SolverConfig(scheme="crank-nicolson"))
        assert cn.price_at(100.0, 0.04) == pytest.approx(am.price_at(100.0, 0.04), abs=0.05)

    def test_newton_failure_reported(self):
        with pytest.raises(SolverError) as info:
            solve_american(DESK, SPEC, small_lattice(), config=SolverConfig(newton_max_iter=0))
        assert "residual" in info.value.diagnostics

    def test_write(self, surfaces, tmp_path):
        am, _ = surfaces
        am.write(tmp_path / "s.csv", tmp_path / "s.json")
        side = json.loads((tmp_path / "s.json").read_text())
        assert side["kind"] == "american"
        assert side["lattice"]["nx"] == 41
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "t,x,y,value"
        assert len(lines) == 1 + am.values.size

    def test_strike_homogeneity(self):
        """P(K, s) scales linearly under s, K -> c s, c K on a scaled lattice."""
        spec2 = PutSpec(200.0, 1.0)
        lat1 = small_lattice()
        lat2 = problem_lattice(Problem(DESK, spec2, 200.0, 0.04), 41, 21, 26)
        a1 = solve_american(DESK, SPEC, lat1).values
        a2 = solve_american(DESK, spec2, lat2).values
        np.testing.assert_allclose(a2, 2.0 * a1, rtol=1e-6, atol=1e-6)
