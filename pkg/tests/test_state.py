import warnings

import numpy as np
import pytest

from fpstar import expr as ex
from fpstar.problem import EdgeSpec, StarProblem, normalize
from fpstar.state import (Discretization, Grid, StateEvaluator, VertexSingularityError,
                          control_values, forward_solve, reconstruct_rho, reconstruct_rho_t,
                          reconstruct_rho_x, reconstruct_rho_xx, state_fields, state_operator,
                          state_residual, vertex_value, vertex_x_derivative)

DISC = Discretization.make(2, 2)


def problem(rho0, f=("0", "0", "0"), D=1.0):
    n = len(rho0)
    zero = ["0"] * n
    return StarProblem(tuple(EdgeSpec(D=D) for _ in range(n)), 1.0, list(rho0), zero, zero, list(f))


def zeros(pn, disc=DISC):
    return np.zeros((pn.N,) + disc.shape)


def small_random(pn, rng, scale=0.05, disc=DISC):
    return scale * rng.standard_normal((pn.N,) + disc.shape)


class TestVertex:
    def test_zero(self):
        pn = normalize(problem(["0", "0", "0"]))
        assert vertex_value(zeros(pn), zeros(pn), pn, DISC, 0.4) == 0.0

    def test_flat_initial_profile(self):
        c = 0.7
        pn = normalize(problem([f"{c}*(1-x^2)"] * 3))
        assert vertex_value(zeros(pn), zeros(pn), pn, DISC, 0.4) == pytest.approx(c, abs=1e-15)

    def test_example1_vertex(self, ex1):
        pn = normalize(ex1)
        g = Grid.collocation(pn, DISC)
        U = zeros(pn)
        A = forward_solve(U, g)
        assert np.abs(vertex_value(A, U, pn, DISC, g.ts)).max() <= 1e-8
        assert abs(vertex_x_derivative(A, U, pn, DISC, 0.3, 0)) <= 1e-10

    def test_kirchhoff_random(self, ex2, rng):
        pn = normalize(ex2)
        A = rng.standard_normal((3,) + DISC.shape)
        U = small_random(pn, rng, 0.01)
        ts = np.linspace(0.05, 0.95, 9)
        g = Grid.at(pn, DISC, [0.0], ts)
        sf = state_fields(A, U, g, with_rate=False)
        u0 = control_values(U, g)[:, 0, :]
        flux = (g.kappa[:, None] * sf.rho_x[:, 0, :] + u0 * sf.rho[:, 0, :]).sum(axis=0)
        assert np.abs(flux).max() <= 1e-12 * max(1.0, np.abs(sf.rho_x).max())
        assert np.ptp(sf.rho[:, 0, :], axis=0).max() == 0.0

    def test_singular_closure(self, ex2):
        pn = normalize(ex2)
        U = zeros(pn)
        # scale a constant control so that u_j(0, t) = kappa_j on every edge
        U[:, 0, 0] = 1.0
        g = Grid.collocation(pn, DISC)
        level = control_values(U, Grid.at(pn, DISC, [0.0], [0.1]))[:, 0, 0]
        U *= pn.array("kappa")[:, None, None] / level[:, None, None]
        with pytest.raises(VertexSingularityError):
            forward_solve(U, g)


class TestReconstruction:
    def test_outer_dirichlet(self, ex2, rng):
        pn = normalize(ex2)
        A = rng.standard_normal((3,) + DISC.shape)
        U = small_random(pn, rng)
        for i in range(3):
            assert abs(reconstruct_rho(A, U, pn, DISC, 1.0, 0.37, i)) <= 1e-12

    def test_zero_ansatz_curvature(self):
        pn = normalize(problem(["x^2 - x"] * 3))
        for x in (0.1, 0.5, 0.9):
            assert reconstruct_rho_xx(zeros(pn), zeros(pn), pn, DISC, x, 0.3, 1) == pytest.approx(2.0)

    def test_zero_data_gives_zero(self):
        pn = normalize(problem(["0"] * 3))
        assert reconstruct_rho(zeros(pn), zeros(pn), pn, DISC, 0.4, 0.6, 2) == 0.0

    def test_derivative_consistency_second_order(self, ex1, rng):
        pn = normalize(ex1)
        A = rng.standard_normal((3,) + DISC.shape)
        U = small_random(pn, rng)
        ev = StateEvaluator(A, U, pn, DISC)
        x, t = 0.3, 0.6
        errs = []
        for h in (1e-2, 5e-3):
            fdx = (ev.rho(x + h, t, 0) - ev.rho(x - h, t, 0)) / (2 * h)
            errs.append(abs(fdx - ev.rho_x(x, t, 0)))
        assert np.log2(errs[0] / errs[1]) >= 1.9
        errs = []
        for h in (1e-2, 5e-3):
            fdt = (ev.rho(x, t + h, 0) - ev.rho(x, t - h, 0)) / (2 * h)
            errs.append(abs(fdt - ev.rho_t(x, t, 0)))
        assert np.log2(errs[0] / errs[1]) >= 1.9

    def test_example1_fields(self, ex1):
        pn = normalize(ex1)
        g = Grid.collocation(pn, DISC)
        U = zeros(pn)
        A = forward_solve(U, g)
        rho = state_fields(A, U, g, with_rate=False).rho
        assert np.abs(rho - g.exact[0]).max() <= 1e-9
        for x in (0.2, 0.55):
            assert reconstruct_rho_t(A, U, pn, DISC, x, 0.3, 0) == pytest.approx(x * x * (1 - x), abs=1e-6)
            assert reconstruct_rho_x(A, U, pn, DISC, x, 0.3, 2) == pytest.approx(
                ex.evaluate(ex.differentiate(ex1.exact_rho[2], "x"), x, 0.3), abs=1e-9)


class TestResidualAndSolve:
    def test_zero_problem(self):
        pn = normalize(problem(["0"] * 3))
        g = Grid.collocation(pn, DISC)
        assert np.abs(state_residual(zeros(pn), zeros(pn), g)).max() == 0.0
        assert np.abs(forward_solve(zeros(pn), g)).max() == 0.0

    def test_operator_matches_residual(self, ex2, rng):
        pn = normalize(ex2)
        g = Grid.collocation(pn, DISC)
        U = small_random(pn, rng, 0.01)
        A = rng.standard_normal((3,) + DISC.shape)
        r0 = state_residual(zeros(pn), U, g).ravel()
        lhs = state_operator(U, g) @ A.ravel() + r0
        assert np.allclose(lhs, state_residual(A, U, g).ravel(), atol=1e-11)

    def test_causality(self, ex1):
        # a coefficient in time cell 2 leaves residuals at earlier times unchanged
        pn = normalize(ex1)
        g = Grid.collocation(pn, DISC)
        U = zeros(pn)
        A = zeros(pn)
        r0 = state_residual(A, U, g)
        A[1, 2, 5] = 1.0
        d = np.abs(state_residual(A, U, g) - r0)
        early = g.ts < 0.5
        assert d[:, :, early].max() == 0.0
        assert d[:, :, ~early].max() > 0.0

    def test_superposition(self, rng):
        d1 = (["(1-x)^2*x^2"] * 3, ["x*t", "sin(pi*x)", "t^2"])
        d2 = (["cos(pi*x/2)*(1-x)"] * 3, ["exp(-t)", "x^2", "1"])
        both = ([f"{a} + {b}" for a, b in zip(d1[0], d2[0])], [f"{a} + {b}" for a, b in zip(d1[1], d2[1])])
        U = 0.05 * rng.standard_normal((3,) + DISC.shape)
        rhos = []
        for rho0, f in (d1, d2, both):
            pn = normalize(problem(rho0, f))
            g = Grid.collocation(pn, DISC)
            rhos.append(state_fields(forward_solve(U, g), U, g, with_rate=False).rho)
        err = np.abs(rhos[2] - rhos[0] - rhos[1]).max() / np.abs(rhos[2]).max()
        assert err <= 1e-9

    def test_no_solver_warning(self, ex2, rng):
        pn = normalize(ex2)
        g = Grid.collocation(pn, DISC)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            forward_solve(small_random(pn, rng, 0.01), g)
