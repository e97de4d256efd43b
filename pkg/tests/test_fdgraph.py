import numpy as np
import pytest

from fpstar import fdgraph as fd
from fpstar.problem import EdgeSpec, StarProblem, builtin_example
from fpstar.verify import (fd_exact_error, fd_self_convergence, gradient_summary, measure_gradient_fd,
                           measure_tangent_fd, observed_orders, wavelet_fd_agreement)

SMALL = fd.FdGrid(20, 40)


def zero_problem():
    z = ["0"] * 3
    return StarProblem(tuple(EdgeSpec() for _ in range(3)), 1.0, z, z, z, z)


def rand_field(p, grid, rng, scale=1.0):
    return scale * rng.standard_normal((p.N, grid.n_x + 1, grid.n_t + 1))


class TestGrid:
    @pytest.mark.parametrize("kw", [{"n_x": 3}, {"n_t": 1}, {"theta": 1.5}, {"outer": "periodic"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            fd.FdGrid(**kw)


class TestForward:
    def test_example1_accuracy(self):
        assert fd_exact_error() <= 5e-5

    def test_zero_data(self):
        rho = fd.fd_forward(zero_problem(), None, SMALL)
        assert np.abs(rho.values).max() == 0.0

    def test_vertex_continuity(self, ex2, rng):
        rho = fd.fd_forward(ex2, rand_field(ex2, SMALL, rng, 0.1), SMALL)
        assert np.ptp(rho.values[:, 0, :], axis=0).max() == 0.0

    def test_spatial_order(self):
        assert fd_self_convergence().min() >= 1.9

    def test_agrees_with_wavelet(self):
        assert wavelet_fd_agreement() <= 1e-4

    def test_expression_control(self, ex2):
        rho_e = fd.fd_forward(ex2, ["0.1*x", "0.1", "0"], SMALL)
        sys = fd.FdSystem(ex2, SMALL)
        rho_a = fd.fd_forward(ex2, fd.control_samples(sys, ["0.1*x", "0.1", "0"]), SMALL)
        assert np.array_equal(rho_e.values, rho_a.values)


class TestTangent:
    def test_zero_direction(self, ex2, rng):
        u = rand_field(ex2, SMALL, rng, 0.1)
        rho = fd.fd_forward(ex2, u, SMALL)
        z = fd.fd_tangent(ex2, u, np.zeros_like(u), rho, SMALL)
        assert np.abs(z.values).max() == 0.0

    def test_linearity(self, ex2, rng):
        u = rand_field(ex2, SMALL, rng, 0.1)
        v1, v2 = rand_field(ex2, SMALL, rng), rand_field(ex2, SMALL, rng)
        rho = fd.fd_forward(ex2, u, SMALL)
        z = [fd.fd_tangent(ex2, u, v, rho, SMALL).values for v in (v1, v2, v1 + v2)]
        assert np.abs(z[2] - z[0] - z[1]).max() <= 1e-10 * max(1.0, np.abs(z[2]).max())

    def test_taylor_order(self):
        eps, errs = measure_tangent_fd()
        assert observed_orders(eps, errs).min() >= 1.8


class TestAdjoint:
    def test_zero_at_target(self, rng):
        p = zero_problem()
        u = rand_field(p, SMALL, rng, 0.1)
        rho = fd.fd_forward(p, u, SMALL)
        assert np.abs(fd.fd_adjoint(p, u, rho, SMALL).values).max() == 0.0

    def test_vanishes_under_refinement(self, ex1):
        # with exact targets the adjoint is driven only by the O(h^2) state error
        sizes = []
        for n in (20, 40):
            grid = fd.FdGrid(n, 2 * n)
            rho = fd.fd_forward(ex1, None, grid)
            sizes.append(np.abs(fd.fd_adjoint(ex1, None, rho, grid).values).max())
        assert np.log2(sizes[0] / sizes[1]) >= 1.8

    def test_linear_in_tracking_gap(self, ex2, rng):
        u = rand_field(ex2, SMALL, rng, 0.1)
        rho = fd.fd_forward(ex2, u, SMALL)
        base = fd.fd_adjoint(ex2, u, rho, SMALL).values
        d = rand_field(ex2, SMALL, rng)
        lam1 = fd.fd_adjoint(ex2, u, fd.FdField(rho.values + d, rho.x, rho.t), SMALL).values - base
        lam2 = fd.fd_adjoint(ex2, u, fd.FdField(rho.values + 2 * d, rho.x, rho.t), SMALL).values - base
        assert np.abs(lam2 - 2 * lam1).max() <= 1e-10 * max(1.0, np.abs(lam2).max())

    def test_gradient_check(self):
        eps, errs, dirs = measure_gradient_fd()
        best, orders = gradient_summary(eps, errs, dirs)
        assert best.max() <= 1e-4
        assert orders.min() >= 1.8

    def test_duality(self):
        lhs, rhs = fd.duality_sides(builtin_example(2), ["0.1*x", "0.1", "0"],
                                    ["sin(pi*x)*t", "x*(1-x)", "cos(x)*t^2"], fd.FdGrid(100, 200))
        assert abs(lhs - rhs) <= 2e-3 * abs(lhs)


class TestMass:
    def test_reflecting_conserves(self):
        m = fd.mass_balance(fd.bump_problem(), None, fd.FdGrid(100, 200, outer="reflecting"))
        assert m.drift <= 1e-8 * (1 + abs(m.mass[0]))

    def test_dirichlet_flux_identity(self):
        m = fd.mass_balance(fd.bump_problem(), ["0.3*x", "-0.2", "0.1*t"], fd.FdGrid(100, 200))
        assert m.identity_error <= 1e-6
        assert m.mass[-1] < m.mass[0]

    def test_zero_data(self):
        m = fd.mass_balance(zero_problem(), None, SMALL)
        assert np.abs(m.mass).max() == 0.0


class TestPositivity:
    def test_bump(self):
        ok, low = fd.positivity_check(fd.bump_problem(), None, fd.FdGrid(50, 100, theta=1.0))
        assert ok and low >= -1e-10

    def test_zero(self):
        ok, low = fd.positivity_check(zero_problem(), None, fd.FdGrid(20, 40, theta=1.0))
        assert ok and low == 0.0

    def test_sign_flipped_reports_failure(self):
        ok, low = fd.positivity_check(fd.bump_problem(sign=-1.0), None, fd.FdGrid(50, 100, theta=1.0))
        assert not ok and low < -0.5
