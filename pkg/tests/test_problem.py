import json
import math

import numpy as np
import pytest

from fpstar import expr as ex
from fpstar.problem import (CompatibilityError, EdgeSpec, ProblemError, ProblemFileError,
                            ProblemValidationError, StarProblem, builtin_example, load_problem,
                            manufacture_from, normalize, problem_from_dict, save_problem, with_bounds)


def _dict(**over):
    d = {
        "T": 1.0,
        "edges": [{"l": 1.0, "D": 1.0}, {"l": 1.0, "D": 1.0}],
        "data": {"rho0": ["x*(1-x)", "x*(1-x)"], "rho_d": ["0", "0"], "rho_T": ["0", "0"], "f": ["0", "0"]},
    }
    d.update(over)
    return d


class TestBuiltins:
    def test_example1(self, ex1):
        assert ex1.N == 3 and ex1.T == 1.0
        assert all(e.D == 1.0 and e.alpha == 1.0 and e.l == 1.0 for e in ex1.edges)
        assert ex.evaluate(ex1.rho_d[2], 0.5, 1.0) == pytest.approx(0.0625)

    def test_example2(self, ex2):
        assert ex2.edges[0].D == pytest.approx(1.0 / (4.0 * math.pi**2))
        assert ex2.edges[0].D == pytest.approx(0.02533, abs=1e-5)

    def test_unknown(self):
        with pytest.raises(ProblemError):
            builtin_example(3)

    def test_forcing_example1(self, ex1):
        x = np.linspace(0, 1, 7)[:, None]
        t = np.linspace(0, 1, 5)[None, :]
        expected = x**2 * (1 - x) - (2 - 6 * x) * t
        assert np.allclose(ex.evaluate(ex1.f[0], x, t), expected, atol=1e-14)


class TestFiles:
    def test_round_trip(self, tmp_path, ex2):
        path = tmp_path / "p.json"
        save_problem(ex2, path)
        back = load_problem(path)
        assert back.N == 3 and back.edges == ex2.edges
        x = np.linspace(0, 1, 9)
        for a, b in zip(ex2.f, back.f):
            assert np.allclose(ex.evaluate(a, x, 0.3), ex.evaluate(b, x, 0.3), rtol=0, atol=1e-15)

    def test_shipped_example(self):
        from importlib.resources import files

        p = load_problem(files("fpstar") / "data" / "example1.json")
        assert p.N == 3 and p.has_exact

    def test_discontinuous_rho0(self):
        d = _dict()
        d["data"]["rho0"] = ["x*(1-x) + 1 - x", "x*(1-x)"]
        with pytest.raises(ProblemValidationError, match="vertex"):
            problem_from_dict(d)

    def test_bounds_order(self):
        d = _dict(edges=[{"l": 1.0, "D": 1.0, "u_min": 1.0, "u_max": -1.0}, {"l": 1.0, "D": 1.0}])
        with pytest.raises(ProblemValidationError, match="u_min"):
            problem_from_dict(d)

    def test_lists_every_failure(self):
        d = _dict(T=-1.0, edges=[{"l": -1.0, "D": 0.0}, {"l": 1.0, "D": 1.0}])
        with pytest.raises(ProblemValidationError) as info:
            problem_from_dict(d)
        text = str(info.value)
        assert "T must" in text and "l must" in text and "D must" in text

    def test_syntax_error_reported(self):
        d = _dict()
        d["data"]["f"] = ["x^", "0"]
        with pytest.raises(ProblemValidationError, match=r"data.f\[0\]"):
            problem_from_dict(d)

    def test_bad_files(self, tmp_path):
        with pytest.raises(ProblemFileError):
            load_problem(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ProblemFileError):
            load_problem(bad)

    def test_rho0_time_dependent(self):
        d = _dict()
        d["data"]["rho0"] = ["x*(1-x)*t", "0"]
        with pytest.raises(ProblemValidationError, match="must not depend on t"):
            problem_from_dict(d)

    def test_outer_dirichlet(self):
        d = _dict()
        d["data"]["rho0"] = ["1", "1"]
        with pytest.raises(ProblemValidationError, match="must be 0"):
            problem_from_dict(d)


class TestManufacture:
    def test_zero_target(self):
        edges = [EdgeSpec(), EdgeSpec()]
        p = manufacture_from(["0", "0"], ["0", "0"], edges, 1.0)
        for e in p.f + p.rho0 + p.rho_T:
            assert ex.evaluate(e, 0.3, 0.7) == 0.0

    def test_kirchhoff_violation(self):
        with pytest.raises(CompatibilityError, match="Kirchhoff"):
            manufacture_from(["x*(1-x)*t"] * 3, ["0"] * 3, [EdgeSpec()] * 3, 1.0)

    def test_nonzero_control_target(self):
        p = manufacture_from(["x^2*(1-x)*t"] * 2, ["0.5*x", "x"], [EdgeSpec()] * 2, 1.0)
        x, t, h = 0.4, 0.3, 1e-5
        r = ex.parse("x^2*(1-x)*t")
        rt = (ex.evaluate(r, x, t + h) - ex.evaluate(r, x, t - h)) / (2 * h)
        rxx = (ex.evaluate(r, x + h, t) - 2 * ex.evaluate(r, x, t) + ex.evaluate(r, x - h, t)) / h**2
        flux = lambda y: 0.5 * y * ex.evaluate(r, y, t)  # noqa: E731
        drift = (flux(x + h) - flux(x - h)) / (2 * h)
        assert ex.evaluate(p.f[0], x, t) == pytest.approx(rt - rxx - drift, abs=1e-5)


class TestNormalize:
    def test_identity_for_unit_problem(self, ex1):
        pn = normalize(ex1)
        assert np.allclose(pn.array("a"), 1.0) and np.allclose(pn.array("kappa"), 1.0)
        assert np.allclose(pn.array("b"), 1.0)

    def test_scaled_edge(self):
        p = StarProblem((EdgeSpec(l=2.0), EdgeSpec(l=2.0)), 1.0, ["0", "0"], ["0", "0"], ["0", "0"],
                        ["x", "x"])
        e = normalize(p).edges[0]
        assert (e.a, e.kappa, e.b) == (0.25, 0.5, 0.5)
        assert ex.evaluate(e.f, 0.5, 0.0) == pytest.approx(1.0)

    def test_scaled_horizon(self):
        p = StarProblem((EdgeSpec(), EdgeSpec()), 2.0, ["0", "0"], ["0", "0"], ["0", "0"], ["t", "t"])
        e = normalize(p).edges[0]
        assert e.a == 2.0
        assert ex.evaluate(e.f, 0.0, 0.5) == pytest.approx(2.0)

    def test_with_bounds(self, ex2):
        p = with_bounds(ex2, -1e-3, 1e-3)
        assert all(e.u_max == 1e-3 for e in p.edges)
