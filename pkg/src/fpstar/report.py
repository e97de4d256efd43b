"""Error reports, table sweeps and CSV output.

All CSV files use ``,`` separators, ``\\n`` line endings and floats in
``%.16e`` (17 significant digits), so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .kkt import (DiscreteSolution, SolverConfig, cost_sigma, multistart, newton_solve,
                  sweep_solve)
from .problem import ProblemError, StarProblem, builtin_example, normalize
from .state import Discretization, Grid, SchemeError, control_values, state_fields

FLOAT_FORMAT = "%.16e"
SOLVERS = ("newton", "sweep")
TABLE_COLUMNS = ("J1", "J2", "e_rho12", "e_rho3", "e_u12", "e_u3", "sigma", "iterations", "wall_time")
PROFILE_COLUMNS = ("x", "rho_approx", "rho_exact", "u_approx")
DEFAULT_TIMES = (0.075, 0.975)


@dataclass
class ErrorReport:
    """Per-edge max errors on the collocation grid plus solver metadata.

    ``e_rho`` and ``e_u`` are ``None`` when the problem has no exact
    reference.  ``costs`` lists the distinct converged costs of a
    multi-start run (a single entry otherwise).
    """

    name: str
    J1: int
    J2: int
    M1: int
    M2: int
    solver: str
    e_rho: Optional[list] = None
    e_u: Optional[list] = None
    sigma: float = float("nan")
    iterations: int = 0
    converged: bool = False
    final_residual: float = float("nan")
    wall_time: float = 0.0
    message: str = ""
    costs: list = field(default_factory=list)

    def table_row(self) -> dict:
        """Values for :data:`TABLE_COLUMNS`; edges 1 and 2 are merged by maximum."""
        def pick(errs, idx):
            if errs is None:
                return float("nan")
            vals = [errs[i] for i in idx if i < len(errs)]
            return max(vals) if vals else float("nan")

        return {
            "J1": self.J1, "J2": self.J2,
            "e_rho12": pick(self.e_rho, (0, 1)), "e_rho3": pick(self.e_rho, (2,)),
            "e_u12": pick(self.e_u, (0, 1)), "e_u3": pick(self.e_u, (2,)),
            "sigma": self.sigma, "iterations": self.iterations, "wall_time": self.wall_time,
        }

    def summary_row(self) -> dict:
        """Deterministic summary (no timing) used by ``fpstar example`` and ``solve``."""
        row = {"name": self.name, "J1": self.J1, "J2": self.J2, "M1": self.M1, "M2": self.M2,
               "solver": self.solver}
        n = len(self.e_rho) if self.e_rho is not None else 0
        for i in range(n):
            row[f"e_rho{i + 1}"] = self.e_rho[i]
        for i in range(n):
            row[f"e_u{i + 1}"] = self.e_u[i]
        row.update(sigma=self.sigma, iterations=self.iterations, converged=int(self.converged),
                   final_residual=self.final_residual)
        return row


def solution_errors(sol: DiscreteSolution):
    """Max-norm errors of ``rho`` and ``u`` per edge on the collocation grid."""
    g = sol.grid
    if g.exact is None:
        return None, None
    rho_ex, u_ex = g.exact
    rho = state_fields(sol.A, sol.U, g, with_rate=False, eps_den=sol.config.eps_den).rho
    u = control_values(sol.U, g)
    e_rho = np.abs(rho - rho_ex).max(axis=(1, 2))
    e_u = np.abs(u - u_ex).max(axis=(1, 2))
    return [float(v) for v in e_rho], [float(v) for v in e_u]


def error_report(sol: DiscreteSolution, name: str = "", costs=None) -> ErrorReport:
    rep = sol.report
    e_rho, e_u = solution_errors(sol)
    try:
        sigma = cost_sigma(sol.A, sol.U, sol.grid, eps_den=sol.config.eps_den)
    except SchemeError:
        sigma = float("nan")
    return ErrorReport(
        name=name or sol.pn.source.name, J1=sol.disc.x.J, J2=sol.disc.t.J, M1=sol.disc.x.M,
        M2=sol.disc.t.M, solver=rep.solver, e_rho=e_rho, e_u=e_u, sigma=sigma,
        iterations=rep.iterations, converged=rep.converged, final_residual=rep.final_residual,
        wall_time=rep.wall_time, message=rep.message, costs=list(costs) if costs else [sigma],
    )


def solve_problem(problem: StarProblem, disc: Discretization, solver: str = "newton",
                  config: SolverConfig = SolverConfig(), starts: int = 1, seed: int = 0):
    """Solve and report; with ``starts > 1`` the lowest-cost converged run is kept."""
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}, got {solver!r}")
    if starts > 1:
        runs, costs = multistart(problem, disc, config, starts=starts, seed=seed, solver=solver)
        conv = [s for s, r in runs if r.converged]
        pool = conv or [s for s, _ in runs]
        g = pool[0].grid
        sol = min(pool, key=lambda s: _safe_cost(s, g))
        return sol, error_report(sol, costs=costs)
    fn = newton_solve if solver == "newton" else sweep_solve
    sol, _ = fn(problem, disc, config)
    return sol, error_report(sol)


def _safe_cost(sol, g):
    try:
        return cost_sigma(sol.A, sol.U, g, eps_den=sol.config.eps_den)
    except SchemeError:
        return math.inf


def run_example(id: int, J1: int, J2: int, M1: int = 4, M2: int = 4, solver: str = "newton",
                config: SolverConfig = SolverConfig(), starts: int = 1):
    """Solve built-in example ``id`` and return ``(solution, ErrorReport)``."""
    problem = builtin_example(id)
    return solve_problem(problem, Discretization.make(J1, J2, M1, M2), solver, config, starts)


def table_sweep(id: int, J_list: Sequence[int], M: int = 4, solver: str = "newton",
                config: SolverConfig = SolverConfig()) -> list[ErrorReport]:
    """One row per pair ``(J1, J2)`` from ``J_list x J_list``, in that order.

    A failing row is recorded with NaN errors and its message.
    """
    J_list = list(J_list)
    if not J_list:
        raise ValueError("J-list is empty")
    rows = []
    for J1 in J_list:
        for J2 in J_list:
            try:
                _, rep = run_example(id, J1, J2, M, M, solver, config)
            except (SchemeError, np.linalg.LinAlgError) as err:
                rep = ErrorReport(f"example{id}", J1, J2, M, M, solver, message=str(err))
            rows.append(rep)
    return rows


# --- formatting ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT % v
    return str(v)


def csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(columns, rows))
    return path


def table_csv(rows: Sequence[ErrorReport]) -> str:
    return csv_text(TABLE_COLUMNS, [r.table_row() for r in rows])


def summary_csv(reports: Sequence[ErrorReport]) -> str:
    rows = [r.summary_row() for r in reports]
    cols = list(rows[0]) if rows else []
    return csv_text(cols, rows)


def format_table(rows: Sequence[ErrorReport]) -> str:
    """Fixed-width text rendering of a table sweep."""
    head = f"{'J1':>3} {'J2':>3} {'e_rho12':>11} {'e_rho3':>11} {'e_u12':>11} {'e_u3':>11} " \
           f"{'sigma':>11} {'iter':>5} {'time[s]':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        d = r.table_row()
        line = (f"{d['J1']:>3} {d['J2']:>3} {d['e_rho12']:>11.4e} {d['e_rho3']:>11.4e} "
                f"{d['e_u12']:>11.4e} {d['e_u3']:>11.4e} {d['sigma']:>11.4e} "
                f"{d['iterations']:>5} {d['wall_time']:>8.2f}")
        if not r.converged:
            line += "  (not converged: " + (r.message or "?") + ")"
        lines.append(line)
    return "\n".join(lines)


# --- profiles -----------------------------------------------------------------

def profile_data(sol: DiscreteSolution, t: float, n_points: int = 201) -> list[dict]:
    """Per-edge samples of ``(x, rho_approx, rho_exact, u_approx)`` at time ``t``.

    ``t`` is physical and must lie in ``[0, T]``; ``x`` runs over ``n_points``
    uniform points of ``[0, l_i]``.
    """
    T = sol.pn.T
    if not (0.0 <= t <= T):
        raise ValueError(f"profile time {t} outside [0, {T}]")
    xi = np.linspace(0.0, 1.0, n_points)
    g = Grid.at(sol.pn, sol.disc, xi, [t / T])
    rho = state_fields(sol.A, sol.U, g, with_rate=False, eps_den=sol.config.eps_den).rho[:, :, 0]
    u = control_values(sol.U, g)[:, :, 0]
    exact = g.exact
    out = []
    for i, e in enumerate(sol.pn.edges):
        rho_ex = exact[0][i, :, 0] if exact is not None else np.full(n_points, np.nan)
        out.append({"x": xi * e.l, "rho_approx": rho[i], "rho_exact": rho_ex, "u_approx": u[i]})
    return out


def emit_profiles(sol: DiscreteSolution, times: Sequence[float], outdir, prefix: str = "profile",
                  n_points: int = 201) -> list[Path]:
    """Write ``{prefix}_edge{i}_t{t}.csv`` for every edge and requested time."""
    times = [float(t) for t in times]
    for t in times:
        if not (0.0 <= t <= sol.pn.T):
            raise ValueError(f"profile time {t} outside [0, {sol.pn.T}]")
    paths = []
    outdir = Path(outdir)
    for t in times:
        for i, d in enumerate(profile_data(sol, t, n_points)):
            rows = [{c: float(d[c][k]) for c in PROFILE_COLUMNS} for k in range(n_points)]
            paths.append(write_csv(outdir / f"{prefix}_edge{i + 1}_t{t:g}.csv", PROFILE_COLUMNS, rows))
    return paths


def problem_for(id: Optional[int] = None, path=None) -> StarProblem:
    from .problem import load_problem

    if (id is None) == (path is None):
        raise ProblemError("give exactly one of a built-in example id or a problem file")
    return builtin_example(id) if path is None else load_problem(path)
