"""Coupled optimality system: assembly, Newton and sweep solvers, gradient and cost.

Unknowns are the state, adjoint and control coefficient sets ``(A, B, U)``,
each of shape ``(N, K1, K2)``.  The flat residual stacks the state,
adjoint and optimality residuals in that order; inside each block the
ordering is edge-major and then node row-major (``a * K2 + b`` for the node
``(x_a, t_b)``).  Flat unknown vectors use the same convention with
coefficient ``(k, l)`` at ``k * K2 + l``.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .adjoint import (AdjointEvaluator, adjoint_fields, adjoint_operator, adjoint_ops,
                      adjoint_residual, adjoint_solve)
from .problem import NormalizedProblem, StarProblem, normalize
from .state import (EPS_DEN, Discretization, Grid, SchemeError, StateEvaluator,
                    VertexSingularityError, control_values, forward_solve, lu_checked,
                    state_fields, state_operator, state_residual)

log = logging.getLogger(__name__)

JACOBIAN_MODES = ("analytic", "fd")
OPTIMALITY_MODES = ("projected", "interior")
INITIAL_GUESSES = ("consistent", "zeros")


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``tol`` is an absolute bound on the infinity norm of the full residual
    (Newton) or of the successive control change (sweep).  ``initial``
    selects the Newton starting point: ``consistent`` takes ``U = 0`` with
    the matching state and adjoint coefficients, ``zeros`` sets all three
    coefficient sets to zero.
    """

    tol: float = 1e-12
    max_iter: int = 50
    armijo: float = 1e-4
    min_step: float = 2.0**-20
    jacobian: str = "analytic"
    optimality: str = "projected"
    omega: float = 0.7
    sweep_max_iter: int = 500
    eps_den: float = EPS_DEN
    initial: str = "consistent"

    def __post_init__(self):
        if not (self.tol > 0 and self.armijo > 0 and self.min_step > 0 and self.eps_den > 0):
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"relaxation omega must lie in (0, 1], got {self.omega}")
        if self.jacobian not in JACOBIAN_MODES:
            raise ValueError(f"jacobian must be one of {JACOBIAN_MODES}")
        if self.optimality not in OPTIMALITY_MODES:
            raise ValueError(f"optimality must be one of {OPTIMALITY_MODES}")
        if self.initial not in INITIAL_GUESSES:
            raise ValueError(f"initial must be one of {INITIAL_GUESSES}")
        if self.max_iter < 0 or self.sweep_max_iter < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class SolveReport:
    solver: str
    converged: bool
    iterations: int
    residual_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    message: str = ""
    wall_time: float = 0.0
    final_residual: float = float("nan")


@dataclass
class DiscreteSolution:
    """Coefficients of a solved optimality system plus convergence metadata."""

    A: np.ndarray
    B: np.ndarray
    U: np.ndarray
    pn: NormalizedProblem
    disc: Discretization
    report: SolveReport
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def grid(self) -> Grid:
        g = self.__dict__.get("_grid")
        if g is None:
            g = Grid.collocation(self.pn, self.disc)
            self.__dict__["_grid"] = g
        return g

    def state(self) -> StateEvaluator:
        return StateEvaluator(self.A, self.U, self.pn, self.disc, self.config.eps_den)

    def adjoint(self) -> AdjointEvaluator:
        return AdjointEvaluator(self.B, self.A, self.pn, self.disc)

    def control(self, xs, ts) -> np.ndarray:
        return control_values(self.U, Grid.at(self.pn, self.disc, xs, ts))

    def residual_norm(self) -> float:
        return float(np.abs(assemble_full_residual(self.A, self.B, self.U, self.grid, self.config)).max())


# --- flat layout ------------------------------------------------------------

def flatten(A, B, U) -> np.ndarray:
    return np.concatenate([np.ravel(A), np.ravel(B), np.ravel(U)])


def unflatten(x, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`flatten` for coefficient sets of ``shape = (N, K1, K2)``."""
    x = np.asarray(x)
    size = int(np.prod(shape))
    if x.size != 3 * size:
        raise ValueError(f"expected {3 * size} entries, got {x.size}")
    return (x[:size].reshape(shape), x[size:2 * size].reshape(shape), x[2 * size:].reshape(shape))


# --- residuals --------------------------------------------------------------

def _clip(z, g: Grid):
    return np.clip(z, g.u_min[:, None, None], g.u_max[:, None, None])


def _control_target(A, B, U, g: Grid, eps_den: float):
    """``rho q_x / alpha`` in physical units, plus the fields it came from."""
    sf = state_fields(A, U, g, with_rate=False, eps_den=eps_den)
    af = adjoint_fields(B, A, g)
    scale = (g.l * g.alpha)[:, None, None]
    return sf.rho * af.q_x / scale, sf, af


def optimality_residual(A, B, U, g: Grid, mode: str = "projected", *, eps_den: float = EPS_DEN):
    """Pointwise optimality condition at every node, shape (N, P, Q).

    ``projected``: ``u - clip(rho q_x / alpha, u_min, u_max)``.
    ``interior``: ``alpha u - rho q_x``.
    """
    z, _, _ = _control_target(A, B, U, g, eps_den)
    u = control_values(U, g)
    if mode == "projected":
        return u - _clip(z, g)
    if mode == "interior":
        return g.alpha[:, None, None] * (u - z)
    raise ValueError(f"unknown optimality mode {mode!r}")


def assemble_full_residual(A, B, U, g: Grid, config: SolverConfig = SolverConfig()) -> np.ndarray:
    """Flat residual ``[state, adjoint, optimality]`` of length ``3 N K1 K2``."""
    rs = state_residual(A, U, g, eps_den=config.eps_den)
    ra = adjoint_residual(B, A, U, g, eps_den=config.eps_den)
    ro = optimality_residual(A, B, U, g, config.optimality, eps_den=config.eps_den)
    return np.concatenate([rs.ravel(), ra.ravel(), ro.ravel()])


def split_residual(R, shape):
    return unflatten(R, shape)


# --- Jacobian ---------------------------------------------------------------

BLOCK_NAMES = ("AA", "AU", "BA", "BB", "BU", "UA", "UB", "UU")


def jacobian_blocks(A, B, U, g: Grid, config: SolverConfig = SolverConfig()) -> dict:
    """Analytic Jacobian blocks ``J_XY = d(residual X) / d(unknown Y)``.

    The state residual does not depend on ``B``, so ``J_AB`` is omitted.
    """
    N = g.N
    P, Q = g.shape
    n = P * Q
    m = g.disc.shape[0] * g.disc.shape[1]
    T = g.pn.T
    kappa = g.kappa
    ksum = kappa.sum()
    sf = state_fields(A, U, g, eps_den=config.eps_den)
    af = adjoint_fields(B, A, g)
    vs = sf.vertex
    u, ux = control_values(U, g, derivative=True)
    Lrho, Lx, Lxx, Ls = g.state_ops
    Qx, Qxx, Qs = adjoint_ops(g)
    den = vs.den
    omx = (1.0 - g.xi_nodes)[:, None]
    G = g.expand_t(g.Wm / den[:, None])
    # sensitivities of v and vdot to sum_j u_j(0, t) and its rate
    dv_ds = -vs.v / den
    dvd_ds = -(kappa @ vs.wd) / den**2 + 2.0 * vs.num * vs.sigma_ud / den**3
    dvd_dsd = -vs.num / den**2
    Sv = g.expand_t(dv_ds[:, None] * g.Sm)
    Svd = g.expand_t(dvd_ds[:, None] * g.Sm + dvd_dsd[:, None] * g.Sdm)
    WR = g.expand_t(g.WRm)
    pt_rows = np.tile(g.Pt1, (Q, 1))
    HX = np.kron(g.X.left, pt_rows)
    HXX = np.kron(g.X.phi, pt_rows)
    w1m = np.tile(np.kron(g.p2one, g.Pt1), (n, 1))
    Um, Uxm = g.Um, g.Uxm
    z = sf.rho * af.q_x / (g.l * g.alpha)[:, None, None]
    if config.optimality == "projected":
        active = (z > g.u_min[:, None, None]) & (z < g.u_max[:, None, None])
        wz = active / (g.l * g.alpha)[:, None, None]
        wu = np.ones(N)
    else:
        wz = np.ones_like(z) / g.l[:, None, None]
        wu = g.alpha

    shape = (N * n, N * m)
    J = {"AA": state_operator(U, g, eps_den=config.eps_den), "BB": adjoint_operator(U, g)}
    for name in ("AU", "BA", "BU", "UA", "UB", "UU"):
        J[name] = np.zeros(shape)

    def blk(name, i, j):
        return J[name][i * n:(i + 1) * n, j * m:(j + 1) * m]

    for i in range(N):
        ui = u[i].ravel()[:, None]
        uxi = ux[i].ravel()[:, None]
        ri = sf.rho[i].ravel()[:, None]
        rxi = sf.rho_x[i].ravel()[:, None]
        qxi = af.q_x[i].ravel()[:, None]
        wzi = wz[i].ravel()[:, None]
        cv = g.b[i] * (ui - omx * uxi)
        dstate_dU = cv * Sv + omx * Svd
        drho_dU = omx * Sv
        for j in range(N):
            kj = kappa[j]
            blk("AU", i, j)[:] = dstate_dU
            drho_dA = omx * kj * G
            dqx_dA = kj / ksum * w1m
            blk("BA", i, j)[:] = g.b[i] * ui * dqx_dA - T * drho_dA
            blk("BU", i, j)[:] = -T * drho_dU
            blk("UA", i, j)[:] = -wzi * (qxi * drho_dA + ri * dqx_dA)
            blk("UB", i, j)[:] = wzi * ri * (kj / ksum) * WR
            blk("UU", i, j)[:] = -wzi * qxi * drho_dU
        blk("AU", i, i)[:] += -g.b[i] * (rxi * Um + ri * Uxm)
        blk("BA", i, i)[:] += -g.a[i] * HXX + g.b[i] * ui * (HX - w1m) - T * Lrho
        blk("BU", i, i)[:] += g.b[i] * qxi * Um
        blk("UA", i, i)[:] += -wzi * (qxi * Lrho + ri * (HX - w1m))
        blk("UB", i, i)[:] += -wzi * ri * Qx
        blk("UU", i, i)[:] += wu[i] * Um
    return J


def fd_jacobian(A, B, U, g: Grid, config: SolverConfig = SolverConfig()) -> dict:
    """Forward-difference Jacobian, split into the same blocks as :func:`jacobian_blocks`.

    Columns whose basis function has no node in its support on any edge
    block are still evaluated; the cost is one residual per unknown.
    """
    x0 = flatten(A, B, U)
    shape = A.shape
    R0 = assemble_full_residual(A, B, U, g, config)
    Jfull = np.empty((R0.size, x0.size))
    for c in range(x0.size):
        h = np.sqrt(np.finfo(float).eps) * (1.0 + abs(x0[c]))
        x = x0.copy()
        x[c] += h
        Jfull[:, c] = (assemble_full_residual(*unflatten(x, shape), g, config) - R0) / h
    s = int(np.prod(shape))
    cut = {"A": slice(0, s), "B": slice(s, 2 * s), "U": slice(2 * s, 3 * s)}
    return {name: Jfull[cut[name[0]], cut[name[1]]] for name in BLOCK_NAMES}


def newton_direction(J: dict, R: np.ndarray, shape) -> np.ndarray:
    """Solve ``J d = -R`` by eliminating the state and adjoint blocks."""
    RA, RB, RU = (r.ravel() for r in unflatten(R, shape))
    luA = lu_checked(J["AA"], "state block of the Jacobian")
    luB = lu_checked(J["BB"], "adjoint block of the Jacobian")
    Xa = -sla.lu_solve(luA, J["AU"])
    a0 = -sla.lu_solve(luA, RA)
    Xb = -sla.lu_solve(luB, J["BU"] + J["BA"] @ Xa)
    b0 = -sla.lu_solve(luB, RB + J["BA"] @ a0)
    S = J["UU"] + J["UA"] @ Xa + J["UB"] @ Xb
    rhs = -RU - J["UA"] @ a0 - J["UB"] @ b0
    luS = lu_checked(S, "control Schur complement")
    dU = sla.lu_solve(luS, rhs)
    return np.concatenate([a0 + Xa @ dU, b0 + Xb @ dU, dU])


# --- solvers ----------------------------------------------------------------

def _prepare(problem, disc: Discretization):
    pn = normalize(problem) if isinstance(problem, StarProblem) else problem
    return pn, Grid.collocation(pn, disc)


def _residual_or_none(x, shape, g, config):
    try:
        return assemble_full_residual(*unflatten(x, shape), g, config)
    except VertexSingularityError:
        return None


def newton_solve(problem, disc: Discretization, config: SolverConfig = SolverConfig(),
                 initial=None, grid: Optional[Grid] = None):
    """Damped Newton on the full residual starting from ``initial``.

    Returns ``(DiscreteSolution, SolveReport)``.  When the tolerance is not
    met the best iterate is returned with ``report.converged = False``.
    """
    t0 = time.perf_counter()
    pn, g = _prepare(problem, disc) if grid is None else (grid.pn, grid)
    shape = (pn.N,) + disc.shape
    report = SolveReport("newton", False, 0)
    if initial is None:
        initial = (np.zeros(shape),) * 3
        if config.initial == "consistent":
            try:
                A0 = forward_solve(initial[2], g, eps_den=config.eps_den)
                initial = (A0, adjoint_solve(A0, initial[2], g, eps_den=config.eps_den), initial[2])
            except SchemeError as err:
                report.message = f"initial guess: {err}"
    x = flatten(*initial)
    R = assemble_full_residual(*unflatten(x, shape), g, config)
    norm = float(np.abs(R).max())
    report.residual_history.append(norm)
    it = 0
    while norm > config.tol and it < config.max_iter:
        it += 1
        if config.jacobian == "analytic":
            J = jacobian_blocks(*unflatten(x, shape), g, config)
        else:
            J = fd_jacobian(*unflatten(x, shape), g, config)
        try:
            d = newton_direction(J, R, shape)
        except SchemeError as err:
            report.message = f"iteration {it}: {err}"
            break
        lam = 1.0
        accepted = False
        while lam >= config.min_step:
            xt = x + lam * d
            Rt = _residual_or_none(xt, shape, g, config)
            if Rt is not None:
                nt = float(np.abs(Rt).max())
                if nt <= (1.0 - config.armijo * lam) * norm:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            report.message = f"iteration {it}: line search stagnated at residual {norm:.3e}"
            break
        x, R, norm = xt, Rt, nt
        report.residual_history.append(norm)
        report.step_history.append(lam)
        log.debug("newton %d: |R| = %.3e, step %.3g", it, norm, lam)
    report.iterations = len(report.step_history)
    report.converged = norm <= config.tol
    if not report.converged and not report.message:
        report.message = f"iteration cap {config.max_iter} reached at residual {norm:.3e}"
    report.final_residual = norm
    report.wall_time = time.perf_counter() - t0
    A, B, U = unflatten(x, shape)
    return DiscreteSolution(A.copy(), B.copy(), U.copy(), pn, disc, report, config), report


def interpolate_nodes(Z, g: Grid) -> np.ndarray:
    """Coefficients ``C`` with ``Phi_x C Phi_t^T = Z`` on the collocation grid."""
    luX = sla.lu_factor(g.X.phi)
    luT = sla.lu_factor(g.Tb.phi)
    out = np.empty(Z.shape[:1] + g.disc.shape)
    for i in range(Z.shape[0]):
        Y = sla.lu_solve(luX, Z[i])
        out[i] = sla.lu_solve(luT, Y.T).T
    return out


def sweep_solve(problem, disc: Discretization, config: SolverConfig = SolverConfig(),
                initial=None, grid: Optional[Grid] = None):
    """Forward-backward sweep with relaxed, projected control updates."""
    t0 = time.perf_counter()
    pn, g = _prepare(problem, disc) if grid is None else (grid.pn, grid)
    shape = (pn.N,) + disc.shape
    U = np.zeros(shape) if initial is None else np.array(initial[2], dtype=float)
    u_nodes = control_values(U, g)
    report = SolveReport("sweep", False, 0)
    A = B = np.zeros(shape)
    change = np.inf
    try:
        for it in range(1, config.sweep_max_iter + 1):
            A = forward_solve(U, g, eps_den=config.eps_den)
            B = adjoint_solve(A, U, g, eps_den=config.eps_den)
            z, _, _ = _control_target(A, B, U, g, config.eps_den)
            target = _clip(z, g) if config.optimality == "projected" else z
            new_nodes = (1.0 - config.omega) * u_nodes + config.omega * target
            change = float(np.abs(new_nodes - u_nodes).max())
            U = interpolate_nodes(new_nodes, g)
            u_nodes = new_nodes
            report.step_history.append(change)
            report.iterations = it
            if change <= config.tol:
                break
        A = forward_solve(U, g, eps_den=config.eps_den)
        B = adjoint_solve(A, U, g, eps_den=config.eps_den)
    except SchemeError as err:
        report.message = f"iteration {report.iterations + 1}: {err}"
    report.converged = change <= config.tol and not report.message
    if not report.converged and not report.message:
        report.message = f"sweep cap {config.sweep_max_iter} reached, last change {change:.3e}"
    try:
        report.final_residual = float(np.abs(assemble_full_residual(A, B, U, g, config)).max())
    except SchemeError:
        report.final_residual = float("nan")
    report.residual_history.append(report.final_residual)
    report.wall_time = time.perf_counter() - t0
    return DiscreteSolution(A, B, U, pn, disc, report, config), report


# --- gradient and cost ------------------------------------------------------

def cell_measure(g: Grid) -> np.ndarray:
    """Midpoint weights ``l_i T / (K1 K2)`` per edge."""
    K1, K2 = g.disc.shape
    return g.l * g.pn.T / (K1 * K2)


def reduced_gradient(A, B, U, g: Grid, *, tol: float = 1e-10, eps_den: float = EPS_DEN):
    """``alpha u - rho q_x`` at every node (physical units), shape (N, P, Q)."""
    rs = np.abs(state_residual(A, U, g, eps_den=eps_den)).max()
    ra = np.abs(adjoint_residual(B, A, U, g, eps_den=eps_den)).max()
    if rs > 10 * tol or ra > 10 * tol:
        warnings.warn(f"gradient from inconsistent coefficients: state residual {rs:.2e}, "
                      f"adjoint residual {ra:.2e}", RuntimeWarning)
    z, sf, af = _control_target(A, B, U, g, eps_den)
    u = control_values(U, g)
    return g.alpha[:, None, None] * (u - z)


def cost_sigma(A, U, g: Grid, *, eps_den: float = EPS_DEN) -> float:
    """Midpoint-rule value of the tracking cost on the collocation grid."""
    K1, K2 = g.disc.shape
    rho = state_fields(A, U, g, with_rate=False, eps_den=eps_den).rho
    u = control_values(U, g)
    gT = Grid.at(g.pn, g.disc, g.xs, [1.0])
    rho1 = state_fields(A, U, gT, with_rate=False, eps_den=eps_den).rho[:, :, 0]
    inner = ((rho - g.rho_d) ** 2 + g.alpha[:, None, None] * u**2).sum(axis=(1, 2))
    term = ((rho1 - gT.rhoT) ** 2).sum(axis=1)
    return float(0.5 * np.sum(inner * g.l * g.pn.T / (K1 * K2) + term * g.l / K1))


def reduced_cost(U, g: Grid, *, eps_den: float = EPS_DEN) -> float:
    """``sigma`` along the control-to-state map."""
    return cost_sigma(forward_solve(U, g, eps_den=eps_den), U, g, eps_den=eps_den)


def pair_with_direction(grad_nodes, V, g: Grid) -> float:
    """``sum_i sum_nodes g v * cell_measure`` for a coefficient direction ``V``."""
    v = control_values(V, g)
    return float(np.sum((grad_nodes * v).sum(axis=(1, 2)) * cell_measure(g)))


def discrete_cost_gradient(U, g: Grid, *, eps_den: float = EPS_DEN) -> np.ndarray:
    """Exact derivative of :func:`reduced_cost` with respect to ``U`` coefficients.

    Obtained from the transposed state Jacobian (a discrete adjoint), so it
    matches finite differences of ``sigma`` to rounding; used to separate
    discretization mismatch from coding errors in gradient checks.
    """
    N = g.N
    K1, K2 = g.disc.shape
    shape = (N, K1, K2)
    A = forward_solve(U, g, eps_den=eps_den)
    cfg = SolverConfig(eps_den=eps_den)
    J = jacobian_blocks(A, np.zeros(shape), U, g, cfg)
    w = cell_measure(g)
    sf = state_fields(A, U, g, with_rate=False, eps_den=eps_den)
    u = control_values(U, g)
    gT = Grid.at(g.pn, g.disc, g.xs, [1.0])
    sT = state_fields(A, U, gT, with_rate=False, eps_den=eps_den)
    rT = (sT.rho[:, :, 0] - gT.rhoT) * (g.l / K1)[:, None]  # (N, P)
    # d sigma / d rho at nodes and at (x_a, 1)
    e_nodes = ((sf.rho - g.rho_d) * w[:, None, None]).reshape(N, -1)
    # rho(x, 1) is affine in (A, U); build its Jacobian with the state ops at t = 1
    LrhoT = gT.state_ops[0]
    omxT = (1.0 - gT.xi_nodes)[:, None]
    denT = sT.vertex.den
    GT = gT.expand_t(gT.Wm / denT[:, None])
    SvT = gT.expand_t((-sT.vertex.v / denT)[:, None] * gT.Sm)
    n = g.shape[0] * g.shape[1]
    m = K1 * K2
    Lrho = g.state_ops[0]
    omx = (1.0 - g.xi_nodes)[:, None]
    G = g.expand_t(g.Wm / sf.vertex.den[:, None])
    Sv = g.expand_t((-sf.vertex.v / sf.vertex.den)[:, None] * g.Sm)
    gA = np.zeros(N * m)
    gU = np.zeros(N * m)
    tot_e = e_nodes.sum(axis=0)
    for i in range(N):
        gA[i * m:(i + 1) * m] += Lrho.T @ e_nodes[i] + LrhoT.T @ rT[i]
    for j in range(N):
        vA = g.kappa[j] * ((omx * G).T @ sum(e_nodes[i] for i in range(N))
                           + (omxT * GT).T @ sum(rT[i] for i in range(N)))
        gA[j * m:(j + 1) * m] += vA
        gU[j * m:(j + 1) * m] += (omx * Sv).T @ tot_e + (omxT * SvT).T @ rT.sum(axis=0)
    for i in range(N):
        gU[i * m:(i + 1) * m] += g.Um.T @ ((g.alpha[i] * w[i]) * u[i].ravel())
    lam = sla.lu_solve(lu_checked(J["AA"].T.copy(), "transposed state system"), gA)
    return (gU - J["AU"].T @ lam).reshape(shape)


def multistart(problem, disc: Discretization, config: SolverConfig = SolverConfig(),
               starts: int = 1, seed: int = 0, scale: float = 0.1, solver: str = "newton"):
    """Solve from ``starts`` initial guesses; the first is the zero guess.

    Returns the list of ``(DiscreteSolution, SolveReport)`` in start order
    and the sorted distinct costs of converged runs.
    """
    pn, g = _prepare(problem, disc)
    shape = (pn.N,) + disc.shape
    rng = np.random.default_rng(seed)
    runs = []
    for k in range(max(1, starts)):
        init = None
        if k > 0:
            span = (g.u_max - g.u_min)[:, None, None]
            mid = 0.5 * (g.u_max + g.u_min)[:, None, None]
            nodes = mid + scale * span * rng.uniform(-0.5, 0.5, (pn.N,) + g.shape)
            U0 = interpolate_nodes(nodes, g)
            try:
                A0 = forward_solve(U0, g, eps_den=config.eps_den)
                init = (A0, adjoint_solve(A0, U0, g, eps_den=config.eps_den), U0)
            except SchemeError:
                init = (np.zeros(shape), np.zeros(shape), U0)
        fn = newton_solve if solver == "newton" else sweep_solve
        runs.append(fn(pn, disc, config, initial=init, grid=g))
    costs = []
    for sol, rep in runs:
        if rep.converged:
            c = cost_sigma(sol.A, sol.U, g, eps_den=config.eps_den)
            if not any(abs(c - d) <= 1e-8 * max(1.0, abs(d)) for d in costs):
                costs.append(c)
    return runs, sorted(costs)
