"""Collocation representation of the state on the normalized star graph.

On every edge the mixed derivative ``rho_xxt`` is expanded as
``Phi(x)^T A_i Phi(t)``.  Integrating twice in ``x`` and once in ``t``
and imposing ``rho(1, t) = 0``, continuity at the vertex and the
Kirchhoff balance ``sum_i [kappa_i rho_x + u_i rho](0, t) = 0`` gives

    rho  = P2(x) A P(t) - x w(t) + r0(x) + (1 - x) v(t)
    w(t) = P2(1) A P(t)
    r0   = rho0(x) - rho0(0) + x (rho0(0) - rho0(1))
    v(t) = sum_j kappa_j (w_j - c_j) / (sum_j u_j(0, t) - sum_j kappa_j)
    c_j  = rho0_j(0) + rho0_j'(0) - rho0_j(1)

with ``P`` the left integral and ``P2`` the double left integral.  ``v``
is the common vertex value.  Coordinates here are the unit ones produced
by :func:`fpstar.problem.normalize`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from . import expr as ex
from .basis import AxisBasis, BasisSpec, collocation_points, endpoint_rows
from .problem import NormalizedProblem

EPS_DEN = 1e-10


class SchemeError(RuntimeError):
    """Base class for failures of the collocation schemes."""


class VertexSingularityError(SchemeError):
    """The vertex closure denominator ``sum_j (u_j(0,t) - kappa_j)`` nearly vanishes."""

    def __init__(self, t, den):
        self.t = float(t)
        self.den = float(den)
        super().__init__(f"vertex closure denominator {self.den:.3e} at t={self.t:.6g}")


class SingularSystemError(SchemeError):
    """A collocation system could not be solved reliably."""

    def __init__(self, what: str, cond: float):
        self.what = what
        self.cond = cond
        super().__init__(f"{what}: matrix is singular to working precision (condition ~ {cond:.3e})")


@dataclass(frozen=True)
class Discretization:
    """Basis resolutions in space and time."""

    x: BasisSpec
    t: BasisSpec

    @classmethod
    def make(cls, J1: int, J2: int, M1: int = 4, M2: int = 4) -> "Discretization":
        return cls(BasisSpec(J1, M1), BasisSpec(J2, M2))

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.K, self.t.K


def _eval_data(e, xs, ts=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ex.ExprDomainWarning)
        if ts is None:
            return np.asarray(ex.evaluate(e, xs, 0.0), dtype=float)
        return np.asarray(ex.evaluate(e, xs[:, None], ts[None, :]), dtype=float)


class Grid:
    """Basis rows and problem data on a tensor set of points ``xs x ts``.

    ``Grid.collocation`` gives the collocation grid used by the residuals;
    ``Grid.at`` gives arbitrary sample points for reconstruction.
    """

    def __init__(self, pn: NormalizedProblem, disc: Discretization, xs, ts):
        self.pn = pn
        self.disc = disc
        self.xs = np.atleast_1d(np.asarray(xs, dtype=float))
        self.ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self.X = AxisBasis.at(disc.x, self.xs)
        self.Tb = AxisBasis.at(disc.t, self.ts)
        ex_ = endpoint_rows(disc.x)
        et = endpoint_rows(disc.t)
        self.phi0_x = ex_["phi0"]
        self.p2one = ex_["left2_1"]
        self.Pt1 = et["left1"]
        self.phi1_t = et["phi1"]
        self.kappa = pn.array("kappa")
        self.a = pn.array("a")
        self.b = pn.array("b")
        self.l = pn.array("l")
        self.alpha = pn.array("alpha")
        self.u_min = pn.array("u_min")
        self.u_max = pn.array("u_max")
        E = pn.edges
        xs_, ts_ = self.xs, self.ts
        self.rho0 = np.array([_eval_data(e.rho0, xs_) for e in E])
        self.rho0_x = np.array([_eval_data(e.rho0_x, xs_) for e in E])
        self.rho0_xx = np.array([_eval_data(e.rho0_xx, xs_) for e in E])
        self.rhoT = np.array([_eval_data(e.rho_T, xs_) for e in E])
        self.rhoT_x = np.array([_eval_data(e.rho_T_x, xs_) for e in E])
        self.rhoT_xx = np.array([_eval_data(e.rho_T_xx, xs_) for e in E])
        zero, one = np.array([0.0]), np.array([1.0])
        self.rho0_at0 = np.array([_eval_data(e.rho0, zero)[0] for e in E])
        self.rho0x_at0 = np.array([_eval_data(e.rho0_x, zero)[0] for e in E])
        self.rho0_at1 = np.array([_eval_data(e.rho0, one)[0] for e in E])
        self.rhoT_at0 = np.array([_eval_data(e.rho_T, zero)[0] for e in E])
        self.rhoTx_at0 = np.array([_eval_data(e.rho_T_x, zero)[0] for e in E])
        self.rhoT_at1 = np.array([_eval_data(e.rho_T, one)[0] for e in E])
        self.rho_d = np.array([_eval_data(e.rho_d, xs_, ts_) for e in E])
        self.f = np.array([_eval_data(e.f, xs_, ts_) for e in E])

    @classmethod
    def collocation(cls, pn: NormalizedProblem, disc: Discretization) -> "Grid":
        return cls(pn, disc, collocation_points(disc.x), collocation_points(disc.t))

    @classmethod
    def at(cls, pn: NormalizedProblem, disc: Discretization, xs, ts) -> "Grid":
        return cls(pn, disc, xs, ts)

    @property
    def N(self) -> int:
        return self.pn.N

    @property
    def shape(self) -> tuple[int, int]:
        return self.xs.size, self.ts.size

    @cached_property
    def exact(self):
        """Exact ``(rho, u)`` samples, or ``None`` when the problem has no reference."""
        E = self.pn.edges
        if E[0].exact_rho is None:
            return None
        rho = np.array([_eval_data(e.exact_rho, self.xs, self.ts) for e in E])
        u = np.array([_eval_data(e.exact_u, self.xs, self.ts) for e in E])
        return rho, u

    def need_dphi_t(self):
        if self.Tb.dphi is None:
            raise SchemeError("time derivative requested at a cell breakpoint of the time basis")
        return self.Tb.dphi

    def need_dphi_x(self):
        if self.X.dphi is None:
            raise SchemeError("x-derivative of the control requested at a cell breakpoint")
        return self.X.dphi

    # --- Kronecker operators on the flattened (node, coefficient) layout ---
    # rows: node a*Q + b; columns: coefficient k*K2 + l

    def expand_t(self, G: np.ndarray) -> np.ndarray:
        """Repeat per-time rows ``G[b]`` for every node ``(a, b)``."""
        P, Q = self.shape
        return G[np.tile(np.arange(Q), P)]

    @cached_property
    def xi_nodes(self) -> np.ndarray:
        return np.repeat(self.xs, self.ts.size)

    @cached_property
    def Wm(self):
        return np.kron(self.p2one[None, :], self.Tb.left)

    @cached_property
    def Wdm(self):
        return np.kron(self.p2one[None, :], self.Tb.phi)

    @cached_property
    def WRm(self):
        return np.kron(self.p2one[None, :], self.Tb.right)

    @cached_property
    def Sm(self):
        return np.kron(self.phi0_x[None, :], self.Tb.phi)

    @cached_property
    def Sdm(self):
        return np.kron(self.phi0_x[None, :], self.need_dphi_t())

    @cached_property
    def Um(self):
        return np.kron(self.X.phi, self.Tb.phi)

    @cached_property
    def Uxm(self):
        return np.kron(self.need_dphi_x(), self.Tb.phi)

    @cached_property
    def state_ops(self):
        """Local linear maps vec(A_i) -> (rho, rho_x, rho_xx, rho_t) without vertex terms."""
        X, Tb, xi = self.X, self.Tb, self.xi_nodes[:, None]
        Wm = self.expand_t(self.Wm)
        return (
            np.kron(X.left2, Tb.left) - xi * Wm,
            np.kron(X.left, Tb.left) - Wm,
            np.kron(X.phi, Tb.left),
            np.kron(X.left2, Tb.phi) - xi * self.expand_t(self.Wdm),
        )


def _core(Xm, C, Tm):
    """``Xm C_i Tm^T`` for every edge: shape (N, P, Q)."""
    return np.einsum("pk,ikl,ql->ipq", Xm, C, Tm, optimize=True)


def control_values(U, g: Grid, *, derivative: bool = False):
    """Control (and optionally its x-derivative) on the grid, shape (N, P, Q)."""
    u = _core(g.X.phi, U, g.Tb.phi)
    if not derivative:
        return u
    return u, _core(g.need_dphi_x(), U, g.Tb.phi)


@dataclass
class VertexState:
    """Time series of the state vertex closure."""

    sigma_u: np.ndarray
    den: np.ndarray
    w: np.ndarray
    num: np.ndarray
    v: np.ndarray
    c: np.ndarray
    sigma_ud: np.ndarray | None = None
    wd: np.ndarray | None = None
    vdot: np.ndarray | None = None


def vertex_state(A, U, g: Grid, *, with_rate: bool | None = None, eps_den: float = EPS_DEN) -> VertexState:
    if with_rate is None:
        with_rate = g.Tb.dphi is not None
    kappa = g.kappa
    sigma_u = np.einsum("k,ikl,ql->q", g.phi0_x, U, g.Tb.phi)
    den = sigma_u - kappa.sum()
    bad = np.abs(den) < eps_den
    if np.any(bad):
        k = int(np.argmax(bad))
        raise VertexSingularityError(g.ts[k], den[k])
    w = np.einsum("k,ikl,ql->iq", g.p2one, A, g.Tb.left)
    c = g.rho0_at0 + g.rho0x_at0 - g.rho0_at1
    num = kappa @ (w - c[:, None])
    vs = VertexState(sigma_u=sigma_u, den=den, w=w, num=num, v=num / den, c=c)
    if with_rate:
        vs.sigma_ud = np.einsum("k,ikl,ql->q", g.phi0_x, U, g.need_dphi_t())
        vs.wd = np.einsum("k,ikl,ql->iq", g.p2one, A, g.Tb.phi)
        vs.vdot = kappa @ vs.wd / den - num * vs.sigma_ud / den**2
    return vs


@dataclass
class StateFields:
    """State and derivatives on a grid, each of shape (N, P, Q)."""

    rho: np.ndarray
    rho_x: np.ndarray
    rho_xx: np.ndarray
    rho_t: np.ndarray | None
    vertex: VertexState


def state_fields(A, U, g: Grid, *, with_rate: bool | None = None, eps_den: float = EPS_DEN) -> StateFields:
    A = np.asarray(A, dtype=float)
    vs = vertex_state(A, U, g, with_rate=with_rate, eps_den=eps_den)
    X, Tb = g.X, g.Tb
    xi = g.xs[None, :, None]
    w = vs.w[:, None, :]
    v = vs.v[None, None, :]
    r0 = g.rho0 - g.rho0_at0[:, None] + g.xs[None, :] * (g.rho0_at0 - g.rho0_at1)[:, None]
    slope0 = g.rho0_x + (g.rho0_at0 - g.rho0_at1)[:, None]
    rho = _core(X.left2, A, Tb.left) - xi * w + r0[:, :, None] + (1.0 - xi) * v
    rho_x = _core(X.left, A, Tb.left) - w + slope0[:, :, None] - v
    rho_xx = _core(X.phi, A, Tb.left) + g.rho0_xx[:, :, None]
    rho_t = None
    if vs.vdot is not None:
        rho_t = (_core(X.left2, A, Tb.phi) - xi * vs.wd[:, None, :]
                 + (1.0 - xi) * vs.vdot[None, None, :])
    return StateFields(rho, rho_x, rho_xx, rho_t, vs)


def state_residual(A, U, g: Grid, *, eps_den: float = EPS_DEN) -> np.ndarray:
    """``rho_t - a rho_xx - b (u rho_x + u_x rho) - T f`` at every node, shape (N, P, Q)."""
    sf = state_fields(A, U, g, eps_den=eps_den)
    u, ux = control_values(U, g, derivative=True)
    a = g.a[:, None, None]
    b = g.b[:, None, None]
    return sf.rho_t - a * sf.rho_xx - b * (u * sf.rho_x + ux * sf.rho) - g.f


def state_operator(U, g: Grid, *, eps_den: float = EPS_DEN) -> np.ndarray:
    """Matrix of the (affine) map ``vec(A) -> state_residual`` for fixed ``U``.

    Rows and columns are edge-major, then node / coefficient row-major.
    """
    N = g.N
    n = g.shape[0] * g.shape[1]
    K1, K2 = g.disc.shape
    m = K1 * K2
    Lrho, Lx, Lxx, Ls = g.state_ops
    u, ux = control_values(U, g, derivative=True)
    vs = vertex_state(np.zeros((N, K1, K2)), U, g, eps_den=eps_den)
    den = vs.den[:, None]
    G = g.expand_t(g.Wm / den)
    Gd = g.expand_t(g.Wdm / den - g.Wm * vs.sigma_ud[:, None] / den**2)
    one_m_xi = (1.0 - g.xi_nodes)[:, None]
    Mat = np.empty((N * n, N * m))
    for i in range(N):
        ui = u[i].ravel()[:, None]
        uxi = ux[i].ravel()[:, None]
        # coefficients of v and vdot in this edge's residual
        cv = g.b[i] * (ui - one_m_xi * uxi)
        V = cv * G + one_m_xi * Gd
        for j in range(N):
            Mat[i * n:(i + 1) * n, j * m:(j + 1) * m] = g.kappa[j] * V
        Mat[i * n:(i + 1) * n, i * m:(i + 1) * m] += Ls - g.a[i] * Lxx - g.b[i] * (ui * Lx + uxi * Lrho)
    return Mat


def lu_checked(Mat: np.ndarray, what: str):
    """LU factorization that reports singular systems with a condition estimate."""
    anorm = np.linalg.norm(Mat, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu, piv = sla.lu_factor(Mat, check_finite=True)
        except (sla.LinAlgWarning, sla.LinAlgError, ValueError):
            raise SingularSystemError(what, np.inf) from None
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > np.finfo(float).eps * Mat.shape[0]:
        raise SingularSystemError(what, 1.0 / rcond if rcond > 0 else np.inf)
    return lu, piv


def forward_solve(U, g: Grid, *, eps_den: float = EPS_DEN, tol: float = 1e-10) -> np.ndarray:
    """Coefficients ``A`` with zero state residual for the given control."""
    N = g.N
    K1, K2 = g.disc.shape
    U = np.asarray(U, dtype=float)
    Mat = state_operator(U, g, eps_den=eps_den)
    r0 = state_residual(np.zeros((N, K1, K2)), U, g, eps_den=eps_den).ravel()
    lu = lu_checked(Mat, "state system")
    A = sla.lu_solve(lu, -r0).reshape(N, K1, K2)
    res = np.abs(Mat @ A.ravel() + r0).max()
    scale = max(1.0, np.abs(r0).max())
    if not res <= tol * scale:
        warnings.warn(f"state solve residual {res:.3e} exceeds {tol:.1e} (relative)", RuntimeWarning)
    return A


# --- pointwise access -------------------------------------------------------

def _point_grid(pn, disc, x, t):
    return Grid.at(pn, disc, [x], [t])


def vertex_value(A, U, pn: NormalizedProblem, disc: Discretization, t, *, eps_den: float = EPS_DEN):
    """Common vertex value ``rho(0, t)`` (same on every edge)."""
    g = Grid.at(pn, disc, [0.0], np.atleast_1d(t))
    v = vertex_state(A, U, g, with_rate=False, eps_den=eps_den).v
    return float(v[0]) if np.ndim(t) == 0 else v


def vertex_x_derivative(A, U, pn: NormalizedProblem, disc: Discretization, t, i: int,
                        *, eps_den: float = EPS_DEN):
    """``rho_x(0, t)`` on edge ``i`` from the vertex closure."""
    g = Grid.at(pn, disc, [0.0], np.atleast_1d(t))
    vs = vertex_state(A, U, g, with_rate=False, eps_den=eps_den)
    out = -vs.w[i] + vs.c[i] - vs.v
    return float(out[0]) if np.ndim(t) == 0 else out


class StateEvaluator:
    """Read-only access to ``rho`` and its derivatives for fixed coefficients."""

    def __init__(self, A, U, pn: NormalizedProblem, disc: Discretization, eps_den: float = EPS_DEN):
        self.A = np.asarray(A, dtype=float)
        self.U = np.asarray(U, dtype=float)
        self.pn = pn
        self.disc = disc
        self.eps_den = eps_den

    def fields(self, xs, ts, *, with_rate: bool | None = None) -> StateFields:
        g = Grid.at(self.pn, self.disc, xs, ts)
        return state_fields(self.A, self.U, g, with_rate=with_rate, eps_den=self.eps_den)

    def on_grid(self, g: Grid, *, with_rate: bool | None = None) -> StateFields:
        return state_fields(self.A, self.U, g, with_rate=with_rate, eps_den=self.eps_den)

    def _point(self, name, x, t, i):
        sf = self.fields([x], [t], with_rate=(name == "rho_t") or None)
        return float(getattr(sf, name)[i, 0, 0])

    def rho(self, x, t, i):
        return self._point("rho", x, t, i)

    def rho_x(self, x, t, i):
        return self._point("rho_x", x, t, i)

    def rho_xx(self, x, t, i):
        return self._point("rho_xx", x, t, i)

    def rho_t(self, x, t, i):
        return self._point("rho_t", x, t, i)


def reconstruct_rho(A, U, pn, disc, x, t, i):
    return StateEvaluator(A, U, pn, disc).rho(x, t, i)


def reconstruct_rho_x(A, U, pn, disc, x, t, i):
    return StateEvaluator(A, U, pn, disc).rho_x(x, t, i)


def reconstruct_rho_xx(A, U, pn, disc, x, t, i):
    return StateEvaluator(A, U, pn, disc).rho_xx(x, t, i)


def reconstruct_rho_t(A, U, pn, disc, x, t, i):
    return StateEvaluator(A, U, pn, disc).rho_t(x, t, i)
