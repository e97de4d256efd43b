"""Backward collocation scheme for the adjoint state.

The adjoint solves ``-q_t - a q_xx + b u q_x = T (rho - rho_d)`` on unit
edges with ``q(1, t) = 0``, continuity and ``sum_i kappa_i q_x(0, t) = 0``
at the vertex, and ``q(x, 1) = rho(x, 1) - rho_T(x)``.  The mixed
derivative ``q_xxt`` is expanded as ``Phi(x)^T B_i Phi(t)`` and integrated
backward from the terminal time with the right integral ``R``:

    q    = -P2(x) B R(t) + x W(t) + H(x) + (1 - x) v_q(t)
    W(t) = P2(1) B R(t)
    v_q  = sum_j kappa_j (W_j + H_j'(0)) / sum_j kappa_j

``H`` carries the terminal data built from the state coefficients ``A``.
It vanishes at both ends, so ``v_q`` is the vertex value.  The terminal
profile is reproduced exactly when the terminal data satisfy the
homogeneous flux balance at the vertex; otherwise the mismatch is the
linear term ``(1 - x) * (v_q(1) - rho(0, 1) + rho_T(0))``, reported by
:func:`terminal_mismatch`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .state import EPS_DEN, Grid, control_values, lu_checked, state_fields


@dataclass
class AdjointFields:
    q: np.ndarray
    q_x: np.ndarray
    q_xx: np.ndarray
    q_t: np.ndarray
    v_q: np.ndarray
    vdot_q: np.ndarray


def _core(Xm, C, Tm):
    return np.einsum("pk,ikl,ql->ipq", Xm, C, Tm, optimize=True)


def terminal_terms(A, g: Grid):
    """``H, H', H''`` on the grid's x-points (shape (N, P)) and ``H'(0)`` (shape (N,))."""
    X = g.X
    APt = np.einsum("ikl,l->ik", A, g.Pt1)  # (N, K1)
    w1 = APt @ g.p2one
    xs = g.xs[None, :]
    r0 = g.rho0 - g.rho0_at0[:, None] + xs * (g.rho0_at0 - g.rho0_at1)[:, None]
    slope0 = g.rho0_x + (g.rho0_at0 - g.rho0_at1)[:, None]
    H = (APt @ X.left2.T - xs * w1[:, None] + r0 - g.rhoT
         + (1.0 - xs) * g.rhoT_at0[:, None] + xs * g.rhoT_at1[:, None])
    Hx = (APt @ X.left.T - w1[:, None] + slope0 - g.rhoT_x
          + (g.rhoT_at1 - g.rhoT_at0)[:, None])
    Hxx = APt @ X.phi.T + g.rho0_xx - g.rhoT_xx
    c = g.rho0_at0 + g.rho0x_at0 - g.rho0_at1
    Hx0 = -w1 + c - g.rhoTx_at0 - g.rhoT_at0 + g.rhoT_at1
    return H, Hx, Hxx, Hx0


def adjoint_fields(B, A, g: Grid) -> AdjointFields:
    B = np.asarray(B, dtype=float)
    kappa = g.kappa
    ksum = kappa.sum()
    X, Tb = g.X, g.Tb
    W = np.einsum("k,ikl,ql->iq", g.p2one, B, Tb.right)
    Wd = -np.einsum("k,ikl,ql->iq", g.p2one, B, Tb.phi)
    H, Hx, Hxx, Hx0 = terminal_terms(A, g)
    v_q = kappa @ (W + Hx0[:, None]) / ksum
    vdot_q = kappa @ Wd / ksum
    xi = g.xs[None, :, None]
    q = -_core(X.left2, B, Tb.right) + xi * W[:, None, :] + H[:, :, None] + (1.0 - xi) * v_q[None, None, :]
    q_x = -_core(X.left, B, Tb.right) + W[:, None, :] + Hx[:, :, None] - v_q[None, None, :]
    q_xx = -_core(X.phi, B, Tb.right) + Hxx[:, :, None]
    q_t = _core(X.left2, B, Tb.phi) + xi * Wd[:, None, :] + (1.0 - xi) * vdot_q[None, None, :]
    return AdjointFields(q, q_x, q_xx, q_t, v_q, vdot_q)


def adjoint_residual(B, A, U, g: Grid, *, eps_den: float = EPS_DEN, rho=None) -> np.ndarray:
    """``-q_t - a q_xx + b u q_x - T (rho - rho_d)`` at every node, shape (N, P, Q)."""
    af = adjoint_fields(B, A, g)
    if rho is None:
        rho = state_fields(A, U, g, with_rate=False, eps_den=eps_den).rho
    u = control_values(U, g)
    a = g.a[:, None, None]
    b = g.b[:, None, None]
    return -af.q_t - a * af.q_xx + b * u * af.q_x - g.pn.T * (rho - g.rho_d)


def adjoint_ops(g: Grid):
    """Local maps vec(B_i) -> (q_x, q_xx, q_t) without vertex terms, cached on the grid."""
    ops = g.__dict__.get("_adjoint_ops")
    if ops is None:
        X, Tb, xi = g.X, g.Tb, g.xi_nodes[:, None]
        ops = (
            -np.kron(X.left, Tb.right) + g.expand_t(g.WRm),
            -np.kron(X.phi, Tb.right),
            np.kron(X.left2, Tb.phi) - xi * g.expand_t(g.Wdm),
        )
        g.__dict__["_adjoint_ops"] = ops
    return ops


def adjoint_operator(U, g: Grid) -> np.ndarray:
    """Matrix of ``vec(B) -> adjoint_residual`` for fixed ``(A, U)`` (the linear part)."""
    N = g.N
    P, Q = g.shape
    n = P * Q
    K1, K2 = g.disc.shape
    m = K1 * K2
    Qx, Qxx, Qs = adjoint_ops(g)
    u = control_values(U, g)
    ksum = g.kappa.sum()
    one_m_xi = (1.0 - g.xi_nodes)[:, None]
    WR = g.expand_t(g.WRm)
    Wd = g.expand_t(g.Wdm)
    Mat = np.empty((N * n, N * m))
    for i in range(N):
        ui = u[i].ravel()[:, None]
        V = (-g.b[i] * ui * WR + one_m_xi * Wd) / ksum
        for j in range(N):
            Mat[i * n:(i + 1) * n, j * m:(j + 1) * m] = g.kappa[j] * V
        Mat[i * n:(i + 1) * n, i * m:(i + 1) * m] += -Qs - g.a[i] * Qxx + g.b[i] * ui * Qx
    return Mat


def adjoint_solve(A, U, g: Grid, *, eps_den: float = EPS_DEN, tol: float = 1e-10) -> np.ndarray:
    """Coefficients ``B`` with zero adjoint residual for given state and control."""
    N = g.N
    K1, K2 = g.disc.shape
    A = np.asarray(A, dtype=float)
    U = np.asarray(U, dtype=float)
    rho = state_fields(A, U, g, with_rate=False, eps_den=eps_den).rho
    Mat = adjoint_operator(U, g)
    r0 = adjoint_residual(np.zeros((N, K1, K2)), A, U, g, rho=rho).ravel()
    lu = lu_checked(Mat, "adjoint system")
    B = sla.lu_solve(lu, -r0).reshape(N, K1, K2)
    res = np.abs(Mat @ B.ravel() + r0).max()
    scale = max(1.0, np.abs(r0).max())
    if not res <= tol * scale:
        warnings.warn(f"adjoint solve residual {res:.3e} exceeds {tol:.1e} (relative)", RuntimeWarning)
    return B


def terminal_mismatch(A, U, g: Grid, *, eps_den: float = EPS_DEN) -> float:
    """Size of the vertex part of ``q(., 1) - (rho(., 1) - rho_T)``.

    Zero when ``sum_i kappa_i (rho_x - rho_T')(0, 1) = 0``, which holds for
    ``u(0, 1) rho(0, 1) = 0`` and flux-free terminal targets.
    """
    g1 = Grid.at(g.pn, g.disc, [0.0], [1.0])
    v1 = state_fields(A, U, g1, with_rate=False, eps_den=eps_den).vertex.v[0]
    _, _, _, Hx0 = terminal_terms(A, g1)
    vq1 = g.kappa @ Hx0 / g.kappa.sum()
    return float(abs(vq1 - v1 + g.rhoT_at0[0]))


def adjoint_vertex_value(B, A, pn, disc, t):
    """Common vertex value ``q(0, t)``."""
    g = Grid.at(pn, disc, [0.0], np.atleast_1d(t))
    v = adjoint_fields(B, A, g).v_q
    return float(v[0]) if np.ndim(t) == 0 else v


class AdjointEvaluator:
    """Read-only access to ``q`` and its derivatives for fixed coefficients."""

    def __init__(self, B, A, pn, disc):
        self.B = np.asarray(B, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.pn = pn
        self.disc = disc

    def fields(self, xs, ts) -> AdjointFields:
        return adjoint_fields(self.B, self.A, Grid.at(self.pn, self.disc, xs, ts))

    def on_grid(self, g: Grid) -> AdjointFields:
        return adjoint_fields(self.B, self.A, g)

    def _point(self, name, x, t, i):
        return float(getattr(self.fields([x], [t]), name)[i, 0, 0])

    def q(self, x, t, i):
        return self._point("q", x, t, i)

    def q_x(self, x, t, i):
        return self._point("q_x", x, t, i)

    def q_xx(self, x, t, i):
        return self._point("q_xx", x, t, i)

    def q_t(self, x, t, i):
        return self._point("q_t", x, t, i)


def reconstruct_q(B, A, pn, disc, x, t, i):
    return AdjointEvaluator(B, A, pn, disc).q(x, t, i)


def reconstruct_q_x(B, A, pn, disc, x, t, i):
    return AdjointEvaluator(B, A, pn, disc).q_x(x, t, i)


def reconstruct_q_xx(B, A, pn, disc, x, t, i):
    return AdjointEvaluator(B, A, pn, disc).q_xx(x, t, i)


def reconstruct_q_t(B, A, pn, disc, x, t, i):
    return AdjointEvaluator(B, A, pn, disc).q_t(x, t, i)
