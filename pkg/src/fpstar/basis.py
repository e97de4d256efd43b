"""Shifted Legendre scaling functions on [0, 1).

The basis at dilation level ``J`` with ``M`` polynomials per cell has
``K = 2**(J-1) * M`` functions.  Function ``k`` (1-based) lives on cell
``n = (k-1)//M + 1`` and carries the shifted Legendre polynomial of degree
``m = (k-1) % M``::

    phi_k(t) = 2**((J-1)/2) * sqrt(2m+1) * L_m(2**(J-1) t - n + 1)

Besides point evaluation this module provides the exact left, right and
double-left integrals of the basis, which the collocation schemes use to
integrate the mixed-derivative ansatz in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import prod

import numpy as np

MAX_LEGENDRE_M = 30


class BasisDomainError(ValueError):
    """Evaluation point outside the domain of a basis operation."""


@dataclass(frozen=True)
class BasisSpec:
    """Dilation level ``J`` and polynomial count ``M`` of one axis."""

    J: int
    M: int

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"dilation level J must be an integer >= 1, got {self.J!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"polynomial count M must be an integer >= 1, got {self.M!r}")

    @property
    def cells(self) -> int:
        return 2 ** (self.J - 1)

    @property
    def K(self) -> int:
        return self.cells * self.M

    def index(self, n: int, m: int) -> int:
        """1-based basis index of cell ``n`` (1-based) and degree ``m``."""
        if not (1 <= n <= self.cells and 0 <= m < self.M):
            raise IndexError(f"(n={n}, m={m}) outside J={self.J}, M={self.M}")
        return (n - 1) * self.M + m + 1

    def cell_degree(self, k: int) -> tuple[int, int]:
        """Inverse of :meth:`index`."""
        if not 1 <= k <= self.K:
            raise IndexError(f"basis index {k} outside 1..{self.K}")
        return (k - 1) // self.M + 1, (k - 1) % self.M

    def breakpoints(self) -> np.ndarray:
        """Interior cell boundaries."""
        return np.arange(1, self.cells) / self.cells


def _legendre_coeff_exact(i: int, m: int) -> Fraction:
    if m == 0:
        return Fraction(1)
    num = prod(1 + i + j for j in range(m))
    den = prod(i - j for j in range(m + 1) if j != i)
    return Fraction(num, den)


@lru_cache(maxsize=None)
def _legendre_table(M: int) -> np.ndarray:
    c = np.zeros((M, M))
    for m in range(M):
        for i in range(m + 1):
            c[i, m] = float(_legendre_coeff_exact(i, m))
    c.setflags(write=False)
    return c


def legendre_coeffs(M: int) -> np.ndarray:
    """Monomial coefficients of the shifted Legendre polynomials ``L_0..L_{M-1}``.

    Returns an ``(M, M)`` array ``c`` with ``L_m(t) = sum_i c[i, m] t**i``;
    entries with ``i > m`` are zero.  The product formula is evaluated in
    exact rational arithmetic, then rounded once to double precision.
    """
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    if M > MAX_LEGENDRE_M:
        raise OverflowError(
            f"M={M} exceeds {MAX_LEGENDRE_M}: coefficients no longer fit double precision exactly"
        )
    return _legendre_table(int(M))


def _coeffs_for(spec: BasisSpec, coeffs) -> np.ndarray:
    if coeffs is None:
        return legendre_coeffs(spec.M)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] < spec.M or coeffs.shape[1] < spec.M:
        raise ValueError(f"coefficient table {coeffs.shape} too small for M={spec.M}")
    return coeffs[: spec.M, : spec.M]


def _local(spec: BasisSpec, t: np.ndarray):
    """Cell index (0-based, per point) and unclipped local coordinate per basis cell.

    ``tau[p, n] = 2**(J-1) t_p - n`` for every cell ``n`` (0-based), so it
    lies in [0, 1) exactly when ``t_p`` is inside cell ``n``.
    """
    scale = spec.cells
    tau = scale * t[:, None] - np.arange(spec.cells)[None, :]
    return tau


def _poly(c: np.ndarray, tau: np.ndarray, shift: int, weights: np.ndarray) -> np.ndarray:
    """sum_i c[i, m] * weights[i] * tau**(i + shift) for every degree m.

    ``tau`` has shape (P, C); the result has shape (P, C, M).
    """
    M = c.shape[0]
    powers = tau[..., None] ** (np.arange(M) + shift)  # (P, C, M) over i
    return np.einsum("pci,im->pcm", powers * weights, c)


def _as_points(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    return np.atleast_1d(arr).ravel(), arr.ndim == 0


def _flatten(values: np.ndarray, scalar: bool) -> np.ndarray:
    out = values.reshape(values.shape[0], -1)
    return out[0] if scalar else out


def eval_basis(spec: BasisSpec, coeffs=None, t=0.0, *, left_limit: bool = False) -> np.ndarray:
    """Values of all ``K`` basis functions at ``t``.

    ``t`` may be a scalar (returns shape ``(K,)``) or an array of points
    (returns ``(P, K)``).  Cells are half-open, so the domain is [0, 1).
    With ``left_limit=True`` the limit from the left is returned instead and
    the domain becomes (0, 1]; this is how terminal-time values are taken.
    """
    c = _coeffs_for(spec, coeffs)
    pts, scalar = _as_points(t)
    if left_limit:
        if np.any((pts <= 0.0) | (pts > 1.0)):
            raise BasisDomainError(f"left limits need t in (0, 1], got {pts}")
    elif np.any((pts < 0.0) | (pts >= 1.0)):
        raise BasisDomainError(f"basis evaluation needs t in [0, 1), got {pts}")
    tau = _local(spec, pts)
    inside = (tau > 0.0) & (tau <= 1.0) if left_limit else (tau >= 0.0) & (tau < 1.0)
    m = np.arange(spec.M)
    scale = 2.0 ** ((spec.J - 1) / 2) * np.sqrt(2 * m + 1)
    vals = _poly(c, tau, 0, np.ones(spec.M)) * scale
    vals = np.where(inside[..., None], vals, 0.0)
    return _flatten(vals, scalar)


def eval_basis_time_derivative(spec: BasisSpec, coeffs=None, t=0.5) -> np.ndarray:
    """Derivative of :func:`eval_basis` in ``t`` at points strictly inside a cell."""
    c = _coeffs_for(spec, coeffs)
    pts, scalar = _as_points(t)
    if np.any((pts <= 0.0) | (pts >= 1.0)):
        raise BasisDomainError(f"derivative needs t in (0, 1), got {pts}")
    scaled = pts * spec.cells
    on_break = np.isclose(scaled, np.round(scaled), rtol=0.0, atol=1e-14)
    if np.any(on_break):
        raise BasisDomainError(f"derivative undefined at cell breakpoints {pts[on_break]}")
    tau = _local(spec, pts)
    inside = (tau >= 0.0) & (tau < 1.0)
    m = np.arange(spec.M)
    scale = 2.0 ** ((spec.J - 1) / 2) * np.sqrt(2 * m + 1) * spec.cells
    # d/dtau sum_i c_i tau^i = sum_{i>=1} i c_i tau^(i-1)
    dc = c * np.arange(spec.M)[:, None]
    vals = _poly(dc, tau, -1, np.ones(spec.M)) if spec.M > 1 else np.zeros(tau.shape + (1,))
    vals = np.where(inside[..., None], vals * scale, 0.0)
    return _flatten(vals, scalar)


def _check_closed(pts: np.ndarray):
    if np.any((pts < 0.0) | (pts > 1.0)):
        raise BasisDomainError(f"integral operators need t in [0, 1], got {pts}")


def left_integral(spec: BasisSpec, coeffs=None, t=0.0) -> np.ndarray:
    """Exact ``int_0^t phi_k(s) ds`` for every basis function."""
    c = _coeffs_for(spec, coeffs)
    pts, scalar = _as_points(t)
    _check_closed(pts)
    tau = _local(spec, pts)
    m = np.arange(spec.M)
    scale = np.sqrt((2 * m + 1) / spec.cells)
    i = np.arange(spec.M)
    inner = _poly(c, np.clip(tau, 0.0, 1.0), 1, 1.0 / (i + 1)) * scale
    # saturated branch: only the constant keeps a nonzero mean
    after = np.where(m == 0, np.sqrt(1.0 / spec.cells), 0.0)
    vals = np.where((tau > 0.0)[..., None] & (tau < 1.0)[..., None], inner, 0.0)
    vals = np.where((tau >= 1.0)[..., None], after, vals)
    return _flatten(vals, scalar)


def right_integral(spec: BasisSpec, coeffs=None, t=0.0) -> np.ndarray:
    """Exact ``int_t^1 phi_k(s) ds`` for every basis function."""
    c = _coeffs_for(spec, coeffs)
    pts, scalar = _as_points(t)
    _check_closed(pts)
    tau = _local(spec, pts)
    m = np.arange(spec.M)
    scale = np.sqrt((2 * m + 1) / spec.cells)
    i = np.arange(spec.M)
    tc = np.clip(tau, 0.0, 1.0)
    full = (c / (i + 1)[:, None]).sum(axis=0)  # int_0^1 L_m = delta_m0
    inner = (full - _poly(c, tc, 1, 1.0 / (i + 1))) * scale
    before = np.where(m == 0, np.sqrt(1.0 / spec.cells), 0.0)
    vals = np.where((tau > 0.0)[..., None] & (tau < 1.0)[..., None], inner, 0.0)
    vals = np.where((tau <= 0.0)[..., None], before, vals)
    return _flatten(vals, scalar)


def left_double_integral(spec: BasisSpec, coeffs=None, t=0.0) -> np.ndarray:
    """Exact ``int_0^t int_0^s phi_k(r) dr ds`` for every basis function."""
    c = _coeffs_for(spec, coeffs)
    pts, scalar = _as_points(t)
    _check_closed(pts)
    tau = _local(spec, pts)
    m = np.arange(spec.M)
    i = np.arange(spec.M)
    h = spec.cells
    inner = _poly(c, np.clip(tau, 0.0, 1.0), 2, 1.0 / ((i + 1) * (i + 2)))
    inner = inner * np.sqrt((2 * m + 1) / h**3)
    # past the cell: m = 0 grows linearly, m > 0 keeps its (negative) cell mass
    n = np.arange(1, h + 1)[None, :]
    const = np.sqrt(1.0 / h) * ((h * pts[:, None] - n + 1) / h - 1.0 / (2 * h))
    tail = -np.sqrt((2 * m + 1) / h) / h * (c / (i + 2)[:, None]).sum(axis=0)
    after = np.where(m == 0, const[..., None], tail)
    vals = np.where((tau > 0.0)[..., None] & (tau < 1.0)[..., None], inner, 0.0)
    vals = np.where((tau >= 1.0)[..., None], after, vals)
    return _flatten(vals, scalar)


def collocation_points(spec: BasisSpec) -> np.ndarray:
    """The ``K`` uniform collocation points ``(2k - 1) / (2**J M)``."""
    k = np.arange(1, spec.K + 1)
    return (2 * k - 1) / (2**spec.J * spec.M)


def expand_2d(Fx, Fmat, Ft) -> float:
    """Evaluate ``Fx^T Fmat Ft`` for one point of a tensor expansion."""
    Fx = np.asarray(Fx, dtype=float)
    Ft = np.asarray(Ft, dtype=float)
    Fmat = np.asarray(Fmat, dtype=float)
    if Fmat.shape != (Fx.shape[-1], Ft.shape[-1]):
        raise ValueError(
            f"dimension mismatch: Fx {Fx.shape}, Fmat {Fmat.shape}, Ft {Ft.shape}"
        )
    return float(Fx @ Fmat @ Ft)


@dataclass(frozen=True)
class AxisBasis:
    """Basis matrices of one axis sampled at a fixed set of points.

    Rows are points, columns are basis functions.  ``dphi`` is only
    filled when every point is strictly inside a cell.
    """

    spec: BasisSpec
    points: np.ndarray
    phi: np.ndarray
    left: np.ndarray
    left2: np.ndarray
    right: np.ndarray
    dphi: np.ndarray | None = field(default=None)

    @classmethod
    def at(cls, spec: BasisSpec, points, *, derivative: bool = True) -> "AxisBasis":
        """Sample at ``points`` in [0, 1].

        The value at 1 is the left limit.  ``dphi`` is left as ``None`` when
        ``derivative`` is false or some point sits on a cell boundary.
        """
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        c = legendre_coeffs(spec.M)
        _check_closed(pts)
        end = pts == 1.0
        phi = np.zeros((pts.size, spec.K))
        if np.any(~end):
            phi[~end] = np.atleast_2d(eval_basis(spec, c, pts[~end]))
        if np.any(end):
            phi[end] = eval_basis(spec, c, 1.0, left_limit=True)
        dphi = None
        if derivative:
            scaled = pts * spec.cells
            if not np.any(np.isclose(scaled, np.round(scaled), rtol=0.0, atol=1e-14)):
                dphi = np.atleast_2d(eval_basis_time_derivative(spec, c, pts))
        return cls(
            spec=spec,
            points=pts,
            phi=phi,
            left=np.atleast_2d(left_integral(spec, c, pts)),
            left2=np.atleast_2d(left_double_integral(spec, c, pts)),
            right=np.atleast_2d(right_integral(spec, c, pts)),
            dphi=dphi,
        )

    @classmethod
    def collocation(cls, spec: BasisSpec) -> "AxisBasis":
        return cls.at(spec, collocation_points(spec))


@lru_cache(maxsize=32)
def endpoint_rows(spec: BasisSpec) -> dict[str, np.ndarray]:
    """Basis rows at the interval ends used by the vertex and terminal closures."""
    c = legendre_coeffs(spec.M)
    return {
        "phi0": eval_basis(spec, c, 0.0),
        "phi1": eval_basis(spec, c, 1.0, left_limit=True),
        "left1": left_integral(spec, c, 1.0),
        "left2_1": left_double_integral(spec, c, 1.0),
    }
