"""Forced linear second-order ODE and its adjoint on [0, T].

Forward system (zero initial state):

    p2 * u'' + p1 * u' + p0 * u = f,     u(0) = u'(0) = 0.

Adjoint system (zero final state, integrated backward):

    p2 * v'' - p1 * v' + p0 * v = h,     v(T) = v'(T) = 0.

Substituting s = T - t turns the adjoint into the forward operator with the
same coefficients acting on the time-reversed right-hand side, so the
adjoint solve is the forward march applied to reversed data and reversed
back.  Both solves use explicit (forward Euler) stepping of the first-order
system; node values are averaged in pairs so results line up with cell
centers, where forcing fields and observation windows live.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, SolverError, StabilityWarning
from .fields import Field, Grid

__all__ = ["OdeParams", "OdeSystem", "ode_forward", "ode_adjoint", "euler_stability_limit"]


@dataclass(frozen=True)
class OdeParams:
    p0: float
    p1: float
    p2: float
    T: float

    def __post_init__(self):
        for name in ("p0", "p1", "p2", "T"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.p2 == 0.0:
            raise ValueError("p2 must be nonzero (second-order system)")
        if self.T <= 0.0:
            raise ValueError("T must be positive")


def _check_grid(params: OdeParams, grid: Grid):
    if grid.ndim != 1:
        raise GridMismatchError(f"expected a 1-D time grid, got {grid.ndim}-D")
    lo, hi = grid.bounds(0)
    tol = 1e-9 * max(1.0, params.T)
    if abs(lo) > tol or abs(hi - params.T) > tol:
        raise GridMismatchError(
            f"grid covers [{lo}, {hi}], expected [0, {params.T}]"
        )


def euler_stability_limit(params: OdeParams) -> float:
    """Largest step size for which explicit Euler is linearly stable.

    Based on the characteristic roots of p2 s^2 + p1 s + p0 = 0; returns 0
    when the continuous system itself is not asymptotically stable (explicit
    Euler then amplifies unconditionally).
    """
    disc = complex(params.p1 * params.p1 - 4.0 * params.p0 * params.p2)
    sq = np.sqrt(disc)
    limit = np.inf
    for root in ((-params.p1 + sq) / (2 * params.p2), (-params.p1 - sq) / (2 * params.p2)):
        a, b = root.real, root.imag
        mag2 = a * a + b * b
        if mag2 == 0.0:
            continue
        if a >= 0.0:
            return 0.0
        limit = min(limit, -2.0 * a / mag2)
    return float(limit)


def _euler_march(params: OdeParams, rhs: np.ndarray, dt: float, label: str) -> np.ndarray:
    """Explicit Euler on (u, u'), forcing taken at cell centers.

    Returns cell-center values, the average of adjacent node values.
    """
    limit = euler_stability_limit(params)
    if dt > limit:
        warnings.warn(
            f"step size {dt:.3e} exceeds the explicit stability limit "
            f"{limit:.3e}; the {label} solve may diverge",
            StabilityWarning,
            stacklevel=3,
        )
    p0, p1, p2 = params.p0, params.p1, params.p2
    out = np.empty(rhs.size)
    src = rhs.tolist()
    u = 0.0
    w = 0.0
    for g, f_g in enumerate(src):
        u_next = u + dt * w
        w_next = w + dt * (f_g - p1 * w - p0 * u) / p2
        if not (math.isfinite(u_next) and math.isfinite(w_next)):
            raise SolverError(f"{label} solve produced non-finite values at step {g}")
        out[g] = 0.5 * (u + u_next)
        u, w = u_next, w_next
    return out


def ode_forward(params: OdeParams, forcing: Field, grid: Grid) -> Field:
    """Solve the forced system from rest; values reported at cell centers."""
    _check_grid(params, grid)
    if forcing.grid != grid:
        raise GridMismatchError("forcing lives on a different grid")
    dt = grid.spacing[0]
    return Field(grid, _euler_march(params, forcing.values_flat, dt, "forward"))


def ode_adjoint(params: OdeParams, functional: Field, grid: Grid) -> Field:
    """Solve the adjoint system backward from rest at t = T.

    Implemented as the forward march on the time-reversed right-hand side,
    reversed back; the two solvers share every stepping detail.
    """
    _check_grid(params, grid)
    if functional.grid != grid:
        raise GridMismatchError("functional lives on a different grid")
    dt = grid.spacing[0]
    reversed_rhs = functional.values_flat[::-1]
    out = _euler_march(params, reversed_rhs, dt, "adjoint")
    return Field(grid, out[::-1].copy())


class OdeSystem:
    """Forward/adjoint solver pair bound to fixed parameters and grid."""

    name = "ode"

    def __init__(self, params: OdeParams, grid: Grid):
        _check_grid(params, grid)
        self.params = params
        self._grid = grid

    @property
    def grid(self) -> Grid:
        return self._grid

    def forward(self, forcing: Field) -> Field:
        return ode_forward(self.params, forcing, self._grid)

    def adjoint(self, functional: Field) -> Field:
        return ode_adjoint(self.params, functional, self._grid)
