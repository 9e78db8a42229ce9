"""Analytic test problems for the full-order solver.

Fields are vectorized callables.  Velocity-like functions return a pair
``(fx, fy)``; time-dependent ones take ``(t, x, y)``.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import sympy as s

from .errors import ValidationError

X, Y, TT = s.symbols("x y t", real=True)


@dataclass
class NSEProblem:
    nu: float
    T: float
    dt: float
    u0: Callable  # (x, y) -> (ux, uy)
    forcing: Optional[Callable] = None  # (t, x, y) -> (fx, fy)
    dirichlet: Optional[Callable] = None  # (t, x, y) -> (gx, gy); None = homogeneous
    exact_u: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    exact_p: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValidationError(f"viscosity must be positive, got {self.nu}")
        if not self.dt > 0:
            raise ValidationError(f"time step must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValidationError(f"end time must be positive, got {self.T}")
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-8 * max(1.0, m) or round(m) < 1:
            raise ValidationError(f"T={self.T} is not an integer multiple of dt={self.dt}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def with_dt(self, dt, T=None):
        return replace(self, dt=dt, T=self.T if T is None else T)


def _vec(exprs, args):
    fns = [s.lambdify(args, e, "numpy") for e in exprs]

    def f(*a):
        return tuple(np.asarray(fn(*a), dtype=float) for fn in fns)

    return f


def _grad(exprs, args):
    fns = [[s.lambdify(args, s.diff(e, v), "numpy") for v in (X, Y)] for e in exprs]

    def g(*a):
        return [[np.asarray(fn(*a), dtype=float) for fn in row] for row in fns]

    return g


def nse_residual_exprs(u, p, nu):
    """Symbolic ``u_t - nu Lap u + (u.grad) u + grad p`` and ``div u``."""
    ux, uy = u
    mom = []
    for c, uc in enumerate(u):
        lap = s.diff(uc, X, 2) + s.diff(uc, Y, 2)
        conv = ux * s.diff(uc, X) + uy * s.diff(uc, Y)
        gp = s.diff(p, X if c == 0 else Y)
        mom.append(s.diff(uc, TT) - nu * lap + conv + gp)
    div = s.diff(ux, X) + s.diff(uy, Y)
    return mom, div


def taylor_green_exprs(nu):
    F = s.exp(-2 * s.pi**2 * nu * TT)
    u = (s.sin(s.pi * X) * s.cos(s.pi * Y) * F, -s.cos(s.pi * X) * s.sin(s.pi * Y) * F)
    p = (s.cos(2 * s.pi * X) + s.cos(2 * s.pi * Y)) / 4 * F**2
    return u, p


def taylor_green(nu=0.05, T=1.0, dt=0.01):
    """Decaying Taylor-Green vortex on the unit square with exact Dirichlet data.

    Exact solution of the unforced equations; boundary values come from the
    exact velocity.
    """
    u, p = taylor_green_exprs(nu)
    args = (TT, X, Y)
    exact = _vec(u, args)
    return NSEProblem(
        nu=nu, T=T, dt=dt,
        u0=lambda x, y: exact(0.0, x, y),
        forcing=None,
        dirichlet=exact,
        exact_u=exact,
        exact_grad=_grad(u, args),
        exact_p=s.lambdify(args, p, "numpy"),
        name="taylor_green",
        params={"nu": nu},
    )


def walled_vortex(nu=0.01, T=0.5, dt=0.01, amplitude=0.5):
    """Taylor-Green-type cell vortex with no-slip walls, decaying without forcing.

    ``u0 = amplitude * curl(sin^2(pi x) sin^2(pi y))`` vanishes on the unit
    square boundary, so snapshots and POD modes satisfy homogeneous data.
    """
    psi = amplitude * s.sin(s.pi * X) ** 2 * s.sin(s.pi * Y) ** 2
    u = (s.diff(psi, Y), -s.diff(psi, X))
    return NSEProblem(
        nu=nu, T=T, dt=dt,
        u0=_vec(u, (X, Y)),
        name="walled_vortex",
        params=dict(nu=nu, amplitude=amplitude),
    )


def lid_cavity(nu=2e-3, T=4.0, dt=0.01, amplitude=1.0, depth=0.1, omega=2.0 * np.pi, modulation=0.5):
    """Shear-forced cavity with no-slip walls.

    The moving lid is replaced by a horizontal body force concentrated in a
    layer of thickness ``depth`` under the top wall, modulated in time, so that
    all walls stay homogeneous.  The flow spins up from rest.
    """
    if depth <= 0:
        raise ValidationError("forcing layer depth must be positive")

    def forcing(t, x, y):
        prof = amplitude * np.exp(-(((1.0 - y) / depth) ** 2)) * (16.0 * x**2 * (1.0 - x) ** 2)
        mod = 1.0 + modulation * np.sin(omega * t)
        return prof * mod, 0.0 * prof

    return NSEProblem(
        nu=nu, T=T, dt=dt,
        u0=lambda x, y: (0.0 * x, 0.0 * y),
        forcing=forcing,
        name="lid_cavity",
        params=dict(nu=nu, amplitude=amplitude, depth=depth, omega=omega, modulation=modulation),
    )


def custom(nu, T, dt, u0, forcing=("0", "0"), dirichlet=None):
    """Problem from expression strings in ``x``, ``y`` (and ``t`` for forcing/boundary data)."""
    loc = {"x": X, "y": Y, "t": TT, "pi": s.pi}
    try:
        u0e = [s.sympify(e, locals=loc) for e in u0]
        fe = [s.sympify(e, locals=loc) for e in forcing]
        ge = None if dirichlet is None else [s.sympify(e, locals=loc) for e in dirichlet]
    except (s.SympifyError, TypeError) as exc:
        raise ValidationError(f"cannot parse custom problem expression: {exc}") from exc
    return NSEProblem(
        nu=nu, T=T, dt=dt,
        u0=_vec(u0e, (X, Y)),
        forcing=_vec(fe, (TT, X, Y)),
        dirichlet=None if ge is None else _vec(ge, (TT, X, Y)),
        name="custom",
        params=dict(u0=list(u0), forcing=list(forcing), dirichlet=dirichlet),
    )


@dataclass
class StokesSolution:
    u: Callable
    grad: Callable
    p: Callable
    f: Callable


def stokes_manufactured():
    """Smooth steady Stokes solution (nu = 1) vanishing on the unit-square boundary."""
    psi = s.sin(s.pi * X) ** 2 * s.sin(s.pi * Y) ** 2
    u = (s.diff(psi, Y), -s.diff(psi, X))
    p = s.cos(s.pi * X) * s.cos(s.pi * Y)
    f = [-(s.diff(uc, X, 2) + s.diff(uc, Y, 2)) + s.diff(p, v) for uc, v in zip(u, (X, Y))]
    args = (X, Y)
    return StokesSolution(_vec(u, args), _grad(u, args), s.lambdify(args, p, "numpy"), _vec(f, args))
