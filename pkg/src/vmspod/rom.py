"""Galerkin POD reduced system and Step-1 time evolution."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .dns import check_scheme
from .errors import CompatibilityError, ConvergenceError, NumericalError, ValidationError
from .pod import l2_project, pod_stiffness

log = logging.getLogger(__name__)

NEWTON_ATOL = 1e-11
NEWTON_MAXIT = 50
NEWTON_BACKTRACK = 30


@dataclass
class ReducedSystem:
    """Reduced operators in POD coordinates (mass matrix is the identity).

    ``T[j, k, i] = b(psi_j, psi_k, psi_i)``, skew in its last two indices.
    """

    S: np.ndarray
    T: np.ndarray
    nu: float
    forcing: Optional[Callable] = None  # t -> (r,) array
    fingerprint: int = 0

    @property
    def r(self):
        return self.S.shape[0]

    def f(self, t):
        return np.zeros(self.r) if self.forcing is None else self.forcing(t)

    def N(self, a, b):
        """``N(a, b)_i = sum_jk a_j b_k T[j, k, i]``."""
        return np.einsum("j,k,jki->i", a, b, self.T)

    def N_jacobian(self, a):
        """Jacobian of ``a -> N(a, a)``, shape (r, r) indexed [i, m]."""
        return (np.einsum("k,mki->im", a, self.T) + np.einsum("j,jmi->im", a, self.T))


def convection_tensor(basis, ops):
    """``T[j, k, i] = psi_i^T N(psi_j) psi_k`` from the full-order skew form."""
    Psi = basis.modes
    r = Psi.shape[1]
    T = np.empty((r, r, r))
    for j in range(r):
        T[j] = (Psi.T @ (ops.convection(Psi[:, j]) @ Psi)).T  # [k, i]
    return T


def build_reduced_system(basis, ops, problem=None, nu=None, skew_tol=1e-10):
    """Assemble ``S_r``, ``T`` and the reduced forcing ``f_r(t) = Psi^T F(t)``."""
    if basis.fingerprint != ops.fingerprint:
        raise CompatibilityError(
            f"basis fingerprint {basis.fingerprint:#018x} does not match space {ops.fingerprint:#018x}")
    if nu is None:
        if problem is None:
            raise ValidationError("need a problem or an explicit viscosity")
        nu = problem.nu
    S = pod_stiffness(basis, ops.stiffness)
    T = convection_tensor(basis, ops)
    asym = T + T.transpose(0, 2, 1)
    # |b(psi_j, psi_k, psi_i)| <~ max|psi| * ||grad psi||; guards r=1 where T is pure roundoff
    scale = max(np.abs(T).max(), np.abs(basis.modes).max() * np.sqrt(np.abs(np.diag(S)).max()), 1e-300)
    if np.abs(asym).max() > skew_tol * scale:
        raise NumericalError(f"convection tensor not skew: defect {np.abs(asym).max() / scale:.2e}")
    T = 0.5 * (T - T.transpose(0, 2, 1))
    forcing = None
    if problem is not None and problem.forcing is not None:
        Psi = basis.modes
        f = problem.forcing

        def forcing(t):
            return Psi.T @ ops.load(f, t)

    return ReducedSystem(S, T, nu, forcing, basis.fingerprint)


def _damped_newton(resid, jac, a, tol, max_iter):
    """Newton with backtracking on ``||resid||``; returns ``(a, history, converged)``."""
    R = resid(a)
    hist = [np.linalg.norm(R)]
    while hist[-1] > tol and len(hist) <= max_iter:
        step = sla.solve(jac(a), R)
        lam = 1.0
        for _ in range(NEWTON_BACKTRACK):
            trial = a - lam * step
            R_trial = resid(trial)
            if np.linalg.norm(R_trial) <= (1.0 - 1e-4 * lam) * hist[-1]:
                break
            lam *= 0.5
        a, R = trial, R_trial
        hist.append(np.linalg.norm(R))
        if not np.all(np.isfinite(a)):
            raise NumericalError("NaN in reduced state")
    return a, hist, hist[-1] <= tol


def _newton(sys, rhs, gamma, dt, guess, convection=True, atol=NEWTON_ATOL, max_iter=NEWTON_MAXIT):
    """Solve ``gamma a / dt + nu S a + N(a, a) = rhs``.

    Damped Newton first.  If it stalls (possible for states and steps far
    outside the snapshot regime) the convection term is switched on
    gradually, ``s N(a, a)`` with ``s: 0 -> 1``, each stage warm-started from
    the previous one.
    """
    lin = (gamma / dt) * np.eye(sys.r) + sys.nu * sys.S
    a0 = np.array(guess, dtype=float)
    scale = np.linalg.norm(lin @ a0) + np.linalg.norm(rhs)
    tol = max(atol, 64 * np.finfo(float).eps * scale)

    def system(s):
        def resid(a):
            R = lin @ a - rhs
            if convection and s:
                R += s * sys.N(a, a)
            return R

        def jac(a):
            return lin + s * sys.N_jacobian(a) if convection and s else lin

        return resid, jac

    a, hist, ok = _damped_newton(*system(1.0), a0, tol, max_iter)
    if ok or not convection:
        if not ok:
            raise ConvergenceError(f"reduced Newton stalled at residual {hist[-1]:.3e}", residuals=hist)
        return a
    log.info("reduced Newton stalled at %.3e; switching to convection continuation", hist[-1])
    a, s, ds = sla.solve(lin, rhs), 0.0, 0.1
    while s < 1.0:
        s_new = min(1.0, s + ds)
        stage_tol = tol if s_new == 1.0 else max(tol, 1e-8 * scale)
        trial, h, ok = _damped_newton(*system(s_new), a, stage_tol, max_iter)
        if ok:
            a, s = trial, s_new
            ds = min(2 * ds, 1.0 - s) if s < 1.0 else ds
        else:
            ds *= 0.5
            if ds < 1e-6:
                raise ConvergenceError(f"reduced continuation stalled at s={s:.3g}", residuals=hist + h)
    return a


def step1_backward_euler(a_u, dt, sys, t_new, guess=None, convection=True):
    """``(a_w - a_u^n)/dt + nu S a_w + N(a_w, a_w) = f_r(t^{n+1})``."""
    if not dt > 0:
        raise ValidationError(f"time step must be positive, got {dt}")
    rhs = a_u / dt + sys.f(t_new)
    return _newton(sys, rhs, 1.0, dt, a_u if guess is None else guess, convection)


def step1_bdf2(a_u, a_u_prev, dt, sys, t_new, guess=None, convection=True):
    """``(3 a_w - 4 a_u^n + a_u^{n-1})/(2 dt) + nu S a_w + N(a_w, a_w) = f_r(t^{n+1})``."""
    if not dt > 0:
        raise ValidationError(f"time step must be positive, got {dt}")
    rhs = (4.0 * a_u - a_u_prev) / (2.0 * dt) + sys.f(t_new)
    if guess is None:
        guess = 2.0 * a_u - a_u_prev
    return _newton(sys, rhs, 1.5, dt, guess, convection)


def picard_step(sys, rhs, gamma, dt, guess, tol=1e-12, max_iter=500):
    """Fixed-point oracle: freeze the advecting field, solve the linear system, repeat."""
    lin = (gamma / dt) * np.eye(sys.r) + sys.nu * sys.S
    a = np.array(guess, dtype=float)
    for _ in range(max_iter):
        A = lin + np.einsum("j,jki->ik", a, sys.T)
        a_new = sla.solve(A, rhs)
        if np.linalg.norm(a_new - a) <= tol * max(1.0, np.linalg.norm(a_new)):
            return a_new
        a = a_new
    raise ConvergenceError("Picard iteration did not converge")


@dataclass
class ROMTrajectory:
    """Reduced states on a uniform time grid.

    Row 0 holds the initial level (``a_w[0] = a_u[0]``).  Ledger arrays hold
    the Step-2 energy accounting of each step (zeros for level 0 and for
    unstabilized runs).
    """

    times: np.ndarray
    a_u: np.ndarray
    a_w: np.ndarray
    scheme: str
    dt: float
    nu_t: float = 0.0
    R: Optional[int] = None
    diss: np.ndarray = None  # 2 nu_T dt q^T D q per step
    lhs: np.ndarray = None  # ||a_w||^2
    rhs: np.ndarray = None  # ||a_u||^2 + diss
    n_start: int = 1  # number of given initial levels
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        if self.diss is None:
            self.diss = np.zeros(n)
        if self.lhs is None:
            self.lhs = np.einsum("ni,ni->n", self.a_w, self.a_w)
        if self.rhs is None:
            self.rhs = np.einsum("ni,ni->n", self.a_u, self.a_u) + self.diss

    @property
    def r(self):
        return self.a_u.shape[1]

    @property
    def energy_u(self):
        return 0.5 * np.einsum("ni,ni->n", self.a_u, self.a_u)

    @property
    def energy_w(self):
        return 0.5 * np.einsum("ni,ni->n", self.a_w, self.a_w)

    @property
    def rel_gap(self):
        return np.abs(self.lhs - self.rhs) / np.maximum(self.lhs, np.finfo(float).tiny)


def integrate(sys, a0, dt, steps, scheme, *, a1=None, t0=0.0, postprocess=None, convection=True):
    """Generic two-step loop shared by POD-G and VMS-POD.

    ``postprocess(a_w) -> (a_u, diss)`` is applied after every Step-1 solve
    (identity when None).  For BDF2 ``a1`` supplies the second starting level;
    otherwise one backward-Euler step (followed by the post-process)
    synthesizes it.
    """
    check_scheme(scheme)
    if not dt > 0:
        raise ValidationError(f"time step must be positive, got {dt}")
    r = sys.r
    times = t0 + dt * np.arange(steps + 1)
    A_u = np.empty((steps + 1, r))
    A_w = np.empty((steps + 1, r))
    diss = np.zeros(steps + 1)
    A_u[0] = A_w[0] = a0

    def post(aw):
        if postprocess is None:
            return aw.copy(), 0.0
        return postprocess(aw)

    start = 1
    if scheme == "bdf2" and a1 is not None and steps >= 1:
        A_u[1] = A_w[1] = a1
        start = 2
    for n in range(start - 1, steps):
        t_new = times[n + 1]
        try:
            if scheme == "backward-euler" or n == 0:
                aw = step1_backward_euler(A_u[n], dt, sys, t_new, convection=convection)
            else:
                aw = step1_bdf2(A_u[n], A_u[n - 1], dt, sys, t_new, convection=convection)
        except ConvergenceError as exc:
            exc.step = n + 1
            raise
        A_w[n + 1] = aw
        A_u[n + 1], diss[n + 1] = post(aw)
    return ROMTrajectory(times, A_u, A_w, scheme, dt, diss=diss, n_start=start)


def initial_coefficients(basis, mass, u0, u1=None):
    """L2 projections of the starting field(s)."""
    a0 = l2_project(u0, basis, mass)
    a1 = None if u1 is None else l2_project(u1, basis, mass)
    return a0, a1


def run_pod_g(a0, sys, dt, steps, scheme="bdf2", *, a1=None, t0=0.0, convection=True):
    """Unstabilized Galerkin POD: ``a_u^{n+1} = a_w^{n+1}``."""
    traj = integrate(sys, a0, dt, steps, scheme, a1=a1, t0=t0, convection=convection)
    traj.meta["method"] = "pod-g"
    return traj
