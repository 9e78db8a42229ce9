"""Full-order Taylor-Hood Navier-Stokes solver (backward Euler / BDF2, Newton).

Produces reference trajectories and velocity snapshot sets for POD.
"""
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (CompatibilityError, ConvergenceError, FormatError,
                     NumericalError, ValidationError)
from .fem import assemble_operators, interpolate

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"VPS1"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sHQIId")

SCHEMES = ("backward-euler", "bdf2")


def check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return scheme


@dataclass
class SnapshotSet:
    fingerprint: int
    dt_snap: float
    data: np.ndarray  # (M, n_u), one snapshot per row

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValidationError("snapshot set needs at least one snapshot vector")
        if not self.dt_snap > 0:
            raise ValidationError("snapshot spacing must be positive")

    @property
    def M(self):
        return self.data.shape[0]

    @property
    def n_u(self):
        return self.data.shape[1]


def write_snapshots(snapshots, path):
    hdr = _SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, snapshots.fingerprint,
                            snapshots.M, snapshots.n_u, snapshots.dt_snap)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(snapshots.data.astype("<f8", copy=False).tobytes())


def read_snapshots(path, fingerprint=None):
    """Read a snapshot file; if ``fingerprint`` is given it must match."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SNAP_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, fp, M, n_u, dt = _SNAP_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = raw[_SNAP_HEADER.size:]
    if len(body) != 8 * M * n_u:
        raise FormatError(f"{path}: expected {M}x{n_u} values, file holds {len(body)} bytes")
    if fingerprint is not None and fp != fingerprint:
        raise CompatibilityError(f"{path}: fingerprint {fp:#018x} does not match space {fingerprint:#018x}")
    data = np.frombuffer(body, dtype="<f8").reshape(M, n_u).astype(np.float64)
    return SnapshotSet(fp, dt, data)


@dataclass
class NewtonResult:
    u: np.ndarray
    p: np.ndarray
    iterations: int
    residuals: list


def nonlinear_step_solve(ops, nu, dt, history, *, gamma=1.0, load=None, boundary_values=None,
                         guess=None, p_guess=None, convection=True, rtol=1e-10, atol=1e-12,
                         max_iter=25, step=None):
    """One implicit time level by Newton's method on the saddle-point system.

    Solves for ``u`` (Dirichlet dofs fixed to ``boundary_values``) and ``p``::

        M (gamma u - history) / dt + nu A u + N(u) u - B^T p = F
        B u = 0,  int p = 0

    ``gamma=1, history=u^n`` is backward Euler; ``gamma=3/2,
    history=2u^n - u^{n-1}/2`` is BDF2.  The Jacobian is exact for the skew
    convection form.
    """
    if not dt > 0:
        raise ValidationError(f"time step must be positive, got {dt}")
    space = ops.space
    free = space.free_dofs
    bnd = space.boundary_dofs
    n_f, n_p = len(free), space.n_pressure
    M, A, B = ops.mass, ops.stiffness, ops.divergence
    m = ops.pressure_weights
    F = np.zeros(space.n_velocity) if load is None else load

    u = np.array(history if guess is None else guess, dtype=float)
    if boundary_values is not None:
        u[bnd] = boundary_values[bnd]
    else:
        u[bnd] = 0.0
    p = np.zeros(n_p) if p_guess is None else np.array(p_guess, dtype=float)
    mu = 0.0
    base = (gamma / dt) * M + nu * A
    hist_term = M @ history / dt
    Bf = B[:, free]

    def residual(u, p, mu):
        ru = gamma * (M @ u) / dt - hist_term + nu * (A @ u) - B.T @ p - F
        if convection:
            ru += ops.convection(u) @ u
        return np.concatenate([ru[free], -(B @ u) + m * mu, [m @ p]])

    scale = np.linalg.norm(hist_term[free]) + np.linalg.norm(F[free]) + np.linalg.norm((base @ u)[free])
    r = residual(u, p, mu)
    r0 = np.linalg.norm(r)
    tol = max(rtol * r0, atol, 100 * np.finfo(float).eps * scale)
    residuals = [r0]
    it = 0
    while residuals[-1] > tol:
        if it >= max_iter:
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations at step {step}",
                                   step=step, residuals=residuals)
        J = base
        if convection:
            J = J + ops.convection(u) + ops.convection_derivative(u)
        K = sp.bmat([
            [J[free][:, free], -Bf.T, None],
            [-Bf, None, sp.csr_matrix(m[:, None])],
            [None, sp.csr_matrix(m[None, :]), None],
        ], format="csc")
        try:
            delta = spla.splu(K).solve(-r)
        except RuntimeError as exc:
            raise NumericalError(f"singular Jacobian at step {step}: {exc}") from exc
        u[free] += delta[:n_f]
        p += delta[n_f:n_f + n_p]
        mu += delta[-1]
        it += 1
        r = residual(u, p, mu)
        residuals.append(np.linalg.norm(r))
        if not np.isfinite(residuals[-1]):
            raise NumericalError(f"non-finite residual at step {step}")
    return NewtonResult(u, p, it, residuals)


@dataclass
class DNSResult:
    times: np.ndarray
    velocity: np.ndarray  # (n_steps + 1, n_u), row 0 is the initial condition
    pressure: np.ndarray  # (n_steps + 1, n_p); row 0 is zero
    snapshots: SnapshotSet
    iterations: list = field(default_factory=list)
    dt: float = 0.0

    def kinetic_energy(self, mass):
        return 0.5 * np.einsum("ni,ni->n", self.velocity, (mass @ self.velocity.T).T)


def solve_nse(problem, space, scheme="bdf2", *, ops=None, stride=1, warmup=0, convection=True,
              max_iter=25, u_init=None):
    """Integrate the problem from ``t=0`` to ``T``.

    BDF2 starts with one backward-Euler step.  Snapshots are the velocity at
    ``t_k = k dt`` for ``k > warmup``, every ``stride`` steps.  ``u_init``
    (a dof vector) overrides the projected initial condition.
    """
    check_scheme(scheme)
    if stride < 1 or warmup < 0:
        raise ValidationError("stride must be >= 1 and warmup >= 0")
    ops = ops or assemble_operators(space)
    dt, n = problem.dt, problem.n_steps
    if warmup >= n:
        raise ValidationError(f"warm-up of {warmup} steps leaves no snapshots (n_steps={n})")
    times = dt * np.arange(n + 1)
    U = np.empty((n + 1, space.n_velocity))
    P = np.zeros((n + 1, space.n_pressure))
    g0 = interpolate(problem.dirichlet, space, t=0.0) if problem.dirichlet is not None else None
    if u_init is not None:
        U[0] = np.asarray(u_init, dtype=float)
        if U[0].shape != (space.n_velocity,):
            raise ValidationError(f"initial vector has {U[0].size} entries, space has {space.n_velocity}")
    elif problem.exact_grad is not None:
        U[0] = ritz_projection(ops, lambda x, y: problem.exact_grad(0.0, x, y), g0)
    else:
        U[0] = project_divergence_free(ops, interpolate(problem.u0, space), g0)
    iters = []
    for k in range(n):
        t1 = times[k + 1]
        if scheme == "backward-euler" or k == 0:
            gamma, hist = 1.0, U[k]
            guess = U[k]
        else:
            gamma, hist = 1.5, 2.0 * U[k] - 0.5 * U[k - 1]
            guess = 2.0 * U[k] - U[k - 1]
        load = ops.load(problem.forcing, t1) if problem.forcing is not None else None
        g = interpolate(problem.dirichlet, space, t=t1) if problem.dirichlet is not None else None
        res = nonlinear_step_solve(ops, problem.nu, dt, hist, gamma=gamma, load=load,
                                   boundary_values=g, guess=guess, p_guess=P[k],
                                   convection=convection, max_iter=max_iter, step=k + 1)
        U[k + 1], P[k + 1] = res.u, res.p
        iters.append(res.iterations)
    snaps = SnapshotSet(space.fingerprint, stride * dt, U[1 + warmup::stride])
    log.info("DNS %s: %d steps, mean Newton iterations %.2f", problem.name, n, np.mean(iters))
    return DNSResult(times, U, P, snaps, iters, dt)


def steady_state(problem, space, *, ops=None, t=0.0, dt=0.5, tol=1e-9, max_steps=400, dt_min=1e-4):
    """Steady solution for the forcing frozen at time ``t``, reached by
    backward-Euler pseudo-time marching from the projected initial field.
    The pseudo step is halved when Newton fails and grown after successes."""
    ops = ops or assemble_operators(space)
    load = ops.load(problem.forcing, t) if problem.forcing is not None else None
    g = interpolate(problem.dirichlet, space, t=t) if problem.dirichlet is not None else None
    u = project_divergence_free(ops, interpolate(problem.u0, space), g)
    p = np.zeros(space.n_pressure)
    h, change = dt, np.inf
    for k in range(max_steps):
        try:
            res = nonlinear_step_solve(ops, problem.nu, h, u, load=load, boundary_values=g, guess=u,
                                       p_guess=p, step=k + 1)
        except ConvergenceError:
            h *= 0.5
            if h < dt_min:
                raise
            continue
        du = res.u - u
        change = np.sqrt(du @ (ops.mass @ du)) / max(np.sqrt(res.u @ (ops.mass @ res.u)), 1e-300)
        u, p = res.u, res.p
        if change < tol:
            return u
        h = min(dt, 1.5 * h)
    raise ConvergenceError(f"pseudo-time marching stalled after {max_steps} steps (change {change:.2e})")


def project_divergence_free(ops, u, boundary_values=None):
    """L2 projection of ``u`` onto discretely divergence-free fields with the
    given Dirichlet values (zero if None)."""
    space = ops.space
    free, bnd = space.free_dofs, space.boundary_dofs
    out = np.array(u, dtype=float)
    out[bnd] = 0.0 if boundary_values is None else boundary_values[bnd]
    m = ops.pressure_weights
    Bf = ops.divergence[:, free]
    M = ops.mass
    ub = np.zeros_like(out)
    ub[bnd] = out[bnd]
    rhs = np.concatenate([(M @ (u - ub))[free], ops.divergence @ ub, [0.0]])
    K = sp.bmat([
        [M[free][:, free], -Bf.T, None],
        [-Bf, None, sp.csr_matrix(m[:, None])],
        [None, sp.csr_matrix(m[None, :]), None],
    ], format="csc")
    out[free] = spla.splu(K).solve(rhs)[:len(free)]
    return out


def ritz_projection(ops, grad, boundary_values=None):
    """Stokes-Ritz projection of a field given by its gradient ``grad(x, y)``:
    ``(grad u_h, grad v) - (p_h, div v) = (grad u, grad v)``, ``B u_h = 0``."""
    space = ops.space
    g = space.geometry()
    x, y = g.xq[..., 0], g.xq[..., 1]
    G = grad(x, y)
    rhs_full = np.zeros(space.n_velocity)
    for c in range(2):
        loc = sum(np.einsum("eq,eq,eqa->ea", g.wdet, np.broadcast_to(G[c][k], x.shape), g.grads[..., k])
                  for k in range(2))
        np.add.at(rhs_full, c * space.n_nodes + space.cell_dofs, loc)
    free, bnd = space.free_dofs, space.boundary_dofs
    u = np.zeros(space.n_velocity)
    if boundary_values is not None:
        u[bnd] = boundary_values[bnd]
    A = ops.stiffness
    m = ops.pressure_weights
    Bf = ops.divergence[:, free]
    rhs = np.concatenate([(rhs_full - A @ u)[free], ops.divergence @ u, [0.0]])
    K = sp.bmat([
        [A[free][:, free], -Bf.T, None],
        [-Bf, None, sp.csr_matrix(m[:, None])],
        [None, sp.csr_matrix(m[None, :]), None],
    ], format="csc")
    u[free] = spla.splu(K).solve(rhs)[:len(free)]
    return u


def solve_stokes(space, forcing, nu=1.0, ops=None, boundary=None):
    """Steady Stokes solve ``nu A u - B^T p = F``, ``B u = 0``, ``int p = 0``."""
    ops = ops or assemble_operators(space)
    F = ops.load(forcing)
    free = space.free_dofs
    u = np.zeros(space.n_velocity)
    if boundary is not None:
        u[space.boundary_dofs] = interpolate(boundary, space)[space.boundary_dofs]
    m = ops.pressure_weights
    Bf = ops.divergence[:, free]
    A = nu * ops.stiffness
    rhs = np.concatenate([(F - A @ u)[free], ops.divergence @ u, [0.0]])
    K = sp.bmat([
        [A[free][:, free], -Bf.T, None],
        [-Bf, None, sp.csr_matrix(m[:, None])],
        [None, sp.csr_matrix(m[None, :]), None],
    ], format="csc")
    sol = spla.splu(K).solve(rhs)
    u[free] = sol[:len(free)]
    p = sol[len(free):-1]
    return u, p
