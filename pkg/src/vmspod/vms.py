"""Step-2 variational multiscale post-processing in reduced coordinates.

The fluctuation operator ``(I - P_R)`` acts on gradients of POD modes, where
``P_R`` is the L2 projection onto ``span{grad psi_1, ..., grad psi_R}``.  In
mode coordinates its Gram matrix is the Schur complement of the leading
``R x R`` block of the reduced stiffness.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError, ValidationError
from .fem import eval_velocity_gradient
from .rom import integrate

log = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-12
IDENTITY_RTOL = 1e-9


class StabilityWarning(UserWarning):
    """Eddy viscosity outside the sufficient BDF2 stability range."""


@dataclass
class FluctuationMatrix:
    D: np.ndarray
    R: int
    provenance: str = "schur"

    @property
    def r(self):
        return self.D.shape[0]

    @property
    def is_zero(self):
        return not np.any(self.D)


def _check_R(R, r):
    if not (isinstance(R, (int, np.integer)) and 0 <= R <= r):
        raise ValidationError(f"need 0 <= R <= r={r}, got R={R}")


def build_fluctuation_matrix(S, R, rtol=SINGULAR_RTOL):
    """``D = [[0, 0], [0, S2 - C^T S_R^{-1} C]]`` for ``S = [[S_R, C], [C^T, S2]]``."""
    S = np.asarray(S, dtype=float)
    r = S.shape[0]
    _check_R(R, r)
    D = np.zeros_like(S)
    if R == 0:
        D[:] = 0.5 * (S + S.T)
        return FluctuationMatrix(D, 0)
    if R == r:
        return FluctuationMatrix(D, R)
    SR, C, S2 = S[:R, :R], S[:R, R:], S[R:, R:]
    norm = np.linalg.norm(SR, 2)
    lam_min = sla.eigvalsh(SR)[0] if R > 0 else norm
    if norm == 0 or lam_min <= rtol * norm:
        raise NumericalError(
            f"leading {R}x{R} stiffness block is singular (lambda_min/||S_R|| = {lam_min / max(norm, 1e-300):.1e}); "
            "gradients of the leading modes are linearly dependent, use a smaller R")
    cho = sla.cho_factor(SR)
    schur = S2 - C.T @ sla.cho_solve(cho, C)
    D[R:, R:] = 0.5 * (schur + schur.T)
    return FluctuationMatrix(D, R)


def bruteforce_fluctuation_matrix(space, modes, R, rule=None):
    """Oracle: project each gradient field onto the leading-mode gradients at
    quadrature points, then integrate products of the residual fields."""
    r = modes.shape[1]
    _check_R(R, r)
    geo = space.geometry(rule)
    w = geo.wdet.ravel()
    G = np.stack([eval_velocity_gradient(space, modes[:, j], rule).reshape(-1, 4) for j in range(r)])  # (r, P, 4)

    def ip(F, H):
        return np.einsum("apc,bpc,p->ab", F, H, w)

    if R == 0:
        F = G
    else:
        L = G[:R]
        gram = ip(L, L)
        coef = np.linalg.solve(gram, ip(L, G))  # (R, r)
        F = G - np.einsum("kj,kpc->jpc", coef, L)
    D = ip(F, F)
    return FluctuationMatrix(0.5 * (D + D.T), R, "bruteforce")


def step2_filter(a_w, dt, nu_t, D):
    """Solve ``(I + c D) a_u = (I - c D) a_w`` with ``c = nu_t dt / 2``."""
    if nu_t < 0:
        raise ValidationError(f"eddy viscosity must be non-negative, got {nu_t}")
    if not dt > 0:
        raise ValidationError(f"time step must be positive, got {dt}")
    Dm = D.D if isinstance(D, FluctuationMatrix) else np.asarray(D)
    a_w = np.asarray(a_w, dtype=float)
    c = 0.5 * nu_t * dt
    if c == 0 or not np.any(Dm):
        return a_w.copy()
    r = len(a_w)
    lhs = np.eye(r) + c * Dm
    return sla.cho_solve(sla.cho_factor(lhs), a_w - c * (Dm @ a_w))


@dataclass
class LedgerEntry:
    norm_w2: float
    norm_u2: float
    dissipation: float

    @property
    def rel_gap(self):
        return abs(self.norm_w2 - self.norm_u2 - self.dissipation) / max(self.norm_w2, np.finfo(float).tiny)


def dissipation_ledger(a_w, a_u, dt, nu_t, D, rtol=IDENTITY_RTOL, check=True):
    """Energy bookkeeping of one filter call."""
    Dm = D.D if isinstance(D, FluctuationMatrix) else np.asarray(D)
    q = 0.5 * (a_w + a_u)
    entry = LedgerEntry(float(a_w @ a_w), float(a_u @ a_u), float(2.0 * nu_t * dt * (q @ (Dm @ q))))
    if check and entry.norm_w2 > 0 and entry.rel_gap > rtol:
        raise NumericalError(f"Step-2 dissipation identity violated: relative gap {entry.rel_gap:.2e}")
    return entry


def check_bdf2_stability(nu, nu_t, scheme):
    if scheme == "bdf2" and nu_t >= 4.0 * nu:
        msg = (f"nu_T={nu_t:g} >= 4 nu={4 * nu:g}: the BDF2 energy estimate requires nu_T < 4 nu; "
               "the run continues but stability is not guaranteed")
        warnings.warn(msg, StabilityWarning, stacklevel=3)
        log.warning(msg)
        return False
    return True


def run_vms_pod(a0, sys, dt, steps, scheme="bdf2", R=None, nu_t=0.0, *, D=None, a1=None, t0=0.0,
                convection=True):
    """Alternate Step 1 (Galerkin POD) and Step 2 (filter) for ``steps`` steps."""
    if nu_t < 0:
        raise ValidationError(f"eddy viscosity must be non-negative, got {nu_t}")
    if D is None:
        if R is None:
            raise ValidationError("need R or a precomputed fluctuation matrix")
        D = build_fluctuation_matrix(sys.S, R)
    R = D.R
    check_bdf2_stability(sys.nu, nu_t, scheme)

    def post(aw):
        au = step2_filter(aw, dt, nu_t, D)
        entry = dissipation_ledger(aw, au, dt, nu_t, D)
        return au, entry.dissipation

    traj = integrate(sys, a0, dt, steps, scheme, a1=a1, t0=t0, postprocess=post, convection=convection)
    traj.nu_t, traj.R = nu_t, R
    traj.meta["method"] = "vms-pod"
    return traj
