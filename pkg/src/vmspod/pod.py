"""POD basis by the method of snapshots, with L2 (mass-matrix) inner product."""
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import CompatibilityError, FormatError, RankError, ValidationError

RANK_RTOL = 1e-12

BASIS_MAGIC = b"VPB1"
BASIS_VERSION = 1
_BASIS_HEADER = struct.Struct("<4sHQIII")


@dataclass
class PODBasis:
    """Mass-orthonormal POD modes.

    Attributes
    ----------
    modes : (n_u, r) array
        Columns are the dof vectors of psi_1..psi_r.
    eigenvalues : (d,) array
        Correlation eigenvalues, descending, for all d retained modes
        (d = numerical rank), so that tail sums beyond r are available.
    h1_norms : (d,) array
        ``||psi_j||_1`` for all retained modes.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    h1_norms: np.ndarray
    fingerprint: int

    @property
    def r(self):
        return self.modes.shape[1]

    @property
    def n_u(self):
        return self.modes.shape[0]

    @property
    def d(self):
        return len(self.eigenvalues)

    def truncate(self, r):
        if not 0 < r <= self.r:
            raise ValidationError(f"cannot truncate a {self.r}-mode basis to {r} modes")
        return PODBasis(self.modes[:, :r].copy(), self.eigenvalues, self.h1_norms, self.fingerprint)

    def reconstruct(self, coeffs):
        """Dof vectors ``Psi a`` for coefficient array(s) ``(..., r)``."""
        return np.asarray(coeffs) @ self.modes.T


def _check_fp(snapshots, fingerprint):
    if fingerprint is not None and snapshots.fingerprint != fingerprint:
        raise CompatibilityError(
            f"snapshot fingerprint {snapshots.fingerprint:#018x} does not match {fingerprint:#018x}")


def build_correlation(snapshots, mass, fingerprint=None):
    """``K_kl = (u_k, u_l) / M`` for the M snapshots."""
    _check_fp(snapshots, fingerprint)
    U = snapshots.data
    K = U @ (mass @ U.T) / snapshots.M
    return 0.5 * (K + K.T)


def _eig_desc(K):
    lam, V = sla.eigh(K)
    return lam[::-1], V[:, ::-1]


def numerical_rank(eigenvalues, rtol=RANK_RTOL):
    lam = np.asarray(eigenvalues)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.count_nonzero(lam >= rtol * lam[0]))


def _mass_orthonormalize(Psi, mass):
    # Cholesky-QR pass in the mass inner product; keeps nested spans
    G = Psi.T @ (mass @ Psi)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return sla.solve_triangular(L, Psi.T, lower=True).T


def _fix_signs(Psi):
    idx = np.argmax(np.abs(Psi), axis=0)
    sgn = np.sign(Psi[idx, np.arange(Psi.shape[1])])
    sgn[sgn == 0] = 1.0
    return Psi * sgn


def compute_pod_basis(K, snapshots, mass, r, stiffness=None, rtol=RANK_RTOL):
    """POD modes ``psi_l = sum_i (v_l)_i u_i / sqrt(M lambda_l)``.

    ``(lambda_l, v_l)`` are the descending eigenpairs of the correlation
    matrix ``K``.  Raises :class:`RankError` if ``r`` exceeds the numerical
    rank (eigenvalues below ``rtol * lambda_1`` count as zero).  H1 norms use
    ``psi^T (M + A) psi`` and need ``stiffness``; without it they are NaN.
    """
    if r < 1:
        raise ValidationError(f"need r >= 1, got {r}")
    lam, V = _eig_desc(K)
    lam = np.where(lam < 0, 0.0, lam)
    rank = numerical_rank(lam, rtol)
    if r > rank:
        raise RankError(f"requested r={r} modes but the snapshot set has numerical rank {rank}", rank)
    M = snapshots.M
    Psi = snapshots.data.T @ (V[:, :rank] / np.sqrt(M * lam[:rank]))
    Psi = _mass_orthonormalize(Psi, mass)
    Psi = _fix_signs(Psi)
    if stiffness is not None:
        h1 = np.sqrt(np.einsum("ij,ij->j", Psi, (mass + stiffness) @ Psi))
    else:
        h1 = np.full(rank, np.nan)
    return PODBasis(np.ascontiguousarray(Psi[:, :r]), lam[:rank].copy(), h1, snapshots.fingerprint)


def pod(snapshots, mass, r, stiffness=None):
    """Correlation matrix and basis in one call."""
    return compute_pod_basis(build_correlation(snapshots, mass), snapshots, mass, r, stiffness)


def l2_project(field, basis, mass):
    """Coefficients ``a = Psi^T M u`` of the L2 projection onto the POD space.

    Works on a single dof vector or a stack ``(k, n_u)``.
    """
    return np.asarray(field) @ (mass @ basis.modes)


def projection_error(snapshots, basis, mass, r=None):
    """Mean-square projection error of the snapshots onto the first ``r`` modes.

    Returns ``(brute_force, eigen_tail)``: the directly evaluated
    ``(1/M) sum_k ||u_k - P_r u_k||^2`` and ``sum_{i>r} lambda_i``.
    """
    r = basis.r if r is None else r
    if not 0 <= r <= basis.r:
        raise ValidationError(f"r={r} outside 0..{basis.r}")
    U = snapshots.data
    Psi = basis.modes[:, :r]
    E = U - (U @ (mass @ Psi)) @ Psi.T
    brute = float(np.einsum("ki,ki->", E, (mass @ E.T).T) / snapshots.M)
    tail = float(np.sum(basis.eigenvalues[r:]))
    return brute, tail


def projection_error_h1(snapshots, basis, mass, stiffness, full_basis_modes):
    """H1 analog of :func:`projection_error` (both sides), for all cut-offs of
    ``full_basis_modes`` (n_u x d); diagnostic only."""
    U = snapshots.data
    H = mass + stiffness
    out = []
    for r in range(full_basis_modes.shape[1] + 1):
        Psi = full_basis_modes[:, :r]
        E = U - (U @ (mass @ Psi)) @ Psi.T
        lhs = float(np.einsum("ki,ki->", E, (H @ E.T).T) / snapshots.M)
        rhs = float(np.sum(basis.h1_norms[r:] ** 2 * basis.eigenvalues[r:]))
        out.append((r, lhs, rhs))
    return out


def pod_stiffness(basis, stiffness):
    """Reduced stiffness ``S_ij = (grad psi_j, grad psi_i)``."""
    S = basis.modes.T @ (stiffness @ basis.modes)
    return 0.5 * (S + S.T)


def epsilon_tail(basis, cutoff):
    """``sqrt(sum_{j > cutoff} ||psi_j||_1^2 lambda_j)`` over the retained modes."""
    if not 0 <= cutoff <= basis.d:
        raise ValidationError(f"cutoff {cutoff} outside 0..{basis.d} retained modes")
    tail = basis.h1_norms[cutoff:] ** 2 * basis.eigenvalues[cutoff:]
    return float(np.sqrt(np.sum(tail)))


def write_basis(basis, path):
    hdr = _BASIS_HEADER.pack(BASIS_MAGIC, BASIS_VERSION, basis.fingerprint, basis.r, basis.d, basis.n_u)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(np.asarray(basis.eigenvalues, "<f8").tobytes())
        fh.write(np.asarray(basis.h1_norms, "<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.modes.T, "<f8").tobytes())  # mode-major


def read_basis(path, fingerprint=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _BASIS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, fp, r, d, n_u = _BASIS_HEADER.unpack_from(raw)
    if magic != BASIS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != BASIS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = raw[_BASIS_HEADER.size:]
    if len(body) != 8 * (2 * d + r * n_u):
        raise FormatError(f"{path}: body size {len(body)} does not match r={r}, d={d}, n_u={n_u}")
    if fingerprint is not None and fp != fingerprint:
        raise CompatibilityError(f"{path}: fingerprint {fp:#018x} does not match space {fingerprint:#018x}")
    arr = np.frombuffer(body, "<f8").astype(np.float64)
    lam, h1 = arr[:d].copy(), arr[d:2 * d].copy()
    modes = np.ascontiguousarray(arr[2 * d:].reshape(r, n_u).T)
    return PODBasis(modes, lam, h1, fp)
