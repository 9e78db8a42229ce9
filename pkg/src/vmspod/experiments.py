"""Reference experiments shared by the acceptance suite and ``scripts/``.

Each builder runs a full-order reference, builds the POD basis and returns a
:class:`~vmspod.diagnostics.ROMSetup` (plus whatever the experiment reports).
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import diagnostics, dns, pod, problems, rom, vms
from .fem import TaylorHoodSpace, assemble_operators, build_rect_mesh

log = logging.getLogger(__name__)


def _space(n):
    space = TaylorHoodSpace(build_rect_mesh(n, n))
    return space, assemble_operators(space)


@dataclass
class VortexCase:
    setup: diagnostics.ROMSetup
    space: object
    ops: object
    problem: object
    all_eigenvalues: np.ndarray

    def relative_tail(self, r=None):
        """``sum_{i>r} lambda_i / sum lambda`` over all correlation eigenvalues."""
        r = self.setup.basis.r if r is None else r
        lam = np.clip(self.all_eigenvalues, 0.0, None)
        return float(lam[r:].sum() / lam.sum())


def walled_vortex_case(n=10, nu=0.01, amplitude=0.5, window=0.5, warmup=0.1, ref_steps=640, r=None):
    """Decaying walled vortex; snapshots every reference step over ``[warmup, warmup + window]``.

    ``ref_steps`` BDF2 steps cover the window (the reference step is
    ``window / ref_steps``).  With ``r=None`` the basis keeps every mode up to
    the numerical rank of the correlation matrix.
    """
    space, ops = _space(n)
    dt = window / ref_steps
    nw = int(round(warmup / dt))
    prob = problems.walled_vortex(nu=nu, T=dt * (ref_steps + nw), dt=dt, amplitude=amplitude)
    ref = dns.solve_nse(prob, space, "bdf2", ops=ops)
    V, times = ref.velocity[nw:], ref.times[nw:]
    snaps = dns.SnapshotSet(space.fingerprint, dt, V)
    K = pod.build_correlation(snaps, ops.mass)
    lam_all = np.linalg.eigvalsh(K)[::-1]
    if r is None:
        r = pod.numerical_rank(np.clip(lam_all, 0, None))
    basis = pod.compute_pod_basis(K, snaps, ops.mass, r, ops.stiffness)
    sysr = rom.build_reduced_system(basis, ops, prob)
    setup = diagnostics.ROMSetup(sysr, basis, ops.mass, ops.stiffness, times, V)
    return VortexCase(setup, space, ops, prob, lam_all)


def period_means(energy, period_steps):
    """Means over consecutive whole periods, skipping the initial level."""
    E = np.asarray(energy, float)[1:]
    k = len(E) // period_steps
    return E[:k * period_steps].reshape(k, period_steps).mean(axis=1)


@dataclass
class EnergyStudy:
    times: np.ndarray
    reference: np.ndarray
    galerkin: np.ndarray
    vms: dict  # nu_t -> energy array
    period_steps: int
    r: int
    R: int
    system: object = None

    def galerkin_growth(self):
        pm = period_means(self.galerkin, self.period_steps)
        return float(pm[-1] / pm[0] - 1.0), bool(np.all(np.diff(pm) > 0)), pm

    def max_deviation(self, energy):
        return float(np.max(np.abs(energy / self.reference - 1.0)))

    def best_vms(self):
        nu_t = min(self.vms, key=lambda k: self.max_deviation(self.vms[k]))
        return nu_t, self.max_deviation(self.vms[nu_t])


def cavity_energy_study(n=12, nu=2.5e-3, amplitude=10.0, modulation=1.0, omega=2 * np.pi, dt=0.02,
                        warmup=1.0, window=3.0, r=2, R=0, nu_ts=(5e-5, 1e-4, 2e-4, 4e-4)):
    """Shear-driven cavity started from the steady state of the mean forcing.

    Snapshots span ``window`` after ``warmup``; POD-G and VMS-POD runs start
    from the projected reference at the start of the window.
    """
    space, ops = _space(n)
    prob = problems.lid_cavity(nu=nu, T=warmup + window, dt=dt, amplitude=amplitude, modulation=modulation,
                               omega=omega)
    u_init = dns.steady_state(prob, space, ops=ops, tol=1e-6, max_steps=150)
    ref = dns.solve_nse(prob, space, "bdf2", ops=ops, u_init=u_init)
    nw = int(round(warmup / dt))
    V, times = ref.velocity[nw:], ref.times[nw:]
    snaps = dns.SnapshotSet(space.fingerprint, dt, V)
    basis = pod.pod(snaps, ops.mass, r, ops.stiffness)
    sysr = rom.build_reduced_system(basis, ops, prob)
    a0 = pod.l2_project(V[0], basis, ops.mass)
    a1 = pod.l2_project(V[1], basis, ops.mass)
    steps = len(V) - 1
    Eref = 0.5 * np.einsum("ni,ni->n", V, (ops.mass @ V.T).T)
    gal = rom.run_pod_g(a0, sysr, dt, steps, "bdf2", a1=a1, t0=times[0])
    out = {}
    D = vms.build_fluctuation_matrix(sysr.S, R)
    for nu_t in nu_ts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", vms.StabilityWarning)
            tr = vms.run_vms_pod(a0, sysr, dt, steps, "bdf2", D=D, nu_t=nu_t, a1=a1, t0=times[0])
        out[nu_t] = tr.energy_u
    period = int(round(2 * np.pi / omega / dt))
    return EnergyStudy(times, Eref, gal.energy_u, out, period, r, R, sysr)
