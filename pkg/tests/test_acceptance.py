"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary block at the end
of the session lists every criterion.  Expensive references are built once
per session and shared.
"""
import warnings

import numpy as np
import pytest

from conftest import random_divfree_modes
from vmspod import diagnostics as dg
from vmspod import dns, experiments, pod, problems, rom, vms
from vmspod.fem import (TaylorHoodSpace, assemble_operators, build_rect_mesh, h1_seminorm_error,
                        l2_error)
from vmspod.pod import PODBasis

SYSTEMS = []  # every ReducedSystem built here, for the skew check


def _keep(sysr):
    SYSTEMS.append(sysr)
    return sysr


@pytest.fixture(scope="module")
def vortex():
    case = experiments.walled_vortex_case()
    _keep(case.setup.sys)
    return case


@pytest.fixture(scope="module")
def vortex_r_study():
    case = experiments.walled_vortex_case(n=8, window=0.5, warmup=0.0, ref_steps=50, r=6)
    _keep(case.setup.sys)
    return case


@pytest.fixture(scope="module")
def cavity():
    study = experiments.cavity_energy_study()
    _keep(study.system)
    return study


def _random_spd(r, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((r, r)))
    S = (Q * np.exp(rng.uniform(0, np.log(1e4), r))) @ Q.T
    return 0.5 * (S + S.T)


def test_criterion_01_dissipation_identity(acceptance, small):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        r = int(rng.integers(1, 21))
        D = vms.build_fluctuation_matrix(_random_spd(r, rng), int(rng.integers(0, r + 1)))
        a_w = rng.standard_normal(r) * 10 ** rng.uniform(-4, 4)
        dt, nu_t = 10 ** rng.uniform(-4, 0), 10 ** rng.uniform(-5, 2)
        a_u = vms.step2_filter(a_w, dt, nu_t, D)
        q = 0.5 * (a_w + a_u)
        worst = max(worst, abs(a_w @ a_w - a_u @ a_u - 2 * nu_t * dt * q @ D.D @ q) / (a_w @ a_w))
    # integration runs: every step of VMS-POD runs with both schemes
    sp, ops = small
    modes = random_divfree_modes(sp, ops, 8, rng)
    sysr = _keep(rom.build_reduced_system(PODBasis(modes, np.ones(8), np.ones(8), sp.fingerprint), ops, nu=0.01))
    worst_run = 0.0
    for scheme in dns.SCHEMES:
        for R in (0, 3, 7):
            for nu_t in (1e-3, 1e-2, 1.0):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", vms.StabilityWarning)
                    tr = vms.run_vms_pod(rng.standard_normal(8), sysr, 0.02, 100, scheme, R=R, nu_t=nu_t)
                worst_run = max(worst_run, tr.rel_gap[1:].max())
    ok = worst <= 1e-10 and worst_run <= 1e-10
    acceptance(1, ok, f"max relative gap: filter calls {worst:.1e}, integration steps {worst_run:.1e} (tol 1e-10)")
    assert ok


def test_criterion_02_pod_optimality(acceptance, vortex):
    worst = 0.0
    cases = []
    sp16 = TaylorHoodSpace(build_rect_mesh(16, 16))
    ops16 = assemble_operators(sp16)
    rng = np.random.default_rng(2)
    for M in (20, 200):
        U = np.zeros((M, sp16.n_velocity))
        U[:, sp16.free_dofs] = rng.standard_normal((M, len(sp16.free_dofs))) * np.geomspace(1, 1e-3, M)[:, None]
        cases.append((dns.SnapshotSet(sp16.fingerprint, 1.0, U), ops16.mass))
    c = vortex.setup
    cases.append((dns.SnapshotSet(vortex.space.fingerprint, 1.0, c.ref_fields[::4]), c.mass))  # M = 161
    for snaps, mass in cases:
        K = pod.build_correlation(snaps, mass)
        rank = pod.numerical_rank(np.clip(np.linalg.eigvalsh(K)[::-1], 0, None))
        full = pod.compute_pod_basis(K, snaps, mass, rank)
        total = full.eigenvalues.sum()
        for r in sorted({1, max(1, rank // 2), rank}):
            brute, tail = pod.projection_error(snaps, full, mass, r)
            worst = max(worst, abs(brute - tail) / total)
    ok = worst <= 1e-8
    acceptance(2, ok, f"max |brute - tail| / sum(lambda) = {worst:.1e} over {len(cases)} ensembles (tol 1e-8)")
    assert ok


def test_criterion_03_fluctuation_operator(acceptance, small):
    sp, ops = small
    rng = np.random.default_rng(3)
    worst, worst_lead = 0.0, 0.0
    for _ in range(50):
        r = int(rng.integers(1, 16))
        modes = random_divfree_modes(sp, ops, r, rng)
        S = pod.pod_stiffness(PODBasis(modes, np.ones(r), np.ones(r), sp.fingerprint), ops.stiffness)
        scale = np.linalg.norm(S, 2)
        for R in range(r + 1):
            D = vms.build_fluctuation_matrix(S, R).D
            B = vms.bruteforce_fluctuation_matrix(sp, modes, R).D
            worst = max(worst, np.abs(D - B).max() / scale)
            if R:
                worst_lead = max(worst_lead, np.abs(D[:R]).max() / scale, np.abs(D[:, :R]).max() / scale)
    ok = worst <= 1e-10 and worst_lead <= 1e-11
    acceptance(3, ok, f"Schur vs oracle {worst:.1e} (tol 1e-10), leading block {worst_lead:.1e} (tol 1e-11)")
    assert ok


def test_criterion_04_degeneration(acceptance, vortex):
    c = vortex.setup
    a0, a1 = c.start(0.005)
    worst = 0.0
    for scheme in dns.SCHEMES:
        ref = rom.run_pod_g(a0, c.sys, 0.005, 500, scheme, a1=a1)
        for R, nu_t in ((4, 0.0), (c.basis.r, 1e-2)):
            tr = vms.run_vms_pod(a0, c.sys, 0.005, 500, scheme, R=R, nu_t=nu_t, a1=a1)
            worst = max(worst, np.abs(tr.a_u - ref.a_u).max())
    ok = worst <= 1e-12
    acceptance(4, ok, f"max coefficient difference to POD-G over 500 steps: {worst:.1e} (tol 1e-12)")
    assert ok


def test_criterion_05_unconditional_stability(acceptance, vortex):
    sysr = vortex.setup.sys
    rng = np.random.default_rng(5)
    fails = []
    for k in range(100):
        dt = (0.1, 0.01)[k % 2]
        nu_t = (0.0, 1e-3, 1.0)[k % 3]
        R = int(rng.integers(0, sysr.r + 1))
        D = vms.build_fluctuation_matrix(sysr.S, R)
        a0 = rng.standard_normal(sysr.r) * 10 ** rng.uniform(-2, 1)
        tr = vms.run_vms_pod(a0, sysr, dt, 40, "backward-euler", D=D, nu_t=nu_t)
        rep = dg.stability_audit(tr, sysr, D=D)
        if not rep.passed:
            fails.append(k)
    ok = not fails
    acceptance(5, ok, f"{100 - len(fails)}/100 backward-Euler runs pass the audit")
    assert ok, fails


def test_criterion_06_temporal_rates(acceptance, vortex):
    c = vortex.setup
    tail = vortex.relative_tail()
    dts = [1 / 40, 1 / 80, 1 / 160, 1 / 320]
    rates = {}
    for scheme in dns.SCHEMES:
        rows = dg.study_varying_dt(c, dts, scheme, R=6, nu_t=1e-4)
        rates[scheme] = [row.rates["linf_l2"] for row in rows[1:]]
    ok_b = all(abs(x - 2.0) <= 0.3 for x in rates["bdf2"])
    ok_e = all(abs(x - 1.0) <= 0.2 for x in rates["backward-euler"])
    ok = ok_b and ok_e and tail <= 1e-10
    fmt = lambda v: "/".join(f"{x:.2f}" for x in v)  # noqa: E731
    acceptance(6, ok, f"r={c.basis.r} (tail {tail:.1e}), BDF2 rates {fmt(rates['bdf2'])}, "
                      f"BE rates {fmt(rates['backward-euler'])}")
    assert ok


def test_criterion_07_varying_R(acceptance, vortex_r_study):
    c = vortex_r_study.setup
    r = c.basis.r
    rows = dg.study_varying_R(c, list(range(r + 1)), 0.01, "bdf2", nu_t=1e-3)
    e = np.array([row.errors["l2_h1"] for row in rows])
    best = int(np.argmin(e))
    small_ok = bool(np.all(np.diff(e[:4]) <= 0))
    worse_near_r = best < r and e[r] > e[best]
    ok = small_ok and worse_near_r
    acceptance(7, ok, f"L2(H1) errors R=0..{r}: " + " ".join(f"{x:.4f}" for x in e) + f"; minimum at R={best}")
    assert ok


def test_criterion_08_fem_orders(acceptance):
    sol = problems.stokes_manufactured()
    e0, e1 = [], []
    for n in (8, 16, 32):
        sp = TaylorHoodSpace(build_rect_mesh(n, n))
        u, _ = dns.solve_stokes(sp, sol.f)
        e0.append(l2_error(sp, u, sol.u))
        e1.append(h1_seminorm_error(sp, u, sol.grad))
    r0 = np.log2(np.array(e0[:-1]) / np.array(e0[1:]))
    r1 = np.log2(np.array(e1[:-1]) / np.array(e1[1:]))
    ok = bool(np.all(np.abs(r0 - 3) <= 0.3) and np.all(np.abs(r1 - 2) <= 0.3))
    acceptance(8, ok, "L2 orders " + "/".join(f"{x:.2f}" for x in r0) + ", H1 orders "
               + "/".join(f"{x:.2f}" for x in r1))
    assert ok


def test_criterion_09_energy_growth(acceptance, cavity):
    growth, monotone, pm = cavity.galerkin_growth()
    nu_t, dev = cavity.best_vms()
    gal_dev = cavity.max_deviation(cavity.galerkin)
    ok = monotone and growth >= 0.05 and dev <= 0.10
    acceptance(9, ok, f"POD-G r={cavity.r}: period-mean energy +{100 * growth:.1f}% (monotone={monotone}), "
                      f"max deviation {100 * gal_dev:.1f}%; VMS-POD R={cavity.R} nu_T={nu_t:g}: "
                      f"max deviation {100 * dev:.1f}%")
    assert ok


def test_criterion_10_skew_symmetry(acceptance, vortex, vortex_r_study, cavity):
    rng = np.random.default_rng(10)
    worst = 0.0
    for sysr in SYSTEMS:
        Tmax = np.abs(sysr.T).max()
        if Tmax == 0:
            continue
        for _ in range(100):
            a, b = rng.standard_normal((2, sysr.r))
            worst = max(worst, abs(a @ sysr.N(b, a)) / ((a @ a) * np.linalg.norm(b) * Tmax))
    ok = worst <= 1e-12
    acceptance(10, ok, f"max |a.N(b,a)| / (|a|^2 |b| max|T|) = {worst:.1e} over {len(SYSTEMS)} systems (tol 1e-12)")
    assert ok
