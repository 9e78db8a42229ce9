import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_divfree_modes
from vmspod import problems, rom
from vmspod.errors import CompatibilityError, ConvergenceError, ValidationError
from vmspod.pod import PODBasis


def _basis(space, ops, r, seed=0):
    modes = random_divfree_modes(space, ops, r, np.random.default_rng(seed))
    return PODBasis(modes, np.ones(r), np.ones(r), space.fingerprint)


@pytest.fixture(scope="module")
def system(small):
    sp, ops = small
    b = _basis(sp, ops, 5)
    return b, rom.build_reduced_system(b, ops, nu=0.01)


def test_tensor_is_skew(system):
    _, sysr = system
    assert np.array_equal(sysr.T, -sysr.T.transpose(0, 2, 1))


@given(st.integers(0, 2**31 - 1))
def test_reduced_trilinear_vanishes_on_repeated_argument(system, seed):
    _, sysr = system
    a, b = np.random.default_rng(seed).standard_normal((2, sysr.r))
    bound = 1e-12 * (a @ a) * np.linalg.norm(b) * np.abs(sysr.T).max()
    assert abs(a @ sysr.N(b, a)) <= bound


def test_reduced_convection_matches_full_order(small, system, rng):
    sp, ops = small
    b, sysr = system
    a, c = rng.standard_normal((2, sysr.r))
    full = b.modes.T @ (ops.convection(b.reconstruct(a)) @ b.reconstruct(c))
    np.testing.assert_allclose(sysr.N(a, c), full, atol=1e-11 * np.abs(full).max())


def test_jacobian_by_finite_differences(system, rng):
    _, sysr = system
    a, d = rng.standard_normal((2, sysr.r))
    h = 1e-6
    fd = (sysr.N(a + h * d, a + h * d) - sysr.N(a - h * d, a - h * d)) / (2 * h)
    np.testing.assert_allclose(sysr.N_jacobian(a) @ d, fd, rtol=1e-7, atol=1e-9)


def test_single_mode_backward_euler_closed_form(small):
    sp, ops = small
    b = _basis(sp, ops, 1, seed=3)
    sysr = rom.build_reduced_system(b, ops, nu=0.2)
    s = sysr.S[0, 0]
    a = rom.step1_backward_euler(np.array([1.5]), 0.1, sysr, 0.1)
    assert a[0] == pytest.approx(1.5 / (1 + 0.2 * 0.1 * s), rel=1e-13)


def test_newton_agrees_with_picard_oracle(system, rng):
    _, sysr = system
    a_n = 0.3 * rng.standard_normal(sysr.r)
    dt = 0.05
    rhs = a_n / dt
    newton = rom.step1_backward_euler(a_n, dt, sysr, dt)
    picard = rom.picard_step(sysr, rhs, 1.0, dt, a_n)
    np.testing.assert_allclose(newton, picard, atol=1e-10 * np.linalg.norm(a_n))


def test_bdf2_is_exact_for_quadratic_trajectories():
    # a' = f with a(t) = 1 + t + t^2: BDF2 reproduces quadratics exactly
    sysr = rom.ReducedSystem(np.zeros((1, 1)), np.zeros((1, 1, 1)), 1.0, lambda t: np.array([1.0 + 2.0 * t]))
    exact = lambda t: 1.0 + t + t * t  # noqa: E731
    dt = 0.1
    traj = rom.integrate(sysr, np.array([exact(0.0)]), dt, 20, "bdf2", a1=np.array([exact(dt)]))
    np.testing.assert_allclose(traj.a_u[:, 0], exact(traj.times), rtol=1e-13)


@pytest.mark.parametrize("scheme,order", [("backward-euler", 1.0), ("bdf2", 2.0)])
def test_scalar_temporal_order(scheme, order):
    # a' = -a + cos t, exact solution with a(0) = 0
    sysr = rom.ReducedSystem(np.eye(1), np.zeros((1, 1, 1)), 1.0, lambda t: np.array([np.cos(t)]))
    exact = lambda t: 0.5 * (np.cos(t) + np.sin(t) - np.exp(-t))  # noqa: E731
    errs = []
    for k in (20, 40, 80):
        dt = 1.0 / k
        traj = rom.integrate(sysr, np.zeros(1), dt, k, scheme, a1=np.array([exact(dt)]))
        errs.append(np.abs(traj.a_u[:, 0] - exact(traj.times)).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - order) <= 0.1), rates


@pytest.mark.parametrize("dt", [0.1, 0.01])
def test_backward_euler_energy_never_grows(system, rng, dt):
    _, sysr = system
    a0 = 5.0 * rng.standard_normal(sysr.r)
    traj = rom.run_pod_g(a0, sysr, dt, 40, "backward-euler")
    E = traj.energy_u
    assert np.all(np.diff(E) <= 1e-13 * E[0])


def test_reduced_forcing_is_projected_load(small):
    sp, ops = small
    b = _basis(sp, ops, 3, seed=4)
    prob = problems.lid_cavity(nu=0.01, T=1.0, dt=0.1)
    sysr = rom.build_reduced_system(b, ops, prob)
    np.testing.assert_allclose(sysr.f(0.3), b.modes.T @ ops.load(prob.forcing, 0.3), rtol=1e-14)
    assert sysr.nu == prob.nu


def test_build_rejects_foreign_basis(small):
    sp, ops = small
    b = _basis(sp, ops, 2)
    b.fingerprint ^= 1
    with pytest.raises(CompatibilityError):
        rom.build_reduced_system(b, ops, nu=0.1)
    with pytest.raises(ValidationError):
        rom.build_reduced_system(_basis(sp, ops, 2), ops)


def test_first_step_is_backward_euler_without_a1(system, rng):
    _, sysr = system
    a0 = rng.standard_normal(sysr.r)
    traj = rom.run_pod_g(a0, sysr, 0.05, 3, "bdf2")
    np.testing.assert_array_equal(traj.a_u[1], rom.step1_backward_euler(a0, 0.05, sysr, 0.05))
    assert traj.n_start == 1


def test_convergence_failure_reports_step(system, monkeypatch):
    _, sysr = system
    real = rom._newton
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise ConvergenceError("forced failure", residuals=[1.0])
        return real(*args, **kw)

    monkeypatch.setattr(rom, "_newton", flaky)
    with pytest.raises(ConvergenceError) as info:
        rom.run_pod_g(np.ones(sysr.r), sysr, 0.1, 3, "backward-euler")
    assert info.value.step == 2


def _be_residual(sysr, a, a_n, dt):
    return a / dt + sysr.nu * sysr.S @ a + sysr.N(a, a) - a_n / dt


def test_continuation_fallback_solves_the_step(system, monkeypatch):
    _, sysr = system
    a_n = 20.0 * np.random.default_rng(3).standard_normal(sysr.r)
    real = rom._damped_newton
    calls = []

    def first_fails(resid, jac, a, tol, max_iter):
        calls.append(1)
        out = real(resid, jac, a, tol, max_iter)
        return (out[0], out[1], False) if len(calls) == 1 else out

    monkeypatch.setattr(rom, "_damped_newton", first_fails)
    a = rom.step1_backward_euler(a_n, 0.1, sysr, 0.1)
    assert len(calls) > 2
    assert np.linalg.norm(_be_residual(sysr, a, a_n, 0.1)) <= 1e-9 * np.linalg.norm(a_n / 0.1)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.01, 0.1, 1.0]))
def test_large_states_still_solve(system, seed, dt):
    _, sysr = system
    a_n = 50.0 * np.random.default_rng(seed).standard_normal(sysr.r)
    a = rom.step1_backward_euler(a_n, dt, sysr, dt)
    assert np.linalg.norm(_be_residual(sysr, a, a_n, dt)) <= 1e-9 * np.linalg.norm(a_n / dt)
    assert a @ a <= a_n @ a_n * (1 + 1e-12)
