import numpy as np
import pytest
import sympy as s

from vmspod import dns, problems
from vmspod.errors import CompatibilityError, ConvergenceError, FormatError, ValidationError
from vmspod.fem import TaylorHoodSpace, assemble_operators, build_rect_mesh, l2_error


def test_problem_validation():
    with pytest.raises(ValidationError):
        problems.taylor_green(nu=0.0)
    with pytest.raises(ValidationError):
        problems.taylor_green(T=1.0, dt=0.3)
    with pytest.raises(ValidationError):
        problems.taylor_green(dt=-0.1)
    assert problems.taylor_green(T=1.0, dt=0.1).n_steps == 10


def test_taylor_green_solves_navier_stokes_symbolically():
    nu = s.Rational(1, 20)
    u, p = problems.taylor_green_exprs(nu)
    mom, div = problems.nse_residual_exprs(u, p, nu)
    assert s.simplify(div) == 0
    for expr in mom:
        assert s.simplify(expr) == 0


def test_taylor_green_residual_by_quadrature_points(rng):
    nu = 0.05
    u, p = problems.taylor_green_exprs(nu)
    mom, div = problems.nse_residual_exprs(u, p, nu)
    f = s.lambdify((problems.TT, problems.X, problems.Y), [*mom, div], "numpy")
    t, x, y = rng.uniform(0, 1, (3, 500))
    vals = np.array([np.broadcast_to(v, x.shape) for v in f(t, x, y)])
    assert np.abs(vals).max() <= 1e-12


def test_stokes_manufactured_solution_is_consistent():
    sol = problems.stokes_manufactured()
    x = np.linspace(0, 1, 7)
    # vanishes on the boundary and is divergence free
    for xb, yb in ((x, 0 * x), (x, 0 * x + 1), (0 * x, x), (0 * x + 1, x)):
        ux, uy = sol.u(xb, yb)
        assert np.abs(ux).max() < 1e-14 and np.abs(uy).max() < 1e-14
    X, Y = np.meshgrid(x, x)
    g = sol.grad(X, Y)
    assert np.abs(g[0][0] + g[1][1]).max() < 1e-13


def test_rest_state_is_preserved(small):
    sp, ops = small
    prob = problems.custom(0.1, 0.2, 0.05, ("0", "0"))
    res = dns.solve_nse(prob, sp, "bdf2", ops=ops)
    assert np.abs(res.velocity).max() == 0.0


@pytest.mark.parametrize("scheme", dns.SCHEMES)
def test_unforced_energy_decays(small, scheme):
    sp, ops = small
    prob = problems.walled_vortex(nu=0.01, T=0.2, dt=0.02, amplitude=2.0)
    res = dns.solve_nse(prob, sp, scheme, ops=ops)
    E = res.kinetic_energy(ops.mass)
    assert np.all(np.diff(E) <= 1e-14 * E[0])
    assert E[-1] < E[0]


def test_snapshot_count_and_stride(small):
    sp, ops = small
    prob = problems.walled_vortex(nu=0.05, T=0.3, dt=0.02)
    res = dns.solve_nse(prob, sp, "backward-euler", ops=ops)
    assert res.snapshots.M == 15
    res2 = dns.solve_nse(prob, sp, "backward-euler", ops=ops, stride=4, warmup=2)
    np.testing.assert_array_equal(res2.snapshots.data, res.velocity[3::4])
    assert res2.snapshots.dt_snap == pytest.approx(0.08)


def test_newton_stokes_limit_one_iteration(small, rng):
    sp, ops = small
    hist = dns.project_divergence_free(ops, rng.standard_normal(sp.n_velocity))
    res = dns.nonlinear_step_solve(ops, 0.1, 0.05, hist, convection=False)
    assert res.iterations == 1


def test_newton_converges_quadratically(small):
    sp, ops = small
    prob = problems.walled_vortex(nu=1e-2, T=0.05, dt=0.05, amplitude=5.0)
    from vmspod.fem import interpolate
    u0 = dns.project_divergence_free(ops, interpolate(prob.u0, sp))
    res = dns.nonlinear_step_solve(ops, prob.nu, prob.dt, u0)
    r = np.array(res.residuals)
    assert np.all(np.diff(r) < 0)
    # observed order from the last three residuals clear of roundoff
    useful = r[r > 1e3 * np.finfo(float).eps * r[0]]
    assert len(useful) >= 4
    e0, e1, e2 = useful[-3:]
    order = np.log(e2 / e1) / np.log(e1 / e0)
    assert order > 1.6, (r, order)


def test_newton_rejects_zero_step(small):
    sp, ops = small
    with pytest.raises(ValidationError):
        dns.nonlinear_step_solve(ops, 0.1, 0.0, np.zeros(sp.n_velocity))


def test_newton_nonconvergence_reports_step(small):
    sp, ops = small
    prob = problems.walled_vortex(nu=1e-3, T=0.3, dt=0.1, amplitude=20.0)
    with pytest.raises(ConvergenceError) as info:
        dns.solve_nse(prob, sp, "bdf2", ops=ops, max_iter=1)
    assert info.value.step == 1


def test_snapshot_roundtrip(tmp_path, rng):
    snaps = dns.SnapshotSet(0x1234ABCD5678EF90, 0.125, rng.standard_normal((5, 17)))
    path = tmp_path / "a.vps"
    dns.write_snapshots(snaps, path)
    back = dns.read_snapshots(path, fingerprint=snaps.fingerprint)
    assert back.fingerprint == snaps.fingerprint and back.dt_snap == 0.125
    assert back.data.tobytes() == snaps.data.tobytes()
    dns.write_snapshots(back, tmp_path / "b.vps")
    assert (tmp_path / "a.vps").read_bytes() == (tmp_path / "b.vps").read_bytes()


def test_snapshot_header_layout(tmp_path):
    snaps = dns.SnapshotSet(7, 0.5, np.arange(6.0).reshape(2, 3))
    dns.write_snapshots(snaps, tmp_path / "a.vps")
    raw = (tmp_path / "a.vps").read_bytes()
    assert raw[:4] == b"VPS1"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:14], "little") == 7
    assert int.from_bytes(raw[14:18], "little") == 2
    assert int.from_bytes(raw[18:22], "little") == 3
    assert np.frombuffer(raw[22:30], "<f8")[0] == 0.5
    assert len(raw) == 30 + 6 * 8


def test_snapshot_errors(tmp_path, rng):
    snaps = dns.SnapshotSet(99, 0.1, rng.standard_normal((3, 4)))
    path = tmp_path / "s.vps"
    dns.write_snapshots(snaps, path)
    raw = path.read_bytes()
    with pytest.raises(CompatibilityError):
        dns.read_snapshots(path, fingerprint=100)
    (tmp_path / "magic.vps").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        dns.read_snapshots(tmp_path / "magic.vps")
    (tmp_path / "short.vps").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        dns.read_snapshots(tmp_path / "short.vps")
    (tmp_path / "hdr.vps").write_bytes(raw[:10])
    with pytest.raises(FormatError):
        dns.read_snapshots(tmp_path / "hdr.vps")


def _tg_linf_error(space, ops, prob, scheme="bdf2"):
    res = dns.solve_nse(prob, space, scheme, ops=ops)
    return max(l2_error(space, res.velocity[k], prob.exact_u, t=res.times[k]) for k in range(len(res.times)))


def test_taylor_green_bdf2_temporal_order_against_exact_solution():
    # fine mesh so the spatial error stays well below the temporal one
    space = TaylorHoodSpace(build_rect_mesh(24, 24))
    ops = assemble_operators(space)
    T = 0.5
    errs = [_tg_linf_error(space, ops, problems.taylor_green(0.1, T, T / k)) for k in (20, 40)]
    rate = np.log2(errs[0] / errs[1])
    assert abs(rate - 2.0) <= 0.3, (errs, rate)


def test_taylor_green_temporal_orders_against_fine_step_reference():
    space = TaylorHoodSpace(build_rect_mesh(8, 8))
    ops = assemble_operators(space)
    nu, T = 0.5, 0.2
    ref = dns.solve_nse(problems.taylor_green(nu, T, T / 640), space, "bdf2", ops=ops).velocity
    out = {}
    for scheme in dns.SCHEMES:
        errs = []
        for k in (40, 80, 160):
            v = dns.solve_nse(problems.taylor_green(nu, T, T / k), space, scheme, ops=ops).velocity
            E = v - ref[:: 640 // k]
            errs.append(np.sqrt(np.einsum("ki,ki->k", E, (ops.mass @ E.T).T)).max())
        out[scheme] = np.log2(errs[-2] / errs[-1])
    assert abs(out["bdf2"] - 2.0) <= 0.3, out
    assert abs(out["backward-euler"] - 1.0) <= 0.2, out


def test_stokes_solver_orders():
    sol = problems.stokes_manufactured()
    errs = []
    for n in (8, 16):
        space = TaylorHoodSpace(build_rect_mesh(n, n))
        u, _ = dns.solve_stokes(space, sol.f)
        errs.append(l2_error(space, u, sol.u))
    assert abs(np.log2(errs[0] / errs[1]) - 3.0) <= 0.3


def test_steady_state_is_a_fixed_point(small):
    sp, ops = small
    prob = problems.lid_cavity(nu=0.05, T=0.1, dt=0.05, amplitude=1.0)
    u = dns.steady_state(prob, sp, ops=ops, tol=1e-12)
    res = dns.nonlinear_step_solve(ops, prob.nu, 1e3, u, load=ops.load(prob.forcing, 0.0), guess=u)
    assert np.abs(res.u - u).max() <= 1e-8 * np.abs(u).max()
