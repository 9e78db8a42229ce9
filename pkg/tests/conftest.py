import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vmspod.fem import TaylorHoodSpace, assemble_operators, build_rect_mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def _space(n):
    sp = TaylorHoodSpace(build_rect_mesh(n, n))
    return sp, assemble_operators(sp)


@pytest.fixture(scope="session")
def small():
    """4x4 unit-square space and its operators."""
    return _space(4)


@pytest.fixture(scope="session")
def medium():
    return _space(8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_divfree_modes(space, ops, k, rng):
    """``k`` mass-orthonormal, discretely divergence-free, boundary-conforming fields."""
    from vmspod.dns import project_divergence_free
    free = space.free_dofs
    cols = []
    for _ in range(k):
        u = np.zeros(space.n_velocity)
        u[free] = rng.standard_normal(len(free))
        cols.append(project_divergence_free(ops, u))
    Q = np.array(cols).T
    G = Q.T @ (ops.mass @ Q)
    L = np.linalg.cholesky(G)
    return np.linalg.solve(L, Q.T).T


_ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)``: one summary line per acceptance criterion."""

    def record(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
