"""Structured triangle meshes, Taylor-Hood P2/P1 spaces and operator assembly.

Velocity dofs are component-blocked: dof ``c * n_nodes + k`` is component
``c`` at P2 node ``k``.  Pressure dofs are the mesh vertices.
"""
import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ValidationError
from .quadrature import collapsed_gauss, default_rule

SIDES = ("bottom", "right", "top", "left")
TAGS = ("wall", "inflow", "outflow", "exact-Dirichlet")

# local P2 node order: vertices 0,1,2 then midpoints of edges (0,1), (1,2), (2,0)
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass
class Mesh:
    nodes: np.ndarray  # (n_vertices, 2)
    triangles: np.ndarray  # (n_triangles, 3) counter-clockwise
    boundary_edges: np.ndarray  # (n_boundary_edges, 2)
    boundary_tags: list
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)

    @property
    def n_vertices(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def validate(self):
        if self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices:
            raise ValidationError("triangle node index out of range")
        if np.any(self.signed_areas() <= 0):
            raise ValidationError("mesh has non-positive triangle area")
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise ValidationError("every boundary edge needs exactly one tag")
        bad = set(self.boundary_tags) - set(TAGS)
        if bad:
            raise ValidationError(f"unknown boundary tags {sorted(bad)}")


def build_rect_mesh(nx, ny, bounds=(0.0, 1.0, 0.0, 1.0), tags=None):
    """Uniform triangulation of a rectangle, each cell split along its
    lower-left to upper-right diagonal.

    ``tags`` optionally maps side names (bottom/right/top/left) to boundary
    labels; unspecified sides are ``"wall"``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValidationError(f"need nx, ny >= 2, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    x0, x1, y0, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValidationError(f"degenerate rectangle {bounds}")
    tags = dict(tags or {})
    if set(tags) - set(SIDES):
        raise ValidationError(f"unknown sides {sorted(set(tags) - set(SIDES))}")

    x = np.linspace(x0, x1, nx + 1)
    y = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(x, y)  # row j is y[j]
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    tri = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([v00, v10, v11])
    tri[1::2] = np.column_stack([v00, v11, v01])

    edges, etags = [], []
    i = np.arange(nx)
    j = np.arange(ny)
    for side, pairs in (
        ("bottom", np.column_stack([vid(i, 0), vid(i + 1, 0)])),
        ("right", np.column_stack([vid(nx, j), vid(nx, j + 1)])),
        ("top", np.column_stack([vid(i + 1, ny), vid(i, ny)])),
        ("left", np.column_stack([vid(0, j + 1), vid(0, j)])),
    ):
        edges.append(pairs)
        etags += [tags.get(side, "wall")] * len(pairs)
    mesh = Mesh(nodes, tri, np.vstack(edges).astype(np.int64), etags, (x0, x1, y0, y1))
    mesh.validate()
    return mesh


@dataclass
class TaylorHoodSpace:
    """P2 velocity / P1 pressure on a triangle mesh."""

    mesh: Mesh
    dirichlet_tags: tuple = ("wall", "inflow", "exact-Dirichlet")
    # filled in __post_init__
    p2_nodes: np.ndarray = field(init=False, repr=False)
    cell_dofs: np.ndarray = field(init=False, repr=False)  # (E, 6) P2 node ids
    edges: np.ndarray = field(init=False, repr=False)
    dirichlet_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mesh = self.mesh
        tri = mesh.triangles
        nv = mesh.n_vertices
        local = np.stack([np.sort(tri[:, list(e)], axis=1) for e in _LOCAL_EDGES], axis=1)
        edges, inverse = np.unique(local.reshape(-1, 2), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1, 3)
        self.edges = edges
        self.cell_dofs = np.hstack([tri, nv + inverse]).astype(np.int64)
        mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
        self.p2_nodes = np.vstack([mesh.nodes, mids])

        edge_id = {tuple(e): k for k, e in enumerate(edges.tolist())}
        on_bnd = np.zeros(len(self.p2_nodes), dtype=bool)
        for (a, b), tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags):
            if tag in self.dirichlet_tags:
                on_bnd[[a, b, nv + edge_id[tuple(sorted((a, b)))]]] = True
        self.dirichlet_mask = np.concatenate([on_bnd, on_bnd])

    @property
    def n_nodes(self):
        return len(self.p2_nodes)

    @property
    def n_velocity(self):
        return 2 * self.n_nodes

    @property
    def n_pressure(self):
        return self.mesh.n_vertices

    @property
    def free_dofs(self):
        return np.flatnonzero(~self.dirichlet_mask)

    @property
    def boundary_dofs(self):
        return np.flatnonzero(self.dirichlet_mask)

    def velocity_dof(self, component, node):
        return component * self.n_nodes + node

    @cached_property
    def fingerprint(self):
        """64-bit content hash of the mesh and dof maps."""
        h = hashlib.blake2b(digest_size=8)
        for arr in (self.mesh.nodes, self.mesh.triangles, self.cell_dofs, self.dirichlet_mask):
            a = np.ascontiguousarray(arr)
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return int.from_bytes(h.digest(), "little")

    # -- geometry at quadrature points -------------------------------------
    def geometry(self, rule=None):
        """Basis values/gradients and weights at the quadrature points of ``rule``."""
        rule = rule or default_rule()
        key = (rule.degree, rule.size)
        cache = self.__dict__.setdefault("_geom_cache", {})
        if key not in cache:
            cache[key] = _Geometry(self.mesh, rule)
        return cache[key]


def p2_basis(points):
    """Values (Q, 6) and reference gradients (Q, 6, 2) of the P2 basis."""
    xi, eta = points[:, 0], points[:, 1]
    L = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    vals = np.empty((len(points), 6))
    grads = np.empty((len(points), 6, 2))
    for i in range(3):
        vals[:, i] = L[:, i] * (2.0 * L[:, i] - 1.0)
        grads[:, i] = (4.0 * L[:, i] - 1.0)[:, None] * dL[i]
    for k, (a, b) in enumerate(_LOCAL_EDGES):
        vals[:, 3 + k] = 4.0 * L[:, a] * L[:, b]
        grads[:, 3 + k] = 4.0 * (L[:, b, None] * dL[a] + L[:, a, None] * dL[b])
    return vals, grads


def p1_basis(points):
    xi, eta = points[:, 0], points[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta], axis=1)


class _Geometry:
    def __init__(self, mesh, rule):
        p = mesh.nodes[mesh.triangles]  # (E, 3, 2)
        Jm = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        det = Jm[:, 0, 0] * Jm[:, 1, 1] - Jm[:, 0, 1] * Jm[:, 1, 0]
        invJT = np.empty_like(Jm)
        invJT[:, 0, 0] = Jm[:, 1, 1] / det
        invJT[:, 0, 1] = -Jm[:, 1, 0] / det
        invJT[:, 1, 0] = -Jm[:, 0, 1] / det
        invJT[:, 1, 1] = Jm[:, 0, 0] / det
        self.rule = rule
        self.vals, dref = p2_basis(rule.points)  # (Q,6), (Q,6,2)
        self.p1 = p1_basis(rule.points)  # (Q,3)
        self.grads = np.einsum("eij,qaj->eqai", invJT, dref)  # (E,Q,6,2)
        self.wdet = np.abs(det)[:, None] * rule.weights[None, :]  # (E,Q)
        self.xq = p[:, 0, None, :] + np.einsum("eij,qj->eqi", Jm, rule.points)  # (E,Q,2)


# -- evaluation of FE fields ---------------------------------------------------
def _components(space, u):
    """Split velocity dof array(s) into (..., 2, n_nodes)."""
    u = np.asarray(u)
    return u.reshape(u.shape[:-1] + (2, space.n_nodes))


def eval_velocity(space, u, rule=None):
    """Values (E, Q, 2) of a velocity field at quadrature points."""
    g = space.geometry(rule)
    uc = _components(space, u)[:, space.cell_dofs]  # (2, E, 6)
    return np.einsum("qa,cea->eqc", g.vals, uc)


def eval_velocity_gradient(space, u, rule=None):
    """Gradients (E, Q, 2, 2) with ``[..., c, k] = d u_c / d x_k``."""
    g = space.geometry(rule)
    uc = _components(space, u)[:, space.cell_dofs]
    return np.einsum("eqak,cea->eqck", g.grads, uc)


def interpolate(f, space, t=None):
    """Nodal P2 interpolant of a vector function ``f(x, y) -> (fx, fy)``.

    If ``t`` is given the function is called as ``f(t, x, y)``.
    """
    x, y = space.p2_nodes[:, 0], space.p2_nodes[:, 1]
    vals = f(x, y) if t is None else f(t, x, y)
    out = np.empty(space.n_velocity)
    out[: space.n_nodes] = np.broadcast_to(vals[0], x.shape)
    out[space.n_nodes:] = np.broadcast_to(vals[1], x.shape)
    return out


def interpolate_pressure(p, space, t=None):
    x, y = space.mesh.nodes[:, 0], space.mesh.nodes[:, 1]
    vals = p(x, y) if t is None else p(t, x, y)
    return np.broadcast_to(vals, x.shape).astype(float)


# -- assembly ------------------------------------------------------------------
def _scatter(space, local, n, blocks=((0, 0), (1, 1))):
    """Assemble per-element (E, 6, 6) blocks into an n x n sparse matrix.

    ``local`` is either one (E,6,6) array used for every block in ``blocks``
    or a dict keyed by block.
    """
    dofs = space.cell_dofs
    nn = space.n_nodes
    rows, cols, data = [], [], []
    for (ci, cj) in blocks:
        blk = local[(ci, cj)] if isinstance(local, dict) else local
        r = np.broadcast_to((ci * nn + dofs)[:, :, None], blk.shape)
        c = np.broadcast_to((cj * nn + dofs)[:, None, :], blk.shape)
        rows.append(r.ravel())
        cols.append(c.ravel())
        data.append(blk.ravel())
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


def assemble_mass(space, rule=None):
    """Vector P2 mass matrix, ``v^T M u = int u . v``."""
    g = space.geometry(rule)
    loc = np.einsum("eq,qa,qb->eab", g.wdet, g.vals, g.vals)
    return _scatter(space, loc, space.n_velocity)


def assemble_stiffness(space, rule=None):
    """Vector P2 stiffness matrix, ``v^T A u = int grad u : grad v``."""
    g = space.geometry(rule)
    loc = np.einsum("eq,eqai,eqbi->eab", g.wdet, g.grads, g.grads)
    return _scatter(space, loc, space.n_velocity)


def assemble_divergence(space, rule=None):
    """``(B v)_q = int q div v`` with P1 test functions q (shape n_p x n_u)."""
    g = space.geometry(rule)
    tri = space.mesh.triangles
    dofs = space.cell_dofs
    nn = space.n_nodes
    rows, cols, data = [], [], []
    for c in range(2):
        loc = np.einsum("eq,qa,eqb->eab", g.wdet, g.p1, g.grads[..., c])  # (E,3,6)
        rows.append(np.broadcast_to(tri[:, :, None], loc.shape).ravel())
        cols.append(np.broadcast_to((c * nn + dofs)[:, None, :], loc.shape).ravel())
        data.append(loc.ravel())
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_pressure, space.n_velocity),
    ).tocsr()


def assemble_pressure_mass(space, rule=None):
    g = space.geometry(rule)
    tri = space.mesh.triangles
    loc = np.einsum("eq,qa,qb->eab", g.wdet, g.p1, g.p1)
    r = np.broadcast_to(tri[:, :, None], loc.shape).ravel()
    c = np.broadcast_to(tri[:, None, :], loc.shape).ravel()
    n = space.n_pressure
    return sp.coo_matrix((loc.ravel(), (r, c)), shape=(n, n)).tocsr()


def assemble_convection(space, w, rule=None):
    """Skew-symmetric convection operator N(w).

    ``v^T N(w) u = b(w, u, v) = 1/2 [ (w.grad u, v) - (w.grad v, u) ]``.
    """
    g = space.geometry(rule)
    wq = eval_velocity(space, w, rule)  # (E,Q,2)
    adv = np.einsum("eqk,eqbk->eqb", wq, g.grads)  # w . grad phi_b
    K = np.einsum("eq,eqb,qa->eab", g.wdet, adv, g.vals, optimize=True)
    loc = 0.5 * (K - K.transpose(0, 2, 1))
    return _scatter(space, loc, space.n_velocity)


def assemble_convection_derivative(space, u, rule=None):
    """Operator C(u) with ``v^T C(u) d = b(d, u, v)``.

    ``N(u) + C(u)`` is the Jacobian of ``u -> N(u) u``.
    """
    g = space.geometry(rule)
    uq = eval_velocity(space, u, rule)  # (E,Q,c)
    gu = eval_velocity_gradient(space, u, rule)  # (E,Q,c,k)
    blocks = {}
    for c in range(2):
        for k in range(2):
            t1 = np.einsum("eq,qb,eq,qa->eab", g.wdet, g.vals, gu[:, :, c, k], g.vals, optimize=True)
            t2 = np.einsum("eq,qb,eqa,eq->eab", g.wdet, g.vals, g.grads[..., k], uq[:, :, c], optimize=True)
            blocks[(c, k)] = 0.5 * (t1 - t2)
    return _scatter(space, blocks, space.n_velocity, blocks=tuple(blocks))


def assemble_load(space, f, t=None, rule=None):
    """Load vector ``F_i = int f . phi_i`` for ``f(x, y)`` or ``f(t, x, y)``."""
    g = space.geometry(rule)
    x, y = g.xq[..., 0], g.xq[..., 1]
    vals = f(x, y) if t is None else f(t, x, y)
    out = np.zeros(space.n_velocity)
    nn = space.n_nodes
    for c in range(2):
        fc = np.broadcast_to(vals[c], x.shape)
        loc = np.einsum("eq,eq,qa->ea", g.wdet, fc, g.vals)
        np.add.at(out, c * nn + space.cell_dofs, loc)
    return out


@dataclass
class FEMOperators:
    """Frozen set of full-order operators for one space."""

    space: TaylorHoodSpace
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    divergence: sp.csr_matrix
    pressure_mass: sp.csr_matrix

    @property
    def fingerprint(self):
        return self.space.fingerprint

    @cached_property
    def pressure_weights(self):
        """Row ``m`` with ``m . p = int p``."""
        return np.asarray(self.pressure_mass.sum(axis=0)).ravel()

    def convection(self, w):
        return assemble_convection(self.space, w)

    def convection_derivative(self, u):
        return assemble_convection_derivative(self.space, u)

    def load(self, f, t=None):
        return assemble_load(self.space, f, t)


def assemble_operators(space, rule=None):
    return FEMOperators(
        space,
        assemble_mass(space, rule),
        assemble_stiffness(space, rule),
        assemble_divergence(space, rule),
        assemble_pressure_mass(space, rule),
    )


# -- error norms against analytic fields ---------------------------------------
def l2_error(space, u, exact, t=None, degree=10):
    """``||u_h - u||_L2`` for a vector function ``exact(x, y) -> (ux, uy)``."""
    rule = collapsed_gauss(degree)
    g = space.geometry(rule)
    uh = eval_velocity(space, u, rule)
    x, y = g.xq[..., 0], g.xq[..., 1]
    ex = exact(x, y) if t is None else exact(t, x, y)
    d = uh - np.stack([np.broadcast_to(ex[0], x.shape), np.broadcast_to(ex[1], x.shape)], -1)
    return float(np.sqrt(np.einsum("eq,eqc,eqc->", g.wdet, d, d)))


def h1_seminorm_error(space, u, exact_grad, t=None, degree=10):
    """``||grad(u_h - u)||_L2``; ``exact_grad(x, y)`` returns [[dux/dx, dux/dy], [duy/dx, duy/dy]]."""
    rule = collapsed_gauss(degree)
    g = space.geometry(rule)
    gh = eval_velocity_gradient(space, u, rule)
    x, y = g.xq[..., 0], g.xq[..., 1]
    ex = exact_grad(x, y) if t is None else exact_grad(t, x, y)
    ge = np.empty_like(gh)
    for c in range(2):
        for k in range(2):
            ge[..., c, k] = np.broadcast_to(ex[c][k], x.shape)
    d = gh - ge
    return float(np.sqrt(np.einsum("eq,eqck,eqck->", g.wdet, d, d)))


def pressure_l2_error(space, p, exact, t=None, degree=8):
    rule = collapsed_gauss(degree)
    g = space.geometry(rule)
    ph = np.einsum("qa,ea->eq", g.p1, p[space.mesh.triangles])
    x, y = g.xq[..., 0], g.xq[..., 1]
    pe = exact(x, y) if t is None else exact(t, x, y)
    d = ph - pe
    return float(np.sqrt(np.einsum("eq,eq,eq->", g.wdet, d, d)))


def inf_sup_constant(space, ops=None):
    """Discrete inf-sup constant by a dense generalized eigenproblem.

    Diagnostic only; meant for coarse meshes.  Returns the square root of the
    smallest eigenvalue of ``B A^{-1} B^T p = lambda M_p p`` on zero-mean
    pressures.
    """
    ops = ops or assemble_operators(space)
    free = space.free_dofs
    A = ops.stiffness[free][:, free].toarray()
    B = ops.divergence[:, free].toarray()
    Mp = ops.pressure_mass.toarray()
    S = B @ sla.solve(A, B.T, assume_a="pos")
    # restrict to the Mp-orthogonal complement of constants
    m = ops.pressure_weights
    Q, _ = np.linalg.qr(np.column_stack([m, np.eye(len(m))[:, :-1]]))
    Z = Q[:, 1:]
    ev = sla.eigh(Z.T @ S @ Z, Z.T @ Mp @ Z, eigvals_only=True)
    return float(np.sqrt(max(ev[0], 0.0)))
