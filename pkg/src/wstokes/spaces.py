"""Taylor-Hood P2/P1 spaces on tetrahedral meshes.

Velocity is componentwise quadratic on vertex and edge-midpoint nodes
(dof index = 3 * node + component), pressure is linear on vertices.
Homogeneous Dirichlet boundary conditions constrain every component of
the nodes lying on boundary faces; midpoints of edges that merely join
two boundary vertices through the interior are not constrained.

Weighted norms evaluate (sum_T sum_k w_k omega(x_k) |D u(x_k)|^q)^(1/q)
with D in {identity, gradient, symmetric gradient} and Frobenius norms
on tensors.  Quadrature defaults: order 4 for unweighted bilinear forms,
5 for weighted norms, 6 when the weight is singular.
"""

import numpy as np

from wstokes import _kernels as kernels
from wstokes.errors import PointLocationError
from wstokes.mesh import _EDGE_MIDS, _barycentric, locate_point
from wstokes.quadrature import quadrature


def p2_shape_values(lam):
    """P2 shape values at barycentric points, shape (..., 10)."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty(lam.shape[:-1] + (10,))
    for i in range(4):
        out[..., i] = lam[..., i] * (2.0 * lam[..., i] - 1.0)
    for e, (i, j) in enumerate(_EDGE_MIDS):
        out[..., 4 + e] = 4.0 * lam[..., i] * lam[..., j]
    return out


def p2_shape_derivs(lam):
    """P2 shape derivatives w.r.t. barycentric coords, shape (..., 10, 4)."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape[:-1] + (10, 4))
    for i in range(4):
        out[..., i, i] = 4.0 * lam[..., i] - 1.0
    for e, (i, j) in enumerate(_EDGE_MIDS):
        out[..., 4 + e, i] = 4.0 * lam[..., j]
        out[..., 4 + e, j] = 4.0 * lam[..., i]
    return out


class TaylorHoodSpace:
    """P2 velocity / P1 pressure pair on a tetrahedral mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        t = mesh.tets
        edges = np.concatenate([t[:, (i, j)] for i, j in _EDGE_MIDS])
        edges = np.sort(edges, axis=1)
        self.edges, inverse = np.unique(edges, axis=0, return_inverse=True)
        self.n_edges = self.edges.shape[0]
        nv = mesh.n_vertices
        mid_ids = nv + inverse.reshape(6, -1).T.astype(np.int64)
        self.elem_nodes = np.concatenate([t.astype(np.int64), mid_ids], axis=1).astype(
            np.int32
        )
        self.node_coords = np.concatenate(
            [
                mesh.vertices,
                0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]]),
            ]
        )
        self.n_nodes = nv + self.n_edges
        self.n_velocity_dofs = 3 * self.n_nodes
        self.n_pressure_dofs = nv
        self._geometry = None
        self._boundary_nodes = None

    # -- geometry tables -------------------------------------------------
    def geometry(self):
        """Barycentric gradients (T, 4, 3) and 6*volume (T,)."""
        if self._geometry is None:
            v = self.mesh.tet_vertices()
            e = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # columns are edges
            det = np.linalg.det(e)
            inv = np.linalg.inv(e)  # row i is grad lambda_{i+1}
            gradL = np.empty((self.mesh.n_tets, 4, 3))
            gradL[:, 1:] = inv
            gradL[:, 0] = -inv.sum(axis=1)
            self._geometry = (np.ascontiguousarray(gradL), np.abs(det))
        return self._geometry

    @property
    def boundary_nodes(self):
        """Node ids (vertices and edge midpoints) on the boundary."""
        if self._boundary_nodes is None:
            faces = self.mesh.boundary_faces
            verts = np.unique(faces)
            face_edges = np.concatenate(
                [faces[:, (0, 1)], faces[:, (0, 2)], faces[:, (1, 2)]]
            )
            face_edges = np.unique(np.sort(face_edges, axis=1), axis=0)
            keys = self.edges[:, 0].astype(np.int64) * self.n_nodes + self.edges[:, 1]
            want = face_edges[:, 0].astype(np.int64) * self.n_nodes + face_edges[:, 1]
            pos = np.searchsorted(keys, want)
            if not np.all(keys[pos] == want):
                raise RuntimeError("boundary edge missing from edge table")
            self._boundary_nodes = np.unique(
                np.concatenate([verts, self.mesh.n_vertices + pos])
            )
        return self._boundary_nodes

    @property
    def boundary_velocity_dofs(self):
        nodes = self.boundary_nodes
        return (3 * nodes[:, None] + np.arange(3)[None, :]).ravel()

    @property
    def interior_velocity_dofs(self):
        mask = np.ones(self.n_velocity_dofs, dtype=bool)
        mask[self.boundary_velocity_dofs] = False
        return np.flatnonzero(mask)

    def quad_points(self, rule):
        """Physical quadrature points, shape (T, nq, 3)."""
        return np.einsum("qa,tad->tqd", rule.points, self.mesh.tet_vertices())


class FEFunction:
    """Finite element function: role 'velocity' (P2^3) or 'pressure' (P1)."""

    def __init__(self, space, role, coeffs=None):
        if role not in ("velocity", "pressure"):
            raise ValueError(f"unknown role {role!r}")
        self.space = space
        self.role = role
        n = space.n_velocity_dofs if role == "velocity" else space.n_pressure_dofs
        if coeffs is None:
            coeffs = np.zeros(n)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (n,):
            raise ValueError(f"expected {n} coefficients, got {coeffs.shape}")
        self.coeffs = coeffs

    @property
    def node_values(self):
        """Velocity nodal values as (n_nodes, 3)."""
        if self.role != "velocity":
            raise ValueError("node_values is velocity-only")
        return self.coeffs.reshape(-1, 3)

    def __sub__(self, other):
        if self.space is not other.space or self.role != other.role:
            raise ValueError("operands live in different spaces")
        return FEFunction(self.space, self.role, self.coeffs - other.coeffs)

    def __add__(self, other):
        if self.space is not other.space or self.role != other.role:
            raise ValueError("operands live in different spaces")
        return FEFunction(self.space, self.role, self.coeffs + other.coeffs)

    def __mul__(self, scalar):
        return FEFunction(self.space, self.role, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def eval_at_bary(self, tet_ids, lam):
        """Evaluate at barycentric points of given elements."""
        if self.role == "velocity":
            shp = p2_shape_values(lam)  # (N, 10)
            vals = self.node_values[self.space.elem_nodes[tet_ids]]  # (N, 10, 3)
            return np.einsum("nk,nkc->nc", shp, vals)
        lam = np.asarray(lam, dtype=float)
        vals = self.coeffs[self.space.mesh.tets[tet_ids]]  # (N, 4)
        return np.einsum("na,na->n", lam, vals)

    def grad_at_bary(self, tet_ids, lam):
        """Gradient at barycentric points: (N,3,3) velocity, (N,3) pressure."""
        gradL, _ = self.space.geometry()
        g = gradL[tet_ids]  # (N, 4, 3)
        if self.role == "velocity":
            dsh = p2_shape_derivs(lam)  # (N, 10, 4)
            phys = np.einsum("nka,nab->nkb", dsh, g)  # (N, 10, 3)
            vals = self.node_values[self.space.elem_nodes[tet_ids]]
            return np.einsum("nkc,nkb->ncb", vals, phys)
        vals = self.coeffs[self.space.mesh.tets[tet_ids]]
        return np.einsum("na,nab->nb", vals, g)

    def __call__(self, point):
        tid, lam = locate_point(self.space.mesh, point)
        out = self.eval_at_bary(np.array([tid]), lam[None, :])[0]
        return out

    def copy(self):
        return FEFunction(self.space, self.role, self.coeffs.copy())


def interpolate(space, field, role="velocity"):
    """Nodal interpolation of a callable field.

    Velocity fields map (N, 3) points to (N, 3) values; pressure fields
    map points to scalars.  P2 (resp. P1) data is reproduced exactly.
    """
    if role == "velocity":
        vals = np.asarray(field(space.node_coords), dtype=float)
        if vals.shape != (space.n_nodes, 3):
            raise ValueError("velocity field must return shape (n_points, 3)")
        return FEFunction(space, "velocity", vals.ravel())
    vals = np.asarray(field(space.mesh.vertices), dtype=float).reshape(-1)
    return FEFunction(space, "pressure", vals)


def integral(func):
    """Exact integral of an FE function over the domain."""
    space = func.space
    vols = space.mesh.volumes()
    if func.role == "pressure":
        return float(np.sum(vols * func.coeffs[space.mesh.tets].mean(axis=1)))
    # P2 exact: vertex weight 0, edge weight 1/5 ... use quadrature instead
    rule = quadrature(2)
    vals = func.node_values[space.elem_nodes]  # (T, 10, 3)
    shp = p2_shape_values(rule.points)  # (nq, 10)
    _, vols6 = space.geometry()
    contrib = np.einsum("qk,tkc,q,t->c", shp, vals, rule.weights, vols6)
    return contrib


def zero_mean_project(p):
    """Subtract the mean; the result integrates to zero exactly (P1)."""
    if p.role != "pressure":
        raise ValueError("zero_mean_project acts on pressure functions")
    vol = float(np.sum(p.space.mesh.volumes()))
    mean = integral(p) / vol
    return FEFunction(p.space, "pressure", p.coeffs - mean)


def _derivative_values(u, rule, derivative, chunk):
    """Yield (slice, values) with values (Tc, nq, ...) per element chunk."""
    space = u.space
    gradL, vols6 = space.geometry()
    nT = space.mesh.n_tets
    dsh = p2_shape_derivs(rule.points)
    shp = p2_shape_values(rule.points)
    for start in range(0, nT, chunk):
        sl = slice(start, min(nT, start + chunk))
        if u.role == "velocity":
            if derivative == "none":
                vals = u.node_values[space.elem_nodes[sl]]
                yield sl, np.einsum("qk,tkc->tqc", shp, vals)
            else:
                g = kernels.velocity_gradients(
                    u.node_values, space.elem_nodes[sl], gradL[sl], dsh
                )
                if derivative == "symmetric_gradient":
                    g = 0.5 * (g + np.swapaxes(g, 2, 3))
                yield sl, g
        else:
            if derivative == "none":
                vals = u.coeffs[space.mesh.tets[sl]]
                yield sl, np.einsum("qa,ta->tq", rule.points, vals)
            elif derivative == "gradient":
                vals = u.coeffs[space.mesh.tets[sl]]
                g = np.einsum("ta,tab->tb", vals, gradL[sl])
                yield sl, np.broadcast_to(
                    g[:, None, :], (g.shape[0], rule.npoints, 3)
                ).copy()
            else:
                raise ValueError("pressure supports derivative 'none' or 'gradient'")


def weighted_norm(
    u,
    weight=None,
    q=2.0,
    derivative="none",
    quad_order=None,
    exact=None,
    chunk=8192,
):
    """Weighted L^q norm of D(u) or D(u) - exact over the mesh.

    ``derivative`` is one of 'none', 'gradient', 'symmetric_gradient';
    tensor magnitudes are Frobenius norms.  ``exact`` (optional) is a
    vectorized callable of physical points returning the matching shape
    (values for 'none', full gradients for the derivative norms; the
    symmetric part is taken automatically).  ``weight`` of None means
    the unit weight.
    """
    if derivative not in ("none", "gradient", "symmetric_gradient"):
        raise ValueError(f"unknown derivative {derivative!r}")
    if q <= 0:
        raise ValueError("q must be positive")
    if quad_order is None:
        singular = weight is not None and getattr(weight, "is_singular", False)
        quad_order = 6 if singular else 5
    rule = quadrature(quad_order)
    space = u.space
    _, vols6 = space.geometry()
    total = 0.0
    bary = rule.points
    for sl, vals in _derivative_values(u, rule, derivative, chunk):
        if exact is not None:
            pts = np.einsum("qa,tad->tqd", bary, space.mesh.tet_vertices()[sl])
            flat = pts.reshape(-1, 3)
            ex = np.asarray(exact(flat), dtype=float).reshape(vals.shape)
            if derivative == "symmetric_gradient":
                ex = 0.5 * (ex + np.swapaxes(ex, 2, 3))
            vals = vals - ex
        mag = np.sqrt(np.sum(vals.reshape(vals.shape[0], vals.shape[1], -1) ** 2, axis=2))
        if weight is not None:
            pts = np.einsum("qa,tad->tqd", bary, space.mesh.tet_vertices()[sl])
            w = weight.eval(pts.reshape(-1, 3)).reshape(mag.shape)
        else:
            w = 1.0
        total += float(np.einsum("tq,q,t->", w * mag**q, rule.weights, vols6[sl]))
    return total ** (1.0 / q)


class RegularizedDelta:
    """Quadratic point-source kernel supported on one element.

    The function integrates to one, reproduces the point value v_h(z) of
    every P2 function against integration, and scales like h^-3 in the
    max norm.
    """

    def __init__(self, space, center, tet_id, local_coeffs):
        self.space = space
        self.center = np.asarray(center, dtype=float)
        self.tet_id = int(tet_id)
        self.local_coeffs = np.asarray(local_coeffs, dtype=float)

    def eval_at_bary(self, lam):
        return p2_shape_values(lam) @ self.local_coeffs

    def eval(self, points):
        """Evaluate at physical points (zero outside the host element)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lam = _barycentric(self.space.mesh, np.full(len(points), self.tet_id), points)
        out = np.where(
            np.all(lam >= -1e-12, axis=1), self.eval_at_bary(lam), 0.0
        )
        return out

    def integrate(self):
        """Integral over the mesh (== 1 up to quadrature roundoff)."""
        rule = quadrature(4)
        _, vols6 = self.space.geometry()
        vals = self.eval_at_bary(rule.points)
        return float(np.sum(vals * rule.weights) * vols6[self.tet_id])

    def integrate_against(self, v):
        """Integral of delta * v for a P2 scalar sampled from ``v``.

        ``v`` is a velocity FEFunction and a component index pair, or a
        callable; here we accept an (10,) array of local P2 coefficients.
        """
        rule = quadrature(4)
        _, vols6 = self.space.geometry()
        shp = p2_shape_values(rule.points)
        dvals = shp @ self.local_coeffs
        vvals = shp @ np.asarray(v, dtype=float)
        return float(np.sum(dvals * vvals * rule.weights) * vols6[self.tet_id])

    def norms(self):
        """L1, L2, Linf norms over the host element."""
        rule = quadrature(6)
        _, vols6 = self.space.geometry()
        vals = self.eval_at_bary(rule.points)
        l1 = float(np.sum(np.abs(vals) * rule.weights) * vols6[self.tet_id])
        l2 = float(np.sqrt(np.sum(vals**2 * rule.weights) * vols6[self.tet_id]))
        grid = []
        m = 10
        for i in range(m + 1):
            for j in range(m + 1 - i):
                for k in range(m + 1 - i - j):
                    l = m - i - j - k
                    grid.append((i / m, j / m, k / m, l / m))
        linf = float(np.max(np.abs(self.eval_at_bary(np.array(grid)))))
        return {"L1": l1, "L2": l2, "Linf": linf}


def build_regularized_delta(space, center):
    """Construct the element-local quadratic point source at ``center``.

    The center must be strictly interior to its containing element:
    on a face or edge the host is ambiguous and the construction is
    rejected with ValueError. The distance from the center to the
    nearest host-element face is recorded as ``min_face_distance``.
    """
    center = np.asarray(center, dtype=float)
    tid, lam = locate_point(space.mesh, center)
    v = space.mesh.tet_vertices()[tid]
    vol = space.mesh.volumes()[tid]
    # distance to face i = lambda_i * 3 vol / area_i
    dists = []
    for i in range(4):
        tri = np.delete(v, i, axis=0)
        area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
        dists.append(lam[i] * 3.0 * vol / area)
    if min(dists) <= 1e-8 * space.mesh.h_max:
        raise ValueError(
            "point source anchor lies on or too close to an element face "
            f"(clearance {min(dists):.3e}); choose a strictly interior point"
        )
    rule = quadrature(4)
    shp = p2_shape_values(rule.points)
    _, vols6 = space.geometry()
    mass = np.einsum("qk,ql,q->kl", shp, shp, rule.weights) * vols6[tid]
    rhs = p2_shape_values(lam[None, :])[0]
    coeffs = np.linalg.solve(mass, rhs)
    delta = RegularizedDelta(space, center, tid, coeffs)
    delta.min_face_distance = float(min(dists))
    return delta
