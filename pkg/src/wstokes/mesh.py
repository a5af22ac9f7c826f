"""Conforming tetrahedral meshes of the unit cube.

Meshes are immutable value objects: vertices, positively oriented
tetrahedra, derived boundary faces, the longest edge ``h_max``, and a
refinement level counter.  ``build_cube_mesh`` produces the Kuhn
6-tets-per-subcube triangulation; ``refine_uniform`` performs red
refinement into 8 children with a fixed interior-diagonal convention so
that ``h_max`` halves exactly.  A refinement lineage (child -> parent
element index) is kept so functions on a coarse mesh can be evaluated on
descendant meshes without point searches.
"""

import hashlib
import itertools

import numpy as np

from wstokes.errors import PointLocationError

_PERMS = list(itertools.permutations((0, 1, 2)))

# Red refinement: 4 corner children plus 4 octahedron children around an
# interior diagonal.  The diagonal convention is fixed: the shortest of
# the three midpoint diagonals, ties broken by the listed priority; on
# Kuhn-lattice tets this keeps children similar so h_max halves exactly.
_EDGE_MIDS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_CORNER_CHILDREN = (
    (0, 4, 5, 6),
    (4, 1, 7, 8),
    (5, 7, 2, 9),
    (6, 8, 9, 3),
)
# local midpoint ids: 4=m01 5=m02 6=m03 7=m12 8=m13 9=m23
_DIAGONALS = ((4, 9), (5, 8), (6, 7))
# octahedron children for each diagonal choice: diagonal plus one edge of
# the equatorial cycle around it
_OCTA_CHILDREN = (
    ((4, 9, 5, 6), (4, 9, 6, 8), (4, 9, 8, 7), (4, 9, 7, 5)),
    ((5, 8, 4, 6), (5, 8, 6, 9), (5, 8, 9, 7), (5, 8, 7, 4)),
    ((6, 7, 4, 5), (6, 7, 5, 9), (6, 7, 9, 8), (6, 7, 8, 4)),
)


class TetMesh:
    """Immutable conforming tetrahedral mesh."""

    def __init__(self, vertices, tets, level=0, parents=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.tets = np.ascontiguousarray(tets, dtype=np.int32)
        self.level = int(level)
        self.parents = None if parents is None else np.asarray(parents, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (n, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise ValueError("tets must have shape (m, 4)")
        self.vertices.setflags(write=False)
        self.tets.setflags(write=False)
        self._volumes = None
        self._boundary_faces = None
        self._h_max = None

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_tets(self):
        return self.tets.shape[0]

    def tet_vertices(self):
        """Vertex coordinates per element, shape (m, 4, 3)."""
        return self.vertices[self.tets]

    def volumes(self):
        if self._volumes is None:
            v = self.tet_vertices()
            e = v[:, 1:] - v[:, :1]
            self._volumes = np.linalg.det(e) / 6.0
        return self._volumes

    @property
    def h_max(self):
        if self._h_max is None:
            v = self.tet_vertices()
            h = 0.0
            for i, j in _EDGE_MIDS:
                h = max(h, float(np.max(np.linalg.norm(v[:, i] - v[:, j], axis=1))))
            self._h_max = h
        return self._h_max

    @property
    def boundary_faces(self):
        """Faces owned by exactly one tet, as sorted vertex triples."""
        if self._boundary_faces is None:
            faces = self._all_faces()
            order = np.lexsort(faces.T[::-1])
            faces = faces[order]
            is_dup = np.zeros(len(faces), dtype=bool)
            same = np.all(faces[1:] == faces[:-1], axis=1)
            is_dup[1:] |= same
            is_dup[:-1] |= same
            self._boundary_faces = faces[~is_dup]
        return self._boundary_faces

    def _all_faces(self):
        t = self.tets
        faces = np.concatenate(
            [t[:, (1, 2, 3)], t[:, (0, 2, 3)], t[:, (0, 1, 3)], t[:, (0, 1, 2)]]
        )
        return np.sort(faces, axis=1)

    def audit(self):
        """Check orientation, conformity, and volume partition.

        Returns a dict of measured quantities; raises ValueError on a
        violated invariant.
        """
        vols = self.volumes()
        if np.any(vols <= 0):
            raise ValueError("negatively oriented or degenerate tetrahedron")
        faces = self._all_faces()
        order = np.lexsort(faces.T[::-1])
        faces = faces[order]
        same = np.all(faces[1:] == faces[:-1], axis=1)
        # multiplicity of each distinct face from run lengths
        boundaries = np.flatnonzero(np.r_[True, ~same, True])
        mults = np.diff(boundaries)
        if np.any(mults > 2):
            raise ValueError("non-conforming mesh: face shared by more than two tets")
        total = float(vols.sum())
        return {
            "volume_total": total,
            "n_boundary_faces": int(np.sum(mults == 1)),
            "n_interior_faces": int(np.sum(mults == 2)),
            "min_volume": float(vols.min()),
        }

    def content_hash(self):
        """Stable hash of the serialized mesh content."""
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


def build_cube_mesh(n):
    """Kuhn triangulation of the unit cube with n^3 subcubes, 6 tets each.

    All tets of a subcube share its main diagonal; h_max = sqrt(3)/n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    side = np.arange(n + 1) / n
    gx, gy, gz = np.meshgrid(side, side, side, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    idx = np.arange(n)
    ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    tets = np.empty((6 * n**3, 4), dtype=np.int32)
    row = 0
    for perm in _PERMS:
        steps = np.zeros((4, 3), dtype=np.int64)
        for s, axis in enumerate(perm):
            steps[s + 1] = steps[s]
            steps[s + 1, axis] += 1
        corners = [
            vid(ii + d[0], jj + d[1], kk + d[2]) for d in steps
        ]  # 4 arrays of length n^3
        tet = np.stack(corners, axis=1)
        # odd permutations give negative orientation; swap two vertices
        sign = (-1) ** sum(
            1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b]
        )
        if sign < 0:
            tet = tet[:, (0, 2, 1, 3)]
        tets[row : row + n**3] = tet
        row += n**3
    mesh = TetMesh(vertices, tets, level=0)
    return mesh


def refine_uniform(mesh):
    """Red refinement: each tet into 8 children, h_max exactly halved."""
    t = mesh.tets
    nv = mesh.n_vertices
    edges = np.concatenate([t[:, (i, j)] for i, j in _EDGE_MIDS])
    edges = np.sort(edges, axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    midpoints = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.concatenate([mesh.vertices, midpoints])
    # local node table per parent: 0..3 original vertices, 4..9 edge midpoints
    mid_ids = nv + inverse.reshape(6, -1).T  # (m, 6)
    nodes = np.concatenate([t, mid_ids], axis=1)  # (m, 10)
    # fixed diagonal convention: shortest midpoint diagonal, ties broken
    # by listed priority (argmin takes the first minimum)
    coords = vertices[nodes]  # (m, 10, 3)
    diag_len = np.stack(
        [np.linalg.norm(coords[:, a] - coords[:, b], axis=1) for a, b in _DIAGONALS],
        axis=1,
    )
    choice = np.argmin(np.round(diag_len / diag_len.min(axis=1, keepdims=True), 12), axis=1)
    children = []
    parents = []
    parent_range = np.arange(mesh.n_tets, dtype=np.int32)
    for child in _CORNER_CHILDREN:
        children.append(nodes[:, child])
        parents.append(parent_range)
    for d in range(3):
        sel = choice == d
        if not np.any(sel):
            continue
        for child in _OCTA_CHILDREN[d]:
            children.append(nodes[sel][:, child])
            parents.append(parent_range[sel])
    tets = np.concatenate(children)
    parent_ids = np.concatenate(parents)
    # enforce positive orientation deterministically
    v = vertices[tets]
    vols = np.linalg.det(v[:, 1:] - v[:, :1])
    flip = vols < 0
    tets[flip] = tets[flip][:, (0, 2, 1, 3)]
    return TetMesh(vertices, tets, level=mesh.level + 1, parents=parent_ids)


def _barycentric(mesh, tet_ids, points):
    """Barycentric coordinates of points w.r.t. the given tets."""
    v = mesh.vertices[mesh.tets[tet_ids]]
    T = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # (k, 3, 3) columns m1..m3
    rhs = points - v[:, 0]
    lam = np.linalg.solve(T, rhs[..., None])[..., 0]
    lam0 = 1.0 - lam.sum(axis=1, keepdims=True)
    return np.concatenate([lam0, lam], axis=1)


def locate_point(mesh, point, tol=1e-10):
    """Element index and barycentric coordinates containing ``point``.

    Deterministic: scans elements in index order and returns the first
    tet whose barycentric coordinates are all >= -tol, so ties on shared
    faces resolve to the lowest element index.
    """
    point = np.asarray(point, dtype=float)
    lam = _barycentric(mesh, np.arange(mesh.n_tets), point[None, :])
    inside = np.all(lam >= -tol, axis=1)
    hits = np.flatnonzero(inside)
    if len(hits) == 0:
        raise PointLocationError(f"point {point.tolist()} outside mesh (tol={tol})")
    tid = int(hits[0])
    return tid, lam[tid]


def locate_points(mesh, points, tol=1e-10):
    """Vectorized location of many points; returns (tet_ids, barycentrics)."""
    points = np.asarray(points, dtype=float)
    npts = points.shape[0]
    tet_ids = np.full(npts, -1, dtype=np.int64)
    bary = np.zeros((npts, 4))
    # bounding-box prefilter per element, processed in index order so the
    # first (lowest-index) containing tet wins
    v = mesh.tet_vertices()
    lo = v.min(axis=1) - tol
    hi = v.max(axis=1) + tol
    pending = np.arange(npts)
    # iterate over candidate tets per point via chunked broadcasting
    chunk = max(1, int(2e7 // max(1, npts)))
    for start in range(0, mesh.n_tets, chunk):
        if pending.size == 0:
            break
        sl = slice(start, min(mesh.n_tets, start + chunk))
        inbox = np.all(
            (points[pending, None, :] >= lo[None, sl]) & (points[pending, None, :] <= hi[None, sl]),
            axis=2,
        )
        for local, p in enumerate(pending):
            cands = np.flatnonzero(inbox[local]) + start
            if cands.size == 0:
                continue
            lam = _barycentric(mesh, cands, points[p][None, :].repeat(len(cands), 0))
            ok = np.all(lam >= -tol, axis=1)
            hit = np.flatnonzero(ok)
            if hit.size:
                tet_ids[p] = cands[hit[0]]
                bary[p] = lam[hit[0]]
        pending = pending[tet_ids[pending] < 0]
    if np.any(tet_ids < 0):
        bad = points[np.flatnonzero(tet_ids < 0)[0]]
        raise PointLocationError(f"point {bad.tolist()} outside mesh (tol={tol})")
    return tet_ids, bary


def serialize(mesh):
    """ASCII form: header line, vertex lines, tet lines (bit-exact floats)."""
    lines = [f"tetmesh {mesh.n_vertices} {mesh.n_tets}"]
    for x, y, z in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r} {float(z)!r}")
    for a, b, c, d in mesh.tets:
        lines.append(f"{int(a)} {int(b)} {int(c)} {int(d)}")
    return "\n".join(lines) + "\n"


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(serialize(mesh))


def read_mesh(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "tetmesh":
            raise ValueError("not a tetmesh file: bad header")
        nv, nt = int(header[1]), int(header[2])
        vertices = np.empty((nv, 3))
        for i in range(nv):
            vertices[i] = [float(tok) for tok in fh.readline().split()]
        tets = np.empty((nt, 4), dtype=np.int32)
        for i in range(nt):
            tets[i] = [int(tok) for tok in fh.readline().split()]
    return TetMesh(vertices, tets)
