"""Linear Stokes saddle-point problems on Taylor-Hood spaces.

Assembly produces node-block matrices: the velocity operator A holds
3x3 blocks over the scalar P2 adjacency pattern (the integrand is the
doubled symmetric-gradient contraction, so A represents
2*mu*int eps(u):eps(v)), and B holds the pressure-velocity coupling
b(v, p) = -int p div v.  Homogeneous Dirichlet velocity conditions are
imposed by dropping boundary nodes before assembly, which keeps both
the block structure and the symmetry exact.

The zero-mean pressure constraint is a single Lagrange multiplier row,
so the solved system is

    [ A   B^T  0 ] [u]   [F]
    [ B   0    m ] [p] = [G]
    [ 0   m^T  0 ] [l]   [0]

with m the vector of pressure basis integrals.  A sparse direct
factorization handles moderate sizes; larger systems run MINRES with a
block-diagonal preconditioner (algebraic multigrid on A, factorized
pressure mass, one scalar slot).
"""

import time
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from wstokes import _kernels as kernels
from wstokes.errors import NonConvergenceError, PointLocationError, SolverError
from wstokes.mesh import locate_point
from wstokes.quadrature import quadrature
from wstokes.spaces import FEFunction, p2_shape_derivs, p2_shape_values

_CHUNK = 8192  # elements per assembly slab; bounds temporaries


def _interior_node_map(space):
    """Reduced numbering over interior nodes; boundary nodes map to -1."""
    n_nodes = space.n_nodes
    rmap = np.full(n_nodes, -1, dtype=np.int64)
    mask = np.ones(n_nodes, dtype=bool)
    mask[space.boundary_nodes] = False
    interior = np.flatnonzero(mask)
    rmap[interior] = np.arange(len(interior))
    return interior, rmap


def _block_pattern(space, rmap, n_int):
    """CSR block pattern over interior node pairs plus slot table.

    slots[t, a, b] indexes the (a, b) node pair of element t into the
    block data array; pairs touching a boundary node all point at one
    trailing dump block that is discarded after accumulation.
    """
    rn = rmap[space.elem_nodes]  # (T, 10)
    keys = rn[:, :, None] * n_int + rn[:, None, :]
    valid = (rn[:, :, None] >= 0) & (rn[:, None, :] >= 0)
    uniq = np.unique(keys[valid])
    slots = np.searchsorted(uniq, keys)
    slots[~valid] = len(uniq)
    rows = (uniq // n_int).astype(np.int32)
    cols = (uniq % n_int).astype(np.int32)
    counts = np.bincount(rows, minlength=n_int)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    return slots, cols, indptr, len(uniq)


def _accumulate_stiffness(space, slots, n_blocks, quad_order, mode, coeff=None):
    """Run the block-stiffness kernel chunk-wise; returns (nb+1,3,3)."""
    rule = quadrature(quad_order)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    data = np.zeros((n_blocks + 1, 3, 3))
    T = space.mesh.n_tets
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        c = None if coeff is None else np.ascontiguousarray(coeff[sl])
        kernels.accumulate_block_stiffness(
            gradL[sl], vols6[sl], rule.weights, dshape, c, slots[sl], data, mode
        )
    return data


class StokesSystem:
    """Assembled saddle operator with loads attached later.

    A is the 3x3-block velocity matrix over interior nodes (the form
    2*mu*int eps:eps), B the pressure coupling -int p div v restricted
    to interior velocity dofs, mass_vector the pressure basis integrals
    and pressure_mass the consistent P1 mass matrix.
    """

    def __init__(self, space, mu, A, B, mass_vector, pressure_mass, interior, rmap):
        self.space = space
        self.mu = float(mu)
        self.A = A
        self.B = B
        self.mass_vector = mass_vector
        self.pressure_mass = pressure_mass
        self.interior_nodes = interior
        self.node_rmap = rmap
        self.F = None
        self.G = None

    @property
    def n_interior_dofs(self):
        return 3 * len(self.interior_nodes)

    @property
    def n_pressure(self):
        return self.space.n_pressure_dofs

    def reduce_velocity(self, F_full):
        """Restrict a full velocity load to interior dofs."""
        return np.asarray(F_full, dtype=float).reshape(-1, 3)[self.interior_nodes].ravel()

    def expand_velocity(self, u_int):
        full = np.zeros((self.space.n_nodes, 3))
        full[self.interior_nodes] = np.asarray(u_int).reshape(-1, 3)
        return full.ravel()

    def set_loads(self, F_full=None, G=None):
        self.F = (
            np.zeros(self.n_interior_dofs) if F_full is None else self.reduce_velocity(F_full)
        )
        self.G = np.zeros(self.n_pressure) if G is None else np.asarray(G, dtype=float)
        return self


def assemble_stokes(space, mu, quad_order=4):
    """Assemble A = 2*mu*int eps(u):eps(v) and B = -int p div v.

    The integrands are quadratic polynomials, so the default rule is
    already exact; boundary velocity nodes are eliminated symmetrically
    by never assigning them dofs.
    """
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    interior, rmap = _interior_node_map(space)
    n_int = len(interior)
    slots, cols, indptr, n_blocks = _block_pattern(space, rmap, n_int)
    data = _accumulate_stiffness(space, slots, n_blocks, quad_order, mode=0)
    A = sp.bsr_matrix(
        (mu * data[:n_blocks], cols, indptr), shape=(3 * n_int, 3 * n_int)
    )

    rule = quadrature(quad_order)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    tets = space.mesh.tets
    T = space.mesh.n_tets
    n_press = space.n_pressure_dofs
    width = 3 * n_int + 1  # one dump column for boundary dofs
    chunk_keys = []
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        rn = rmap[space.elem_nodes[sl]]
        # columns 3*rn + d for interior nodes; boundary nodes collapse
        # onto the single dump column for every component
        base = np.where(rn >= 0, 3 * rn, 3 * n_int)
        colk = base[:, None, :, None] + np.where(rn >= 0, 1, 0)[:, None, :, None] * np.arange(3)[
            None, None, None, :
        ]
        keys = tets[sl][:, :, None, None].astype(np.int64) * width + colk
        chunk_keys.append(np.unique(keys))
    uniqB = np.unique(np.concatenate(chunk_keys))
    dataB = np.zeros(len(uniqB))
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        trip = kernels.divergence_triplets(
            gradL[sl], vols6[sl], rule.weights, dshape, rule.points
        )
        rn = rmap[space.elem_nodes[sl]]
        base = np.where(rn >= 0, 3 * rn, 3 * n_int)
        colk = base[:, None, :, None] + np.where(rn >= 0, 1, 0)[:, None, :, None] * np.arange(3)[
            None, None, None, :
        ]
        keys = tets[sl][:, :, None, None].astype(np.int64) * width + colk
        pos = np.searchsorted(uniqB, keys)
        np.add.at(dataB, pos.ravel(), (-trip).ravel())
    rowsB = (uniqB // width).astype(np.int64)
    colsB = (uniqB % width).astype(np.int64)
    keep = colsB < 3 * n_int
    B = sp.csr_matrix(
        (dataB[keep], (rowsB[keep], colsB[keep])), shape=(n_press, 3 * n_int)
    )

    vols = space.mesh.volumes()
    m = np.zeros(n_press)
    np.add.at(m, tets.ravel(), np.repeat(vols / 4.0, 4))
    local_mass = (np.ones((4, 4)) + np.eye(4)) / 20.0
    rows = np.repeat(tets, 4, axis=1).ravel()
    colsM = np.tile(tets, (1, 4)).ravel()
    vals = (vols[:, None, None] * local_mass).ravel()
    Mp = sp.coo_matrix((vals, (rows, colsM)), shape=(n_press, n_press)).tocsr()
    return StokesSystem(space, mu, A, B, m, Mp, interior, rmap)


def assemble_rhs_divergence_form(space, f, quad_order=5):
    """Load vector F_i = int f : grad(phi_i) for a tensor field f.

    f maps an (N,3) point array to (N,3,3) tensors; row index is the
    vector component of the test function, column the derivative.
    """
    rule = quadrature(quad_order)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    verts = space.mesh.tet_vertices()
    F = np.zeros((space.n_nodes, 3))
    T = space.mesh.n_tets
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        g = np.einsum("qka,tab->tqkb", dshape, gradL[sl])
        pts = np.einsum("qa,tad->tqd", rule.points, verts[sl])
        fv = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(
            pts.shape[0], pts.shape[1], 3, 3
        )
        w = vols6[sl][:, None] * rule.weights[None, :]
        loc = np.einsum("tqcb,tqkb,tq->tkc", fv, g, w)
        np.add.at(F, space.elem_nodes[sl].ravel(), loc.reshape(-1, 3))
    return F.ravel()


def assemble_rhs_measure(space, z, amplitude):
    """Point-load vector F_i = amplitude * phi_i(z).

    This is the exact action of a Dirac measure on continuous test
    functions; no regularization is involved.
    """
    z = np.asarray(z, dtype=float)
    try:
        tid, lam = locate_point(space.mesh, z)
    except PointLocationError as exc:
        raise PointLocationError(f"measure anchor outside the mesh: {exc}") from exc
    amplitude = np.asarray(amplitude, dtype=float)
    shp = p2_shape_values(lam[None, :])[0]
    F = np.zeros((space.n_nodes, 3))
    F[space.elem_nodes[tid]] += shp[:, None] * amplitude[None, :]
    return F.ravel()


class StokesSolution:
    """Velocity, zero-mean pressure, and solver statistics."""

    def __init__(self, velocity, pressure, multiplier, stats):
        self.velocity = velocity
        self.pressure = pressure
        self.multiplier = multiplier
        self.stats = stats


def _saddle_operator(A, B, m):
    nu, npress = A.shape[0], B.shape[0]
    n = nu + npress + 1
    BT = B.T.tocsr()

    def mv(x):
        u, p, lam = x[:nu], x[nu : nu + npress], x[-1]
        out = np.empty(n)
        out[:nu] = A @ u + BT @ p
        out[nu : nu + npress] = B @ u + m * lam
        out[-1] = m @ p
        return out

    return spla.LinearOperator((n, n), matvec=mv)


def _block_preconditioner(system):
    import pyamg

    A = system.A.tocsr()
    coords = system.space.node_coords[system.interior_nodes]
    x, y, z = coords.T
    nb = len(coords)
    modes = np.zeros((3 * nb, 6))
    modes[0::3, 0] = 1.0
    modes[1::3, 1] = 1.0
    modes[2::3, 2] = 1.0
    modes[0::3, 3], modes[1::3, 3] = -y, x
    modes[1::3, 4], modes[2::3, 4] = -z, y
    modes[0::3, 5], modes[2::3, 5] = z, -x
    ml = pyamg.smoothed_aggregation_solver(A, B=modes, max_coarse=400)
    amg = ml.aspreconditioner(cycle="V")
    mp_solve = spla.factorized(system.pressure_mass.tocsc())
    vol = float(system.mass_vector.sum())
    two_mu = 2.0 * system.mu
    nu, npress = A.shape[0], system.n_pressure

    def apply(x):
        out = np.empty_like(x)
        out[:nu] = amg @ x[:nu]
        out[nu : nu + npress] = two_mu * mp_solve(x[nu : nu + npress])
        out[-1] = two_mu * x[-1] / vol
        return out

    return spla.LinearOperator((nu + npress + 1, nu + npress + 1), matvec=apply)


def solve_saddle(system, method="auto", tol=1e-11, maxiter=2000, direct_limit=60_000):
    """Solve the saddle system with the attached loads.

    method 'direct' factorizes the full bordered matrix, 'minres' runs
    preconditioned MINRES, 'auto' picks by size.  Residuals of both
    equations are reported relative to the load (or the solution scale
    when the load vanishes) and checked against 1e-10.
    """
    if system.F is None:
        system.set_loads()
    A, B, m = system.A, system.B, system.mass_vector
    F, G = system.F, system.G
    nu, npress = A.shape[0], system.n_pressure
    n = nu + npress + 1
    if method == "auto":
        method = "direct" if n <= direct_limit else "minres"
    t0 = time.perf_counter()
    iterations = 0
    if method == "direct":
        K = sp.bmat(
            [
                [A, B.T, None],
                [B, None, m[:, None]],
                [None, m[None, :], None],
            ],
            format="csc",
        )
        rhs = np.concatenate([F, G, [0.0]])
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(
                f"saddle factorization failed ({exc}); the system may be "
                "singular, check boundary conditions"
            ) from exc
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("direct solve returned non-finite values")
    elif method == "minres":
        op = _saddle_operator(A, B, m)
        prec = _block_preconditioner(system)
        rhs = np.concatenate([F, G, [0.0]])
        hist = []
        x, info = spla.minres(
            op,
            rhs,
            M=prec,
            rtol=tol,
            maxiter=maxiter,
            callback=lambda xk: hist.append(1),
        )
        iterations = len(hist)
        if info != 0:
            res = float(np.linalg.norm(op @ x - rhs) / max(np.linalg.norm(rhs), 1e-30))
            raise NonConvergenceError(
                f"MINRES stopped with info={info} after {iterations} "
                f"iterations, relative residual {res:.3e}",
                trace=[res],
            )
    else:
        raise ValueError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - t0

    u_int, p, lam = x[:nu], x[nu : nu + npress], float(x[-1])
    # componentwise backward-error scaling so a vanishing load does not
    # collapse the denominator onto the residual itself
    absA, absB = abs(A), abs(B)
    au, av = np.abs(u_int), np.abs(p)
    scale_m = max(
        float(np.linalg.norm(absA @ au + absB.T @ av + np.abs(F))), 1e-30
    )
    res_m = float(np.linalg.norm(A @ u_int + B.T @ p - F)) / scale_m
    scale_d = max(
        float(np.linalg.norm(absB @ au + np.abs(m) * abs(lam) + np.abs(G))), 1e-30
    )
    res_d = float(np.linalg.norm(B @ u_int + m * lam - G)) / scale_d
    # exact zero-mean normalization on top of the multiplier constraint
    p = p - (m @ p) / m.sum()
    stats = {
        "backend": method,
        "iterations": iterations,
        "residual_momentum": res_m,
        "residual_divergence": res_d,
        "pressure_mean": float(m @ p),
        "multiplier": lam,
        "time": elapsed,
        "n_dofs": n,
    }
    u_full = system.expand_velocity(u_int)
    velocity = FEFunction(system.space, "velocity", u_full)
    pressure = FEFunction(system.space, "pressure", p)
    return StokesSolution(velocity, pressure, lam, stats)


def _projection_loads(space, u_exact_grad, p_exact, mu, quad_order=5):
    """Quadrature loads F(v) = 2 mu int eps(u):eps(v) - int p div v and
    G(r) = -int r div u for an exact pair given by its gradient and
    pressure closures."""
    rule = quadrature(quad_order)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    verts = space.mesh.tet_vertices()
    tets = space.mesh.tets
    F = np.zeros((space.n_nodes, 3))
    G = np.zeros(space.n_pressure_dofs)
    T = space.mesh.n_tets
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        g = np.einsum("qka,tab->tqkb", dshape, gradL[sl])
        pts = np.einsum("qa,tad->tqd", rule.points, verts[sl])
        flat = pts.reshape(-1, 3)
        gu = np.asarray(u_exact_grad(flat), dtype=float).reshape(
            pts.shape[0], pts.shape[1], 3, 3
        )
        eps = 0.5 * (gu + np.swapaxes(gu, 2, 3))
        pv = np.asarray(p_exact(flat), dtype=float).reshape(pts.shape[0], pts.shape[1])
        w = vols6[sl][:, None] * rule.weights[None, :]
        loc = np.einsum("tqcb,tqkb,tq->tkc", 2.0 * mu * eps, g, w)
        loc -= np.einsum("tq,tqkc,tq->tkc", pv, g, w)
        np.add.at(F, space.elem_nodes[sl].ravel(), loc.reshape(-1, 3))
        divu = np.trace(gu, axis1=2, axis2=3)
        locg = -np.einsum("tq,qa,tq->ta", divu, rule.points, w)
        np.add.at(G, tets[sl].ravel(), locg.ravel())
    return F.ravel(), G


def stokes_projection(space, u_exact_grad, p_exact, mu, system=None, method="auto"):
    """Discrete pair matching an exact solenoidal pair in both forms.

    The right sides are quadrature integrals against the exact pair:
    F(v) = 2 mu int eps(u):eps(v) - int p div v, G(r) = -int r div u.
    u_exact_grad returns full gradients (N,3,3); p_exact must be
    mean-zero.
    """
    if system is None:
        system = assemble_stokes(space, mu)
    F, G = _projection_loads(space, u_exact_grad, p_exact, mu)
    system.set_loads(F, G)
    return solve_saddle(system, method=method)


def green_rhs(space, delta, i, j, quad_order=5):
    """Load vector v -> int delta * eps(v)_{ij} over the host element."""
    if not (0 <= i <= 2 and 0 <= j <= 2):
        raise ValueError("component indices must be 0, 1 or 2")
    rule = quadrature(quad_order)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    t = delta.tet_id
    g = np.einsum("qka,ab->qkb", dshape, gradL[t])
    dv = p2_shape_values(rule.points) @ delta.local_coeffs
    w = rule.weights * vols6[t]
    F = np.zeros((space.n_nodes, 3))
    loc = np.zeros((10, 3))
    # eps(phi_k e_c)_{ij} = (delta_ci d_j phi_k + delta_cj d_i phi_k) / 2
    loc[:, i] += 0.5 * np.einsum("q,qk,q->k", dv, g[:, :, j], w)
    loc[:, j] += 0.5 * np.einsum("q,qk,q->k", dv, g[:, :, i], w)
    F[space.elem_nodes[t]] += loc
    return F.ravel()


def approximate_green(space, delta, i, j, mu, kappa=2.0, system=None, method="auto"):
    """Discrete Green pair for the stress component (i, j).

    Solves mu int eps(G):eps(v) - int q div v = int delta eps(v)_{ij}
    with divergence-free constraint; i, j are zero-based component
    indices.  The report profiles element averages of |eps(G_h)| over
    distance bands from the anchor, both in plain distance and in the
    regularized distance (|x-z|^2 + kappa^2 h^2)^(1/2).
    """
    if not (0 <= i <= 2 and 0 <= j <= 2):
        raise ValueError("component indices must be 0, 1 or 2")
    if system is None:
        system = assemble_stokes(space, mu)
    # the Green form is mu int eps:eps, half the assembled operator
    half = StokesSystem(
        space,
        system.mu,
        system.A * 0.5,
        system.B,
        system.mass_vector,
        system.pressure_mass,
        system.interior_nodes,
        system.node_rmap,
    )
    F = green_rhs(space, delta, i, j)
    half.set_loads(F, None)
    sol = solve_saddle(half, method=method)

    rule = quadrature(2)
    eps_mag = _element_eps_magnitude(sol.velocity, rule)
    verts = space.mesh.tet_vertices()
    centroids = verts.mean(axis=1)
    z = delta.center
    dist = np.linalg.norm(centroids - z, axis=1)
    h = space.mesh.h_max / np.sqrt(3.0)  # lattice spacing on Kuhn cube meshes
    sigma = np.sqrt(dist**2 + (kappa * h) ** 2)
    vols = space.mesh.volumes()
    # geometric band edges from the near field out to 80% of the farthest
    # centroid, so every band holds elements on any mesh fine enough to
    # separate 2h from the domain scale
    r0 = 2.0 * h
    r1 = 0.8 * float(dist.max())
    if r1 <= r0:
        raise ValueError(
            f"mesh too coarse to band the decay profile (2h = {r0:.3g} "
            f"reaches {r1 / 0.8:.3g})"
        )
    edges = r0 * (r1 / r0) ** (np.arange(4) / 3.0)
    bands = list(zip(edges[:-1], edges[1:]))

    def band_profile(r):
        prof = []
        for lo, hi in bands:
            mask = (r >= lo) & (r < hi)
            wsum = float(vols[mask].sum())
            avg = float((eps_mag[mask] * vols[mask]).sum() / wsum) if wsum > 0 else float("nan")
            prof.append({"band": (lo, hi), "average": avg, "n_elements": int(mask.sum())})
        return prof

    report = {
        "bands_distance": band_profile(dist),
        "bands_sigma": band_profile(sigma),
        "kappa": kappa,
        "h": h,
        "component": (i, j),
        "stats": sol.stats,
    }
    return sol.velocity, sol.pressure, report


def _element_eps_magnitude(u, rule):
    """Volume-averaged Frobenius norm of eps(u) per element."""
    space = u.space
    gradL, _ = space.geometry()
    dshape = p2_shape_derivs(rule.points)
    grads = kernels.velocity_gradients(
        u.node_values, space.elem_nodes, gradL, dshape
    )
    eps = 0.5 * (grads + np.swapaxes(grads, 2, 3))
    mag = np.sqrt(np.sum(eps**2, axis=(2, 3)))
    return np.einsum("tq,q->t", mag, rule.weights) * 6.0  # reference weights sum 1/6


class InfsupResult:
    """Discrete inf-sup value with solver diagnostics."""

    def __init__(self, beta, path, iterations, residual, details=None):
        self.beta = beta
        self.path = path
        self.iterations = iterations
        self.residual = residual
        self.details = details or {}

    def __float__(self):
        return float(self.beta)

    def __repr__(self):
        return f"InfsupResult(beta={self.beta:.6f}, path={self.path!r})"


def discrete_infsup(space, weight=None, q=2.0, n_probes=8, seed=0, inner="auto"):
    """Discrete inf-sup constant of the divergence coupling.

    For q = 2 with unit weight this is the eigenvalue path: beta^2 is
    the smallest nonzero eigenvalue of B K^{-1} B^T p = beta^2 M_p p
    with K the vector gradient stiffness (the norm in the quotient),
    restricted to zero-mean pressures.  Any other weight or q falls
    back to a probe family of pressures; each probe's quotient uses the
    velocity that represents its coupling in the q = 2 inner product,
    so the reported number samples the quotient rather than certifying
    the infimum.
    """
    unit = weight is None or getattr(weight, "kind", None) == "constant"
    system = assemble_stokes(space, 1.0)
    interior, rmap = system.interior_nodes, system.node_rmap
    n_int = len(interior)
    slots, cols, indptr, n_blocks = _block_pattern(space, rmap, n_int)
    data = _accumulate_stiffness(space, slots, n_blocks, 4, mode=1)
    # the gradient stiffness decouples by component: one scalar Laplacian
    # factorization serves all three columns of each inner solve
    Ks = sp.csr_matrix(
        (data[:n_blocks, 0, 0], cols, indptr), shape=(n_int, n_int)
    ).tocsc()
    B = system.B
    Mp = system.pressure_mass
    n_press = system.n_pressure

    if inner == "auto":
        inner = "direct" if Ks.shape[0] <= 400_000 else "cg"
    if inner == "direct":
        ks_solve = spla.factorized(Ks)
    else:
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(Ks.tocsr(), max_coarse=400)
        Kop = ml.aspreconditioner(cycle="V")

        def ks_solve(b):
            x, info = spla.cg(Ks, b, M=Kop, rtol=1e-12, maxiter=400)
            if info != 0:
                raise NonConvergenceError(f"inner CG stalled (info={info})")
            return x

    def Ksolve(b):
        # dofs are node-major with component minor: columns are components
        X = b.reshape(-1, 3)
        return np.stack([ks_solve(X[:, c]) for c in range(3)], axis=1).ravel()

    BT = B.T.tocsr()

    def schur(P):
        P = np.atleast_2d(P.T).T if P.ndim == 1 else P
        out = np.empty_like(P)
        for k in range(P.shape[1]):
            out[:, k] = B @ Ksolve(BT @ P[:, k])
        return out

    if unit and q == 2.0:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n_press, 3))
        Y = np.ones((n_press, 1))
        S = spla.LinearOperator((n_press, n_press), matvec=lambda v: schur(v).ravel(), matmat=schur)
        mp_solve = spla.factorized(Mp.tocsc())
        prec = spla.LinearOperator(
            (n_press, n_press), matvec=lambda v: mp_solve(v)
        )
        with warnings.catch_warnings():
            # the iteration is accepted or rejected on our own residual
            # check below; scipy's accuracy warning is just noise here
            warnings.simplefilter("ignore", UserWarning)
            vals, vecs, hist = spla.lobpcg(
                S,
                X,
                B=Mp,
                M=prec,
                Y=Y,
                largest=False,
                tol=1e-7,
                maxiter=150,
                retResidualNormsHistory=True,
            )
        order = np.argsort(vals)
        lam = float(vals[order[0]])
        vec = vecs[:, order[0]]
        resid = float(
            np.linalg.norm(schur(vec[:, None]).ravel() - lam * (Mp @ vec))
            / max(np.linalg.norm(Mp @ vec), 1e-30)
        )
        iters = len(hist)
        if not np.isfinite(lam) or lam <= 0 or resid > 1e-4:
            raise NonConvergenceError(
                f"inf-sup eigensolve did not settle: eigenvalue {lam:.3e}, "
                f"relative residual {resid:.3e} after {iters} iterations",
                trace=[lam, resid],
            )
        return InfsupResult(float(np.sqrt(lam)), "eigen", iters, resid)

    # probe path: sampled quotient, labeled as such
    from wstokes.spaces import weighted_norm
    from wstokes.weights import constant_weight, dual_weight

    w = weight if weight is not None else constant_weight()
    qp = q / (q - 1.0)
    wd = dual_weight(w, q)
    rng = np.random.default_rng(seed)
    m = system.mass_vector
    best = np.inf
    details = []
    for _ in range(n_probes):
        p = rng.standard_normal(n_press)
        p -= (m @ p) / m.sum()
        v = Ksolve(BT @ p)
        num = abs(float(p @ (B @ v)))
        vfun = FEFunction(space, "velocity", system.expand_velocity(v))
        pfun = FEFunction(space, "pressure", p)
        den_v = weighted_norm(vfun, w, q, derivative="gradient")
        den_p = weighted_norm(pfun, wd, qp)
        quot = num / (den_v * den_p)
        details.append(quot)
        best = min(best, quot)
    return InfsupResult(best, "probe", n_probes, 0.0, {"quotients": details})


def write_matrix_coordinate(matrix, target):
    """Write a sparse matrix as 'row col value' lines (zero-based)."""
    coo = sp.coo_matrix(matrix)
    close = False
    if isinstance(target, str):
        fh = open(target, "w")
        close = True
    else:
        fh = target
    try:
        fh.write(f"% coordinate {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
    finally:
        if close:
            fh.close()
