import numpy as np
import pytest

from wstokes.mesh import build_cube_mesh
from wstokes.spaces import (
    FEFunction,
    TaylorHoodSpace,
    build_regularized_delta,
    integral,
    interpolate,
    p2_shape_derivs,
    p2_shape_values,
    weighted_norm,
    zero_mean_project,
)
from wstokes.weights import constant_weight, point_distance_weight

DELTA_ANCHOR = (1 / 7, 2 / 7, 4 / 7)


def _rand_bary(rng, n):
    lam = rng.dirichlet(np.ones(4), size=n)
    return lam


def _eval(fun, pts):
    from wstokes.mesh import locate_points

    tids, lams = locate_points(fun.space.mesh, pts)
    return fun.eval_at_bary(tids, lams)


def test_p2_partition_of_unity(rng):
    lam = _rand_bary(rng, 30)
    shp = p2_shape_values(lam)
    assert shp.shape == (30, 10)
    assert np.allclose(shp.sum(axis=1), 1.0, atol=1e-13)
    # barycentric derivatives of the constant 1 vanish only along the
    # simplex; contract with gradients of lambda (zero column sums)
    der = p2_shape_derivs(lam)
    G = rng.standard_normal((4, 3))
    G -= G.mean(axis=0, keepdims=True)
    phys = np.einsum("nka,ab->nkb", der, G)
    assert np.allclose(phys.sum(axis=1), 0.0, atol=1e-12)


def test_p2_nodal_delta_property():
    # vertices then edge midpoints, in the element's local numbering
    eye = np.eye(4)
    nodes = list(eye)
    for a in range(4):
        for b in range(a + 1, 4):
            nodes.append(0.5 * (eye[a] + eye[b]))
    shp = p2_shape_values(np.array(nodes))
    assert np.allclose(shp, np.eye(10), atol=1e-13)


def test_space_dimensions(space3):
    n = 3
    assert space3.n_pressure_dofs == (n + 1) ** 3
    # P2 scalar nodes: vertices plus one per edge of the lattice
    assert space3.n_velocity_dofs == 3 * space3.n_nodes
    assert space3.node_coords.shape == (space3.n_nodes, 3)


def test_interpolate_reproduces_quadratics(space3, rng):
    c = rng.standard_normal((3, 10))

    def field(x):
        x = np.atleast_2d(x)
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        basis = np.stack(
            [np.ones_like(X), X, Y, Z, X * Y, X * Z, Y * Z, X**2, Y**2, Z**2]
        )
        return (c @ basis).T

    u = interpolate(space3, field, "velocity")
    pts = rng.uniform(0, 1, (25, 3))
    vals = _eval(u, pts)
    assert np.allclose(vals, field(pts), atol=1e-12)


def test_interpolate_pressure_linear_exact(space2, rng):
    a = rng.standard_normal(4)

    def p(x):
        x = np.atleast_2d(x)
        return a[0] + x @ a[1:]

    ph = interpolate(space2, p, "pressure")
    pts = rng.uniform(0, 1, (20, 3))
    assert np.allclose(_eval(ph, pts), p(pts), atol=1e-13)


def test_integral_matches_analytic(space3):
    u = interpolate(
        space3,
        lambda x: np.stack(
            [x[:, 0] ** 2, x[:, 1] * x[:, 2], np.ones(len(x))], axis=-1
        ),
        "velocity",
    )
    val = integral(u)
    assert np.allclose(val, [1 / 3, 1 / 4, 1.0], atol=1e-13)

    p = interpolate(space3, lambda x: 2.0 * x[:, 0] - 1.0, "pressure")
    assert integral(p) == pytest.approx(0.0, abs=1e-14)


def test_zero_mean_project(space3, rng):
    p = interpolate(space3, lambda x: x[:, 0] + 0.3 * x[:, 1] ** 1, "pressure")
    q = zero_mean_project(p)
    assert integral(q) == pytest.approx(0.0, abs=1e-13)
    q2 = zero_mean_project(q)
    assert np.allclose(q2.coeffs, q.coeffs, atol=1e-15)
    u = FEFunction(p.space, "velocity")
    with pytest.raises(ValueError):
        zero_mean_project(u)


def test_weighted_norm_constant_field(space3):
    u = interpolate(space3, lambda x: np.full((len(x), 3), 2.0), "velocity")
    # (int 12)^(1/2) over the unit cube
    assert weighted_norm(u) == pytest.approx(np.sqrt(12.0), rel=1e-12)
    # q = 3 with |u| = sqrt(12) constant: (int |u|^3)^(1/3)
    assert weighted_norm(u, q=3.0) == pytest.approx(12.0 ** 0.5, rel=1e-10)


def test_weighted_norm_gradient_of_linear(space2):
    u = interpolate(
        space2, lambda x: np.stack([x[:, 1], np.zeros(len(x)), np.zeros(len(x))], -1),
        "velocity",
    )
    # grad u has a single unit entry; symmetric gradient two entries 1/2
    assert weighted_norm(u, derivative="gradient") == pytest.approx(1.0, rel=1e-12)
    assert weighted_norm(u, derivative="symmetric_gradient") == pytest.approx(
        np.sqrt(0.5), rel=1e-12
    )


def test_weighted_norm_exact_closure(space3, rng):
    c = rng.standard_normal(3)

    def field(x):
        x = np.atleast_2d(x)
        return np.outer(x[:, 0], c)

    u = interpolate(space3, field, "velocity")
    assert weighted_norm(u, exact=field) == pytest.approx(0.0, abs=1e-13)


def test_weighted_norm_with_weight(space3):
    u = interpolate(space3, lambda x: np.full((len(x), 3), 1.0), "velocity")
    w = point_distance_weight((0.5, 0.5, 0.5), 2.0, 0.0)
    # int 3 |x-z|^2 over the cube = 3 * (3 * 1/12) = 3/4
    assert weighted_norm(u, weight=w) == pytest.approx(
        np.sqrt(0.75), rel=5e-3
    )
    assert weighted_norm(u, weight=constant_weight()) == pytest.approx(
        np.sqrt(3.0), rel=1e-12
    )


def test_delta_unit_integral_and_reproduction(space4, rng):
    d = build_regularized_delta(space4, DELTA_ANCHOR)
    assert d.integrate() == pytest.approx(1.0, abs=1e-12)
    en = space4.elem_nodes[d.tet_id]
    coords = space4.node_coords
    worst = 0.0
    for _ in range(20):
        c = rng.standard_normal(10)

        def quad(x):
            x = np.atleast_2d(x)
            X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
            return (
                c[0] + c[1] * X + c[2] * Y + c[3] * Z + c[4] * X * Y
                + c[5] * X * Z + c[6] * Y * Z + c[7] * X**2 + c[8] * Y**2
                + c[9] * Z**2
            )

        got = d.integrate_against(quad(coords[en]))
        worst = max(worst, abs(got - quad(np.array([DELTA_ANCHOR]))[0]))
    assert worst <= 1e-12


def test_delta_sup_norm_frozen():
    # the anchor is a period-3 orbit of coordinate doubling, so its
    # position inside the host tet repeats up to a permutation and the
    # sup norm scales as exactly h^-3: values are 2400/7 * 8^level
    sups = []
    for n in (2, 4, 8):
        sp = TaylorHoodSpace(build_cube_mesh(n))
        d = build_regularized_delta(sp, DELTA_ANCHOR)
        sups.append(d.norms()["Linf"])
    assert sups[0] == pytest.approx(2400 / 7, rel=1e-10)
    assert sups[1] / sups[0] == pytest.approx(8.0, rel=1e-10)
    assert sups[2] / sups[1] == pytest.approx(8.0, rel=1e-10)


def test_delta_rejects_face_anchor(space2):
    with pytest.raises(ValueError):
        build_regularized_delta(space2, (0.5, 0.25, 0.75))
