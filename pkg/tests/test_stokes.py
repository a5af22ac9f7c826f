import io

import numpy as np
import pytest
import scipy.sparse as sp

from wstokes.errors import PointLocationError
from wstokes.spaces import interpolate, weighted_norm
from wstokes.stokes import (
    assemble_rhs_divergence_form,
    assemble_rhs_measure,
    assemble_stokes,
    discrete_infsup,
    solve_saddle,
    stokes_projection,
    write_matrix_coordinate,
)

# measured once on the reference setup (n = 4, mu = 1, smooth_curl);
# direct factorization, stable to backend roundoff
N4_ERR_GRAD = 1.5217522494373526e-3
N4_ERR_L2 = 5.6919629531240906e-5
N4_ERR_P = 1.4147040652152812e-2
BETA_N4 = 0.2185598604534855


@pytest.fixture(scope="module")
def system4(space4):
    return assemble_stokes(space4, 1.0)


@pytest.fixture(scope="module")
def solved4(space4, system4, curl_case):
    f = curl_case.forcing_tensor(None, mu=1.0)
    system4.set_loads(assemble_rhs_divergence_form(space4, f))
    return solve_saddle(system4)


def test_system_shapes(space4, system4):
    n_int = system4.n_interior_dofs
    assert system4.A.shape == (n_int, n_int)
    assert system4.B.shape == (space4.n_pressure_dofs, n_int)
    assert system4.mass_vector.shape == (space4.n_pressure_dofs,)
    assert system4.mass_vector.sum() == pytest.approx(1.0, rel=1e-12)


def test_velocity_operator_symmetric_definite(system4, rng):
    A = system4.A
    assert abs(A - A.T).max() <= 1e-12
    for _ in range(5):
        x = rng.standard_normal(A.shape[0])
        assert x @ (A @ x) > 0


def test_divergence_kills_constants(space4, system4):
    # the field (1,1,1) restricted to interior dofs is not divergence
    # free pointwise near the boundary, but B applied to any discrete
    # gradient of a constant pressure is zero: B^T 1 pairs with the
    # divergence of test functions vanishing on the boundary
    ones = np.ones(space4.n_pressure_dofs)
    v = system4.B.T @ ones
    assert np.abs(v).max() <= 1e-12


def test_solution_accuracy_frozen(solved4, curl_case):
    eg = weighted_norm(solved4.velocity, derivative="gradient", exact=curl_case.grad_u)
    e2 = weighted_norm(solved4.velocity, exact=curl_case.u)
    ep = weighted_norm(solved4.pressure, exact=curl_case.p)
    assert eg == pytest.approx(N4_ERR_GRAD, rel=1e-6)
    assert e2 == pytest.approx(N4_ERR_L2, rel=1e-6)
    assert ep == pytest.approx(N4_ERR_P, rel=1e-6)


def test_kkt_residual_small(system4, solved4):
    u = system4.reduce_velocity(solved4.velocity.coeffs)
    p = solved4.pressure.coeffs
    r1 = system4.A @ u + system4.B.T @ p - system4.F
    r2 = system4.B @ u
    scale = max(np.linalg.norm(system4.F), 1.0)
    assert np.linalg.norm(r1) / scale <= 1e-9
    assert np.abs(r2).max() <= 1e-9
    # pressure is mean free in the discrete sense
    assert abs(system4.mass_vector @ p) <= 1e-10


def test_minres_matches_direct(space3, curl_case):
    system = assemble_stokes(space3, 1.0)
    f = curl_case.forcing_tensor(None, mu=1.0)
    system.set_loads(assemble_rhs_divergence_form(space3, f))
    direct = solve_saddle(system, method="direct")
    system2 = assemble_stokes(space3, 1.0)
    system2.set_loads(assemble_rhs_divergence_form(space3, f))
    it = solve_saddle(system2, method="minres", tol=1e-12)
    du = np.abs(direct.velocity.coeffs - it.velocity.coeffs).max()
    dp = np.abs(direct.pressure.coeffs - it.pressure.coeffs).max()
    assert du <= 1e-8 and dp <= 1e-6
    assert it.stats["backend"] == "minres"


def test_measure_rhs_partition_of_unity(space3):
    a = np.array([2.0, -1.0, 0.5])
    F = assemble_rhs_measure(space3, (0.41, 0.33, 0.52), a)
    comp = F.reshape(-1, 3)
    assert np.allclose(comp.sum(axis=0), a, atol=1e-12)


def test_measure_rhs_is_point_evaluation(space3, rng):
    z = (0.41, 0.33, 0.52)
    a = np.array([1.0, 0.0, 0.0])
    F = assemble_rhs_measure(space3, z, a)
    for _ in range(5):
        c = rng.standard_normal((3, 10))

        def field(x):
            x = np.atleast_2d(x)
            X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
            basis = np.stack(
                [np.ones_like(X), X, Y, Z, X * Y, X * Z, Y * Z, X**2, Y**2, Z**2]
            )
            return (c @ basis).T

        v = interpolate(space3, field, "velocity")
        assert F @ v.coeffs == pytest.approx(
            float(field(np.array([z]))[0] @ a), abs=1e-12
        )


def test_measure_rhs_outside_raises(space3):
    with pytest.raises(PointLocationError):
        assemble_rhs_measure(space3, (1.2, 0.5, 0.5), np.array([1.0, 0, 0]))


def test_infsup_frozen(space4):
    r = discrete_infsup(space4)
    assert float(r) == pytest.approx(BETA_N4, abs=1e-4)
    assert r.beta > 0.1
    assert r.iterations > 0


def test_projection_stability_single_level(space4, curl_case):
    # unweighted projection of the exact pair stays near the exact norms
    sol = stokes_projection(space4, curl_case.grad_u, curl_case.p, mu=1.0)
    npr = weighted_norm(sol.velocity, derivative="symmetric_gradient") + weighted_norm(
        sol.pressure
    )
    nex = (
        weighted_norm(
            interpolate(space4, curl_case.u, "velocity"),
            derivative="symmetric_gradient",
        )
        + weighted_norm(interpolate(space4, curl_case.p, "pressure"))
    )
    assert 0.3 <= npr / nex <= 3.0


def test_write_matrix_coordinate():
    m = sp.csr_matrix(np.array([[1.5, 0.0], [0.0, -2.0], [3.0, 0.0]]))
    buf = io.StringIO()
    write_matrix_coordinate(m, buf)
    lines = buf.getvalue().strip().splitlines()
    head = lines[0].split()
    assert int(head[0]) == 3 and int(head[1]) == 2 and int(head[2]) == 3
    triples = sorted(tuple(float(v) for v in ln.split()) for ln in lines[1:])
    assert triples == [(1.0, 1.0, 1.5), (2.0, 2.0, -2.0), (3.0, 1.0, 3.0)]
