import numpy as np
import pytest

from wstokes.errors import PointLocationError
from wstokes.mesh import (
    build_cube_mesh,
    locate_point,
    locate_points,
    read_mesh,
    refine_uniform,
    serialize,
    write_mesh,
)


def test_cube_mesh_counts():
    for n in (1, 2, 3, 5):
        m = build_cube_mesh(n)
        assert m.n_vertices == (n + 1) ** 3
        assert m.n_tets == 6 * n**3
        assert m.h_max == pytest.approx(np.sqrt(3.0) / n, rel=1e-14)


def test_volumes_uniform_and_total():
    m = build_cube_mesh(3)
    v = m.volumes()
    assert np.all(v > 0)
    assert v.max() == pytest.approx(v.min(), rel=1e-12)
    assert v.sum() == pytest.approx(1.0, abs=1e-13)


def test_boundary_face_count():
    # each cube face carries 2 triangles per lattice square
    for n in (2, 3):
        m = build_cube_mesh(n)
        assert len(m.boundary_faces) == 12 * n**2


def test_audit_clean():
    build_cube_mesh(2).audit()


def test_refine_counts_and_h():
    m = build_cube_mesh(2)
    r = refine_uniform(m)
    assert r.n_tets == 8 * m.n_tets
    assert r.h_max == pytest.approx(0.5 * m.h_max, rel=1e-14)
    assert r.level == m.level + 1
    assert r.parents is not None and len(r.parents) == r.n_tets
    counts = np.bincount(r.parents, minlength=m.n_tets)
    assert np.all(counts == 8)


def _canonical_tets(mesh, scale):
    key = np.round(mesh.vertices * scale).astype(np.int64)
    kid = (key[:, 0] * (scale + 1) + key[:, 1]) * (scale + 1) + key[:, 2]
    tets = np.sort(kid[mesh.tets], axis=1)
    return tets[np.lexsort(tets.T[::-1])]


def test_refinement_reproduces_direct_lattice():
    # red refinement of the Kuhn mesh is the Kuhn mesh at half spacing,
    # so lineage studies and directly built meshes are interchangeable
    for n in (2, 3):
        ref = refine_uniform(build_cube_mesh(n))
        direct = build_cube_mesh(2 * n)
        a = _canonical_tets(ref, 2 * n)
        b = _canonical_tets(direct, 2 * n)
        assert np.array_equal(a, b)


def test_locate_point_reconstructs(rng):
    m = build_cube_mesh(3)
    pts = rng.uniform(0.05, 0.95, (40, 3))
    verts = m.tet_vertices()
    for p in pts:
        tid, lam = locate_point(m, p)
        assert lam.min() >= -1e-12
        assert lam.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(lam @ verts[tid], p, atol=1e-12)


def test_locate_points_matches_single(rng):
    m = build_cube_mesh(2)
    pts = rng.uniform(0.1, 0.9, (15, 3))
    tids, lams = locate_points(m, pts)
    for k, p in enumerate(pts):
        tid, lam = locate_point(m, p)
        assert tids[k] == tid
        assert np.allclose(lams[k], lam, atol=1e-12)


def test_locate_point_outside_raises():
    m = build_cube_mesh(2)
    with pytest.raises(PointLocationError):
        locate_point(m, (1.7, 0.5, 0.5))


def test_serialize_roundtrip(tmp_path):
    m = build_cube_mesh(3)
    text = serialize(m)
    assert text.startswith(f"tetmesh {m.n_vertices} {m.n_tets}")
    path = tmp_path / "cube.mesh"
    write_mesh(m, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.tets, m.tets)
    assert back.content_hash() == m.content_hash()


def test_content_hash_distinguishes():
    assert build_cube_mesh(2).content_hash() != build_cube_mesh(3).content_hash()
