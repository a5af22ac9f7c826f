import numpy as np
import pytest

from wstokes.errors import SingularWeightError
from wstokes.weights import (
    WeightField,
    boundary_distance_weight,
    constant_weight,
    custom_weight,
    decompose_zero_mean,
    dual_weight,
    estimate_aq,
    is_in_restricted_class,
    maximal_hl,
    maximal_sharp,
    point_distance_weight,
    product_weight,
)


def test_constant_weight_eval(rng):
    w = constant_weight()
    pts = rng.uniform(0, 1, (12, 3))
    assert np.allclose(w.eval(pts), 1.0)
    assert not w.is_singular


def test_point_distance_eval(rng):
    z = (0.3, 0.3, 0.3)
    w = point_distance_weight(z, 2.0, 0.0)
    pts = rng.uniform(0, 1, (20, 3))
    d = np.linalg.norm(pts - np.array(z), axis=1)
    assert np.allclose(w.eval(pts), d**2, rtol=1e-13)
    # degenerate-or-singular flag: any nonzero power with eps = 0
    # touches 0 or infinity at the center
    assert point_distance_weight(z, -1.0, 0.0).is_singular
    assert point_distance_weight(z, 1.0, 0.0).is_singular
    assert not point_distance_weight(z, 1.0, 0.05).is_singular
    # epsilon regularizes quadratically: (d^2 + eps^2)^(alpha/2)
    we = point_distance_weight(z, 2.0, 0.1)
    assert np.allclose(we.eval(pts), d**2 + 0.01, rtol=1e-13)


def test_boundary_distance_eval(rng):
    w = boundary_distance_weight(1.0, 0.0)
    pts = rng.uniform(0, 1, (20, 3))
    d = np.minimum(pts, 1.0 - pts).min(axis=1)
    assert np.allclose(w.eval(pts), d, rtol=1e-13)
    assert boundary_distance_weight(-0.5).is_singular


def test_product_weight(rng):
    a = point_distance_weight((0.2, 0.2, 0.2), 1.0, 0.0)
    b = boundary_distance_weight(0.5, 0.0)
    w = product_weight(a, b)
    pts = rng.uniform(0.05, 0.95, (15, 3))
    assert np.allclose(w.eval(pts), a.eval(pts) * b.eval(pts), rtol=1e-12)


def test_dual_weight_algebra(rng):
    w = point_distance_weight((0.4, 0.5, 0.6), 1.5, 0.0)
    q = 3.0
    d = dual_weight(w, q)
    pts = rng.uniform(0, 1, (15, 3))
    assert np.allclose(d.eval(pts), w.eval(pts) ** (1.0 / (1.0 - q)), rtol=1e-12)
    # dual of the dual with the conjugate exponent restores the weight
    back = dual_weight(d, q / (q - 1.0))
    assert np.allclose(back.eval(pts), w.eval(pts), rtol=1e-11)


def test_spec_roundtrip():
    ws = [
        constant_weight(),
        point_distance_weight((0.3, 0.4, 0.5), -1.0, 0.01),
        boundary_distance_weight(0.25, 0.0),
    ]
    pts = np.random.default_rng(5).uniform(0.1, 0.9, (10, 3))
    for w in ws:
        back = WeightField.from_spec(w.to_spec())
        assert back.kind == w.kind
        assert np.allclose(back.eval(pts), w.eval(pts), rtol=1e-13)
        assert back.is_singular == w.is_singular
    # composite and closure weights are runtime-only, not config forms
    prod = product_weight(
        point_distance_weight((0.3, 0.3, 0.3), 1.0, 0.0),
        boundary_distance_weight(0.5),
    )
    with pytest.raises(ValueError):
        prod.to_spec()


def test_custom_weight_guards_nonfinite():
    def inv_x(x):
        with np.errstate(divide="ignore"):
            return 1.0 / np.atleast_2d(x)[:, 0]

    w = custom_weight(inv_x, singular=True)
    assert w.is_singular
    with pytest.raises(SingularWeightError):
        w.eval(np.array([[0.0, 0.5, 0.5]]))
    assert np.allclose(w.eval(np.array([[0.5, 0.5, 0.5]])), 2.0)


def test_aq_constant_is_one():
    w = constant_weight()
    for depth in (1, 2, 3, 4):
        assert estimate_aq(w, 2.0, depth).value == pytest.approx(1.0, abs=1e-13)


def test_aq_frozen_value():
    w = point_distance_weight((0.3, 0.3, 0.3), 1.0, 0.0)
    est = estimate_aq(w, 2.0, 3)
    assert est.value == pytest.approx(1.2632976594232164, rel=1e-10)
    assert est.argmax_side == pytest.approx(0.25)
    assert tuple(float(c) for c in est.argmax_center) == pytest.approx(
        (0.375, 0.375, 0.375)
    )
    assert est.q == 2.0 and est.depth == 3


def test_aq_nondecreasing_in_depth(rng):
    for _ in range(3):
        z = tuple(rng.uniform(0.2, 0.8, 3))
        alpha = float(rng.uniform(0.3, 2.0))
        w = point_distance_weight(z, alpha, 0.0)
        vals = [estimate_aq(w, 2.0, d).value for d in (1, 2, 3, 4)]
        assert all(vals[i + 1] >= vals[i] - 1e-13 for i in range(3))


def test_maximal_hl_properties(rng):
    grid = np.full((4, 4, 4), 2.5)
    assert np.allclose(maximal_hl(grid), 2.5)
    f = rng.standard_normal((8, 8, 8))
    m = maximal_hl(f)
    assert np.all(m >= np.abs(f) - 1e-14)
    assert maximal_hl(f, index=(1, 2, 3)) == pytest.approx(m[1, 2, 3])
    # lone unit spike: its own cell keeps 1, the far corner only sees
    # the whole-grid average
    spike = np.zeros((4, 4, 4))
    spike[0, 0, 0] = 1.0
    ms = maximal_hl(spike)
    assert ms[0, 0, 0] == pytest.approx(1.0)
    assert ms[1, 1, 1] == pytest.approx(1 / 8)
    assert ms[3, 3, 3] == pytest.approx(1 / 64)


def test_maximal_sharp_constant_vanishes(rng):
    grid = np.full((4, 4, 4), 3.0)
    assert np.allclose(maximal_sharp(grid), 0.0)
    f = rng.standard_normal((4, 4, 4))
    assert np.all(maximal_sharp(f) >= -1e-14)


def test_restricted_class():
    ok = is_in_restricted_class(constant_weight(), 0.1)
    assert ok.ok and ok.lower_bound == pytest.approx(1.0)
    bad = is_in_restricted_class(boundary_distance_weight(1.0, 0.0), 0.1)
    assert not bad.ok
    # interior-point singularity is fine on the boundary collar
    good = is_in_restricted_class(
        point_distance_weight((0.5, 0.5, 0.5), -1.0, 0.0), 0.2
    )
    assert good.ok and good.lower_bound > 0
    with pytest.raises(ValueError):
        is_in_restricted_class(constant_weight(), 0.7)


def _sin_field(x):
    x = np.atleast_2d(x)
    return np.sin(2 * np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]) * x[:, 2]


def test_decompose_zero_mean_properties(rng):
    w = point_distance_weight((0.3, 0.3, 0.3), 1.0, 0.0)
    center, side = (0.5, 0.5, 0.5), 0.4
    g1, g2, rep = decompose_zero_mean(_sin_field, center, side, w, 2.0)
    # supports: g1 inside (3/2)Q, g2 outside Q
    far = rng.uniform(0, 1, (400, 3))
    t = np.max(np.abs(far - np.array(center)), axis=1) / (side / 2)
    outside_dilated = far[t > 1.5 + 1e-9]
    inside_q = far[t < 1.0 - 1e-9]
    assert np.allclose(g1(outside_dilated), 0.0, atol=1e-14)
    assert np.allclose(g2(inside_q), 0.0, atol=1e-14)
    assert abs(rep["integral_g1"]) <= 1e-10 * max(rep["l1_g"], 1e-30)
    assert abs(rep["integral_g2"]) <= 1e-10 * max(rep["l1_g"], 1e-30)
    assert rep["ratio_g1"] + rep["ratio_g2"] > 0
    # g = g1 + g2 pointwise
    assert np.allclose(g1(far) + g2(far), _sin_field(far), atol=1e-12)


def test_decompose_rejects_bad_inputs():
    w = constant_weight()
    with pytest.raises(ValueError):
        decompose_zero_mean(_sin_field, (0.9, 0.5, 0.5), 0.4, w, 2.0)
    with pytest.raises(ValueError):
        decompose_zero_mean(
            lambda x: np.ones(len(np.atleast_2d(x))), (0.5, 0.5, 0.5), 0.4, w, 2.0
        )
