import math

import numpy as np
import pytest

from wstokes.quadrature import SUPPORTED_ORDERS, quadrature, reference_monomial_integral


def test_reference_monomial_values():
    # int over the reference tet of lam0^a lam1^b lam2^c
    # = a! b! c! 3! / (a+b+c+3)! restricted to the unit simplex volume 1/6
    assert reference_monomial_integral(0, 0, 0) == pytest.approx(1 / 6)
    assert reference_monomial_integral(1, 0, 0) == pytest.approx(1 / 24)
    assert reference_monomial_integral(1, 1, 0) == pytest.approx(1 / 120)
    assert reference_monomial_integral(2, 0, 0) == pytest.approx(1 / 60)
    for a, b, c in ((3, 1, 0), (2, 2, 1), (0, 4, 2)):
        exact = (
            math.factorial(a)
            * math.factorial(b)
            * math.factorial(c)
            / math.factorial(a + b + c + 3)
        )
        assert reference_monomial_integral(a, b, c) == pytest.approx(exact, rel=1e-13)


def test_rules_are_well_formed():
    for order in SUPPORTED_ORDERS:
        rule = quadrature(order)
        pts, w = rule.points, rule.weights
        assert pts.shape == (len(w), 4)
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(1 / 6, rel=1e-14)
        assert np.all(pts >= -1e-14)
        assert np.allclose(pts.sum(axis=1), 1.0, atol=1e-13)


def test_rules_integrate_monomials_exactly(rng):
    for order in SUPPORTED_ORDERS:
        rule = quadrature(order)
        exps = [(a, b, c)
                for a in range(order + 1)
                for b in range(order + 1 - a)
                for c in range(order + 1 - a - b)]
        for a, b, c in exps:
            val = float(
                np.sum(
                    rule.weights
                    * rule.points[:, 0] ** a
                    * rule.points[:, 1] ** b
                    * rule.points[:, 2] ** c
                )
            )
            assert val == pytest.approx(
                reference_monomial_integral(a, b, c), rel=1e-12, abs=1e-15
            ), f"order {order} monomial {(a, b, c)}"


def test_unknown_order_rejected():
    with pytest.raises(NotImplementedError):
        quadrature(max(SUPPORTED_ORDERS) + 1)
    with pytest.raises(NotImplementedError):
        quadrature(0)
