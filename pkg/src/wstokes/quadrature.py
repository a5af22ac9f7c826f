"""Quadrature rules on the reference tetrahedron.

Points are barycentric coordinates of shape (npoints, 4); weights sum to
the reference volume 1/6.  Rules are symmetric with positive weights and
integrate all monomials of total degree <= order exactly; ``order == 1``
is the single-point barycenter rule.
"""

from dataclasses import dataclass
from math import factorial

import numpy as np

SUPPORTED_ORDERS = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric positive rule on the reference tetrahedron."""

    order: int
    points: np.ndarray  # (n, 4) barycentric
    weights: np.ndarray  # (n,), sums to 1/6

    @property
    def npoints(self):
        return self.weights.shape[0]


def _orbit_s4(w):
    return [([0.25, 0.25, 0.25, 0.25], w)]


def _orbit_s31(a, w):
    """Four permutations of (a, b, b, b) with b = (1 - a) / 3."""
    b = (1.0 - a) / 3.0
    pts = []
    for i in range(4):
        p = [b, b, b, b]
        p[i] = a
        pts.append((p, w))
    return pts


def _orbit_s22(a, w):
    """Six permutations of (a, a, b, b) with b = 1/2 - a."""
    b = 0.5 - a
    pts = []
    for i in range(4):
        for j in range(i + 1, 4):
            p = [b, b, b, b]
            p[i] = a
            p[j] = a
            pts.append((p, w))
    return pts


def _orbit_s211(a, b, w):
    """Twelve permutations of (a, a, b, c) with c = 1 - 2a - b."""
    c = 1.0 - 2.0 * a - b
    pts = []
    for ib in range(4):
        for ic in range(4):
            if ic == ib:
                continue
            p = [a] * 4
            p[ib] = b
            p[ic] = c
            pts.append((p, w))
    return pts


# Degree-2, 4-point rule: barycentric weights 1/4.
_A2 = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0

# Degree-5, 14-point rule (all weights positive).
_D5 = (
    _orbit_s31(1.0 - 3.0 * 0.3108859192633005, 0.1126879257180162)
    + _orbit_s31(1.0 - 3.0 * 0.0927352503108912, 0.0734930431163619)
    + _orbit_s22(0.0455037041256497, 0.0425460207770812)
)

# Degree-6, 24-point rule (all weights positive).
_D6 = (
    _orbit_s31(0.3561913862225449, 0.0399227502581679)
    + _orbit_s31(0.8779781243961660, 0.0100772110553207)
    + _orbit_s31(0.0329863295731731, 0.0553571815436544)
    + _orbit_s211(0.0636610018750175, 0.2696723314583159, 0.0482142857142857)
)


def _rule(order, orbit):
    pts = np.array([p for p, _ in orbit], dtype=float)
    wts = np.array([w for _, w in orbit], dtype=float) / 6.0
    return QuadratureRule(order=order, points=pts, weights=wts)


_RULES = {
    1: _rule(1, _orbit_s4(1.0)),
    2: _rule(2, _orbit_s31(_A2, 0.25)),
    3: _rule(3, _D5),
    4: _rule(4, _D5),
    5: _rule(5, _D5),
    6: _rule(6, _D6),
}


def quadrature(order):
    """Return a rule exact for total degree <= order on the reference tet."""
    if order not in _RULES:
        raise NotImplementedError(
            f"quadrature order {order} not supported; supported orders: {SUPPORTED_ORDERS}"
        )
    return _RULES[order]


def reference_monomial_integral(a, b, c):
    """Exact integral of x^a y^b z^c over the reference tetrahedron."""
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
