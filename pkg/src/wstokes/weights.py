"""Muckenhoupt-type weight fields and the tools that probe them.

The weight algebra is small: distance powers to a point or to the
boundary of the unit cube, products, constants, and wrapped closures.
Power kinds evaluate (rho^2 + eps^2)^(alpha/2) so that eps > 0 gives a
strictly positive smooth field and eps = 0 recovers the honest distance
power.  On top of that sit the dual-weight map omega^(1/(1-q)), a dyadic
estimator for the A_q characteristic, discrete Hardy-Littlewood and
sharp maximal operators on grid samples, and a constructive splitting of
zero-mean fields attached to a cube.

Everything here is pure: fields are frozen dataclasses and the
operators allocate their own output.
"""

from dataclasses import dataclass, replace

import numpy as np

from wstokes.errors import SingularWeightError

_GAUSS4 = None


def _gauss4():
    # 4-point Gauss-Legendre mapped to [0,1]; exact through degree 7
    global _GAUSS4
    if _GAUSS4 is None:
        x, w = np.polynomial.legendre.leggauss(4)
        _GAUSS4 = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS4


@dataclass(frozen=True)
class WeightField:
    """Evaluable weight with exponent metadata.

    kind is one of 'constant', 'power_point', 'power_boundary',
    'product', 'custom'.  alpha, center and epsilon drive the power
    kinds; factors the products; func (a vectorized closure of (N,3)
    points) together with the outer exponent power the custom fields.
    """

    kind: str
    alpha: float = 0.0
    center: tuple = None
    epsilon: float = 0.0
    factors: tuple = ()
    func: object = None
    power: float = 1.0
    singular_hint: bool = False

    def __post_init__(self):
        kinds = ("constant", "power_point", "power_boundary", "product", "custom")
        if self.kind not in kinds:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {kinds}")
        if self.kind == "power_point" and self.center is None:
            raise ValueError("power_point weight needs a center")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def is_singular(self):
        """True when evaluation can blow up or vanish on a small set."""
        if self.kind in ("power_point", "power_boundary"):
            return self.epsilon == 0.0 and self.alpha != 0.0
        if self.kind == "product":
            return any(f.is_singular for f in self.factors)
        if self.kind == "custom":
            return bool(self.singular_hint)
        return False

    def eval(self, x):
        """Evaluate at an (N,3) array of points (a single point is fine)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "constant":
            return np.ones(len(x))
        if self.kind == "product":
            out = np.ones(len(x))
            for f in self.factors:
                out *= f.eval(x)
            return out
        if self.kind == "custom":
            vals = np.asarray(self.func(x), dtype=float)
            if self.power != 1.0:
                vals = vals**self.power
            if not np.all(np.isfinite(vals)):
                raise SingularWeightError(
                    "custom weight evaluated to a non-finite value; "
                    "regularize the closure"
                )
            return vals
        if self.kind == "power_point":
            d = x - np.asarray(self.center, dtype=float)
            r2 = np.sum(d * d, axis=-1)
        else:
            rho = np.minimum(np.min(x, axis=-1), np.min(1.0 - x, axis=-1))
            r2 = rho * rho
        return self._power_of(r2)

    def _power_of(self, r2):
        if self.alpha == 0.0:
            return np.ones(r2.shape)
        r2 = r2 + self.epsilon**2
        if self.epsilon == 0.0 and self.alpha < 0.0 and np.any(r2 == 0.0):
            raise SingularWeightError(
                "negative-power weight evaluated on its singular set; "
                "set epsilon > 0 to regularize"
            )
        return r2 ** (self.alpha / 2.0)

    def eval_grid(self, xs, ys, zs):
        """Evaluate on the tensor grid xs x ys x zs; returns (nx,ny,nz).

        Power kinds broadcast along axes without materializing the point
        cloud; product recurses; custom falls back to meshgrid points.
        """
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        zs = np.asarray(zs, dtype=float)
        shape = (len(xs), len(ys), len(zs))
        if self.kind == "constant":
            return np.ones(shape)
        if self.kind == "product":
            out = np.ones(shape)
            for f in self.factors:
                out *= f.eval_grid(xs, ys, zs)
            return out
        if self.kind == "custom":
            X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
            pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
            return self.eval(pts).reshape(shape)
        if self.kind == "power_point":
            cx, cy, cz = (float(c) for c in self.center)
            r2 = (
                ((xs - cx) ** 2)[:, None, None]
                + ((ys - cy) ** 2)[None, :, None]
                + ((zs - cz) ** 2)[None, None, :]
            )
        else:
            rx = np.minimum(xs, 1.0 - xs)
            ry = np.minimum(ys, 1.0 - ys)
            rz = np.minimum(zs, 1.0 - zs)
            rho = np.minimum(
                np.minimum(rx[:, None, None], ry[None, :, None]), rz[None, None, :]
            )
            r2 = rho * rho
        return self._power_of(r2)

    def to_spec(self):
        """JSON-ready description for study configs."""
        if self.kind == "constant":
            return {"kind": "constant"}
        if self.kind == "power_point":
            return {
                "kind": "power_point",
                "alpha": self.alpha,
                "center": [float(c) for c in self.center],
                "epsilon": self.epsilon,
            }
        if self.kind == "power_boundary":
            return {"kind": "power_boundary", "alpha": self.alpha, "epsilon": self.epsilon}
        raise ValueError(f"weight kind {self.kind!r} has no config form")

    @staticmethod
    def from_spec(spec):
        kind = spec["kind"]
        if kind == "constant":
            return constant_weight()
        if kind == "power_point":
            return point_distance_weight(
                spec["center"], spec["alpha"], spec.get("epsilon", 0.0)
            )
        if kind == "power_boundary":
            return boundary_distance_weight(spec["alpha"], spec.get("epsilon", 0.0))
        raise ValueError(f"unknown weight kind {kind!r} in config")


def constant_weight():
    return WeightField(kind="constant")


def point_distance_weight(center, alpha, epsilon=0.0):
    return WeightField(
        kind="power_point",
        alpha=float(alpha),
        center=tuple(float(c) for c in center),
        epsilon=float(epsilon),
    )


def boundary_distance_weight(alpha, epsilon=0.0):
    return WeightField(kind="power_boundary", alpha=float(alpha), epsilon=float(epsilon))


def product_weight(*factors):
    return WeightField(kind="product", factors=tuple(factors))


def custom_weight(func, power=1.0, singular=False):
    return WeightField(kind="custom", func=func, power=float(power), singular_hint=singular)


def dual_weight(w, q):
    """The weight omega^(1/(1-q)) pairing L^q(omega) with its dual.

    Power exponents transform exactly as alpha -> alpha/(1-q), so the
    round trip dual(dual(w, q), q') with q' = q/(q-1) restores w.
    """
    q = float(q)
    if q <= 1.0:
        raise ValueError("dual weight needs q > 1")
    r = 1.0 / (1.0 - q)
    if w.kind == "constant":
        return w
    if w.kind in ("power_point", "power_boundary"):
        return replace(w, alpha=w.alpha * r)
    if w.kind == "product":
        return replace(w, factors=tuple(dual_weight(f, q) for f in w.factors))
    return replace(w, power=w.power * r)


@dataclass(frozen=True)
class AqEstimate:
    """Sampled lower bound on the Muckenhoupt characteristic.

    value is the largest averaged quotient found over dyadic cubes of
    generations 1..depth; argmax_center and argmax_side name the cube
    where it was attained.
    """

    q: float
    value: float
    argmax_center: tuple
    argmax_side: float
    depth: int


def _cell_averages(w, m):
    """Averages of w over the (m,m,m) uniform cells of the unit cube.

    Composite 4^3 Gauss per cell, one x-slab at a time so the footprint
    stays O(m^2).  The denominator uses the identical contraction on a
    field of ones, which keeps averages of a constant exactly 1.0.
    """
    gx, gw = _gauss4()
    pts = (np.arange(m)[:, None] + gx[None, :]) / m  # (m,4) nodes per cell
    flat = pts.ravel()
    out = np.empty((m, m, m))
    den = None
    for i in range(m):
        vals = w.eval_grid(pts[i], flat, flat).reshape(4, m, 4, m, 4)
        if den is None:
            den = np.einsum("a,b,c,ajbkc->jk", gw, gw, gw, np.ones_like(vals))
        out[i] = np.einsum("a,b,c,ajbkc->jk", gw, gw, gw, vals) / den
    return out


def _block_mean(cells, side):
    """Mean over side^3 blocks of a cubic array; side divides the shape."""
    m = cells.shape[0]
    k = m // side
    return cells.reshape(k, side, k, side, k, side).mean(axis=(1, 3, 5))


def estimate_aq(w, q, depth):
    """Dyadic lower bound on the A_q characteristic of w.

    For each generation g the unit cube splits into 2^g cells per axis;
    the quotient (avg of w) * (avg of the dual power)^(q-1) is evaluated
    on every cube of generations 1..depth.  Averages are composite
    Gauss sums refined together with depth, so estimates can only grow
    as depth does: the reported value is the running maximum over all
    sampling stages up to the requested one.
    """
    q = float(q)
    if q <= 1.0:
        raise ValueError("the averaged quotient needs q > 1")
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    wd = dual_weight(w, q)
    best = -np.inf
    best_cube = None
    for stage in range(1, depth + 1):
        m = 2**stage
        avg_w = _cell_averages(w, m)
        avg_d = _cell_averages(wd, m)
        for gen in range(1, stage + 1):
            side = m // (2**gen)
            a1 = _block_mean(avg_w, side) if side > 1 else avg_w
            a2 = _block_mean(avg_d, side) if side > 1 else avg_d
            quot = a1 * a2 ** (q - 1.0)
            if not np.all(np.isfinite(quot)):
                raise SingularWeightError(
                    "averaged quotient is not finite; the dual power is not "
                    "integrable at this sampling, set epsilon > 0"
                )
            idx = int(np.argmax(quot))
            val = float(quot.flat[idx])
            if val > best:
                best = val
                n = 2**gen
                ijk = np.unravel_index(idx, (n, n, n))
                best_cube = (tuple((c + 0.5) / n for c in ijk), 1.0 / n)
    return AqEstimate(
        q=q,
        value=best,
        argmax_center=best_cube[0],
        argmax_side=best_cube[1],
        depth=depth,
    )


@dataclass(frozen=True)
class RestrictedClassReport:
    """Verdict on positivity and continuity near the boundary."""

    ok: bool
    lower_bound: float
    witness: tuple


def is_in_restricted_class(w, boundary_margin):
    """Check positivity of w on a collar of the unit-cube boundary.

    Samples the closed collar of the given margin, boundary included,
    on all six faces.  ok means every sampled value was finite and
    strictly positive; lower_bound is the smallest value seen and
    witness the point where it was attained.  Weights that vanish on
    the boundary itself fail here even though they may be perfectly
    integrable.
    """
    margin = float(boundary_margin)
    if not 0.0 < margin < 0.5:
        raise ValueError("margin must lie in (0, inradius)")
    uv = np.linspace(0.0, 1.0, 17)
    depths = np.linspace(0.0, margin, 5)
    U, V, T = np.meshgrid(uv, uv, depths, indexing="ij")
    u, v, t = U.ravel(), V.ravel(), T.ravel()
    chunks = []
    for axis in range(3):
        for side in (0.0, 1.0):
            pts = np.empty((len(u), 3))
            pts[:, axis] = side + (1.0 - 2.0 * side) * t
            pts[:, (axis + 1) % 3] = u
            pts[:, (axis + 2) % 3] = v
            chunks.append(pts)
    pts = np.concatenate(chunks)
    try:
        vals = w.eval(pts)
    except SingularWeightError:
        return RestrictedClassReport(ok=False, lower_bound=float("nan"), witness=None)
    i = int(np.argmin(vals))
    low = float(vals[i])
    ok = bool(np.all(np.isfinite(vals)) and low > 0.0)
    return RestrictedClassReport(ok=ok, lower_bound=low, witness=tuple(pts[i]))


def _check_grid(samples):
    a = np.asarray(samples, dtype=float)
    if a.ndim != 3 or len(set(a.shape)) != 1:
        raise ValueError("samples must form a cubic grid")
    m = a.shape[0]
    if m & (m - 1):
        raise ValueError("grid side must be a power of two")
    return a, m


def maximal_hl(samples, index=None):
    """Discrete Hardy-Littlewood maximal function on a dyadic grid.

    For each grid cell, the maximum of the average of |samples| over
    the dyadic blocks containing it, the cell itself included.  Returns
    the full grid, or one value when index is given.
    """
    a, m = _check_grid(samples)
    out = np.abs(a).copy()
    absa = np.abs(a)
    side = 2
    while side <= m:
        up = np.repeat(
            np.repeat(np.repeat(_block_mean(absa, side), side, 0), side, 1), side, 2
        )
        np.maximum(out, up, out=out)
        side *= 2
    if index is None:
        return out
    return float(out[tuple(index)])


def maximal_sharp(samples, index=None):
    """Discrete sharp maximal function on a dyadic grid.

    Per dyadic block the oscillation average |samples - block mean| is
    averaged; each cell reports the maximum over its containing blocks.
    Constant grids map to zero.
    """
    a, m = _check_grid(samples)
    out = np.zeros_like(a)
    side = 2
    while side <= m:
        mean = np.repeat(
            np.repeat(np.repeat(_block_mean(a, side), side, 0), side, 1), side, 2
        )
        osc = np.repeat(
            np.repeat(
                np.repeat(_block_mean(np.abs(a - mean), side), side, 0), side, 1
            ),
            side,
            2,
        )
        np.maximum(out, osc, out=out)
        side *= 2
    if index is None:
        return out
    return float(out[tuple(index)])


def _bump_profile(t):
    # 1 for t <= 1, quintic smoothstep down, 0 for t >= 3/2; C1 at both ends
    u = np.clip((t - 1.0) * 2.0, 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _axis_intervals(center, side):
    """Breakpoints per axis: six equal cells across D plus outer padding.

    D = (3/2)Q splits into cells of size side/4 whose boundaries include
    both the faces of Q and of D, so every integrand in the splitting is
    smooth on each cell.  The outer region is cut into comparable cells.
    """
    quarter = side / 4.0
    lo = center - 1.5 * quarter * 2.0  # center - 0.75*side
    breaks = [lo + j * quarter for j in range(7)]
    parts = []
    left = breaks[0]
    if left > 1e-14:
        k = max(1, int(np.ceil(left / max(quarter, 1.0 / 12.0))))
        parts.extend(np.linspace(0.0, left, k + 1)[:-1])
    parts.extend(breaks[:-1])
    right = breaks[-1]
    tail = [right]
    if right < 1.0 - 1e-14:
        k = max(1, int(np.ceil((1.0 - right) / max(quarter, 1.0 / 12.0))))
        tail = np.linspace(right, 1.0, k + 1)[:-1].tolist()
    parts.extend(tail)
    parts.append(1.0)
    return np.asarray(parts)


def _grid_points(bx, by, bz):
    """Composite Gauss points and weights for a tensor cell partition."""
    gx, gw = _gauss4()

    def axis(b):
        h = np.diff(b)
        pts = (b[:-1, None] + h[:, None] * gx[None, :]).ravel()
        wts = (h[:, None] * gw[None, :]).ravel()
        return pts, wts

    px, wx = axis(bx)
    py, wy = axis(by)
    pz, wz = axis(bz)
    P = np.stack(
        [
            np.repeat(px, len(py) * len(pz)),
            np.tile(np.repeat(py, len(pz)), len(px)),
            np.tile(pz, len(px) * len(py)),
        ],
        axis=1,
    )
    W = (wx[:, None, None] * wy[None, :, None] * wz[None, None, :]).ravel()
    return P, W


def decompose_zero_mean(g, cube_center, cube_side, weight, q):
    """Split a zero-mean field against a cube Q with (3/2)Q inside.

    Returns closures g1, g2 with g = g1 + g2, supp g1 in (3/2)Q, supp g2
    away from Q, both zero-mean, plus a report with the measured weighted
    norm ratios.  g1 = phi*g - (chi_A/|A|) * integral of phi*g, with phi
    a cube-radial quintic bump equal to 1 on Q and 0 outside D = (3/2)Q,
    and A = D minus Q.
    """
    c = np.asarray(cube_center, dtype=float)
    s = float(cube_side)
    if s <= 0:
        raise ValueError("cube side must be positive")
    if np.any(c - 0.75 * s < -1e-12) or np.any(c + 0.75 * s > 1.0 + 1e-12):
        raise ValueError("the dilated cube (3/2)Q must stay inside the unit cube")

    half = 0.5 * s

    def radial(x):
        return np.max(np.abs(np.atleast_2d(x) - c), axis=-1) / half

    def phi(x):
        return _bump_profile(radial(x))

    def chi_annulus(x):
        t = radial(x)
        return ((t > 1.0) & (t < 1.5)).astype(float)

    area_measure = (1.5**3 - 1.0) * s**3

    bx = _axis_intervals(c[0], s)
    by = _axis_intervals(c[1], s)
    bz = _axis_intervals(c[2], s)
    pts, wts = _grid_points(bx, by, bz)

    gv = np.asarray(g(pts), dtype=float)
    total = float(wts @ gv)
    l1 = float(wts @ np.abs(gv))
    if l1 > 0 and abs(total) > 1e-10 * l1:
        raise ValueError(
            f"input field is not mean-zero: integral {total:.3e} vs L1 {l1:.3e}"
        )
    correction = float(wts @ (phi(pts) * gv))

    def g1(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return phi(x) * np.asarray(g(x), dtype=float) - (
            chi_annulus(x) / area_measure
        ) * correction

    def g2(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(g(x), dtype=float) - g1(x)

    g1v = g1(pts)
    g2v = gv - g1v
    wv = weight.eval(pts) if weight is not None else np.ones(len(pts))
    qq = float(q)

    def wnorm(v):
        return float((wts @ (wv * np.abs(v) ** qq)) ** (1.0 / qq))

    norm_g = wnorm(gv)
    norm_g1 = wnorm(g1v)
    norm_g2 = wnorm(g2v)
    report = {
        "cube_center": tuple(float(v) for v in c),
        "cube_side": s,
        "correction_integral": correction,
        "annulus_measure": area_measure,
        "integral_g": total,
        "integral_g1": float(wts @ g1v),
        "integral_g2": float(wts @ g2v),
        "l1_g": l1,
        "norm_g": norm_g,
        "norm_g1": norm_g1,
        "norm_g2": norm_g2,
        "ratio_g1": norm_g1 / norm_g if norm_g > 0 else float("nan"),
        "ratio_g2": norm_g2 / norm_g if norm_g > 0 else float("nan"),
        "q": qq,
        "profile": "cube-radial quintic, C1 profile ends",
    }
    return g1, g2, report
