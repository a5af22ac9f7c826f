"""Built-in manufactured cases on the unit cube.

Each case carries closed-form closures for the velocity, its gradient,
and the pressure, all vectorized over (N,3) point arrays.  Velocities
are solenoidal with zero boundary trace by construction; pressures are
mean-zero.  The Dirac case has no exact solution and instead records
its point-forcing data.

Forcing enters through the stress tensor: for a stress closure S the
field f = S(x, eps(u)) - p*I satisfies -div f = -div S + grad p, so
testing f against gradients of the velocity basis yields the exact
weak right-hand side without ever differentiating S.
"""

import numpy as np

CASE_NAMES = ("smooth_curl", "polynomial_bubble", "dirac_point")


def _G(t):
    return t * t * (1.0 - t) ** 2


def _Gp(t):
    return 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def _Gpp(t):
    return 2.0 - 12.0 * t + 12.0 * t * t


class ManufacturedCase:
    """Closed-form case data; closures are vectorized over (N,3)."""

    def __init__(self, name, u=None, grad_u=None, p=None, forcing_point=None,
                 forcing_amplitude=None):
        self.name = name
        self.u = u
        self.grad_u = grad_u
        self.p = p
        self.forcing_point = forcing_point
        self.forcing_amplitude = forcing_amplitude

    @property
    def has_exact_solution(self):
        return self.u is not None

    def forcing_tensor(self, stress, mu=None):
        """Tensor f with weak action int f : grad(v) matching the model.

        stress maps (points, eps) -> stress tensors; the linear model is
        stress(x, e) = 2 mu e, in which case pass stress=None and mu.
        """
        if not self.has_exact_solution:
            raise ValueError(f"case {self.name!r} has no exact solution")
        grad_u, p = self.grad_u, self.p

        def f(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            gu = np.asarray(grad_u(x), dtype=float)
            eps = 0.5 * (gu + np.swapaxes(gu, 1, 2))
            if stress is None:
                S = 2.0 * mu * eps
            else:
                S = np.asarray(stress(x, eps), dtype=float)
            S = S - p(x)[:, None, None] * np.eye(3)[None]
            return S

        return f

    def verify(self, n_samples=1000, seed=2024):
        """Numerical invariant check; returns the measured maxima."""
        rng = np.random.default_rng(seed)
        out = {}
        if self.has_exact_solution:
            pts = rng.random((n_samples, 3))
            gu = np.asarray(self.grad_u(pts), dtype=float)
            out["max_div"] = float(np.abs(np.trace(gu, axis1=1, axis2=2)).max())
            uv, vv = rng.random((n_samples, 2)).T
            bpts = []
            for axis in range(3):
                for side in (0.0, 1.0):
                    q = np.empty((n_samples, 3))
                    q[:, axis] = side
                    q[:, (axis + 1) % 3] = uv
                    q[:, (axis + 2) % 3] = vv
                    bpts.append(q)
            bvals = np.asarray(self.u(np.concatenate(bpts)), dtype=float)
            out["max_boundary"] = float(np.abs(bvals).max())
            # tensor Gauss integral of p over the cube, exact for cubics
            x, w = np.polynomial.legendre.leggauss(4)
            x = 0.5 * (x + 1.0)
            w = 0.5 * w
            X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
            W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
            pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
            out["pressure_mean"] = float(W @ self.p(pts))
        return out


def _smooth_curl():
    # psi = (x(1-x)y(1-y)z(1-z))^2 = G(x)G(y)G(z); u = curl(psi, psi, psi)
    def u(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        gx, gy, gz = _G(X), _G(Y), _G(Z)
        px, py, pz = _Gp(X), _Gp(Y), _Gp(Z)
        dx, dy, dz = px * gy * gz, gx * py * gz, gx * gy * pz
        return np.stack([dy - dz, dz - dx, dx - dy], axis=1)

    def grad_u(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        gx, gy, gz = _G(X), _G(Y), _G(Z)
        px, py, pz = _Gp(X), _Gp(Y), _Gp(Z)
        sx, sy, sz = _Gpp(X), _Gpp(Y), _Gpp(Z)
        # second partials of psi
        p_xy = px * py * gz
        p_xz = px * gy * pz
        p_yz = gx * py * pz
        p_xx = sx * gy * gz
        p_yy = gx * sy * gz
        p_zz = gx * gy * sz
        g = np.empty((len(X), 3, 3))
        g[:, 0, 0] = p_xy - p_xz
        g[:, 0, 1] = p_yy - p_yz
        g[:, 0, 2] = p_yz - p_zz
        g[:, 1, 0] = p_xz - p_xx
        g[:, 1, 1] = p_yz - p_xy
        g[:, 1, 2] = p_zz - p_xz
        g[:, 2, 0] = p_xx - p_xy
        g[:, 2, 1] = p_xy - p_yy
        g[:, 2, 2] = p_xz - p_yz
        return g

    def p(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0] ** 3 + x[:, 1] ** 3 + x[:, 2] ** 3 - 0.75

    return ManufacturedCase("smooth_curl", u=u, grad_u=grad_u, p=p)


def _polynomial_bubble():
    # u = (X Y' Z, -X' Y Z, 0) with X = x^2(1-x)^2, Y likewise, Z = z(1-z):
    # solenoidal by construction, vanishes on every face, total degree 9.
    # No solenoidal polynomial bubble of degree <= 2 exists (any component
    # vanishing on all six faces is divisible by the six linear factors).
    def X(t):
        return t * t * (1.0 - t) ** 2

    def Xp(t):
        return 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)

    def Xpp(t):
        return 2.0 - 12.0 * t + 12.0 * t * t

    def Z(t):
        return t * (1.0 - t)

    def Zp(t):
        return 1.0 - 2.0 * t

    def u(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, b, c = x[:, 0], x[:, 1], x[:, 2]
        return np.stack(
            [X(a) * Xp(b) * Z(c), -Xp(a) * X(b) * Z(c), np.zeros_like(a)], axis=1
        )

    def grad_u(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, b, c = x[:, 0], x[:, 1], x[:, 2]
        g = np.zeros((len(a), 3, 3))
        g[:, 0, 0] = Xp(a) * Xp(b) * Z(c)
        g[:, 0, 1] = X(a) * Xpp(b) * Z(c)
        g[:, 0, 2] = X(a) * Xp(b) * Zp(c)
        g[:, 1, 0] = -Xpp(a) * X(b) * Z(c)
        g[:, 1, 1] = -Xp(a) * Xp(b) * Z(c)
        g[:, 1, 2] = -Xp(a) * X(b) * Zp(c)
        return g

    def p(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0] + x[:, 1] + x[:, 2] - 1.5

    return ManufacturedCase("polynomial_bubble", u=u, grad_u=grad_u, p=p)


def scaled_case(base, amplitude):
    """The same fields scaled by a constant; solenoidality, boundary
    values and the pressure mean are all preserved."""
    if not base.has_exact_solution:
        raise ValueError(f"case {base.name!r} has no fields to scale")
    a = float(amplitude)
    return ManufacturedCase(
        f"{base.name}_x{a:g}",
        u=lambda x: a * base.u(x),
        grad_u=lambda x: a * base.grad_u(x),
        p=lambda x: a * base.p(x),
    )


def builtin_case(name):
    """Look up a built-in case by name."""
    if name == "smooth_curl":
        return _smooth_curl()
    if name == "polynomial_bubble":
        return _polynomial_bubble()
    if name == "dirac_point":
        return ManufacturedCase(
            "dirac_point",
            forcing_point=np.array([0.52, 0.5, 0.5]),
            forcing_amplitude=np.array([1.0, 0.0, 0.0]),
        )
    raise ValueError(f"unknown case {name!r}; valid names: {', '.join(CASE_NAMES)}")
