"""Constitutive stress models and monotone nonlinear solvers.

The stress kinds share the viscosity-times-strain structure
S(x, Q) = nu(x, |Q^s|) Q^s with Q^s the symmetric part, so every model
returns symmetric tensors and vanishes at Q = 0.  Assumption checking
samples the structural hypotheses (coercivity, growth, linearity at
infinity, strict monotonicity, asymptotic Uhlenbeck) on a grid of
points and a ladder of strain norms and reports verdicts with concrete
witnesses; trends that do not move monotonically along the ladder come
back "inconclusive" rather than pass or fail.

Two nonlinear solvers are provided.  The Picard solver iterates the
linear Stokes operator with the stress defect folded into the right
hand side.  The Smagorinski solver runs a frozen-viscosity iteration
with a backtracking line search on the discrete energy; its energy is
built from the same regularized viscosity as the operator, so the
Gateaux-derivative identity holds at quadrature precision.  A
convection variant freezes the transport velocity and adds the
skew-symmetrized trilinear form, which contributes exactly zero to the
energy balance.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from wstokes import _kernels as kernels
from wstokes.quadrature import quadrature
from wstokes.spaces import (
    FEFunction,
    TaylorHoodSpace,
    p2_shape_derivs,
    p2_shape_values,
    weighted_norm,
)
from wstokes.weights import (
    WeightField,
    boundary_distance_weight,
    constant_weight,
    custom_weight,
)
from wstokes import stokes

_CHUNK = 8192
_EPS_REG = 1e-8

_KINDS = (
    "linear",
    "bounded_perturbation",
    "smagorinski_generalized",
    "smagorinski_distance",
)


@dataclass(frozen=True)
class StressModel:
    """Constitutive law S(x, Q) = nu(x, |Q^s|) Q^s.

    The spatial coefficient (chi for bounded_perturbation, omega for
    smagorinski_generalized) is the weight field itself; mu_nl scales
    only the smagorinski_distance law mu + mu_nl dist^alpha |Q^s|.
    """

    kind: str
    mu: float = 1.0
    mu_nl: float = 1.0
    q: float = 2.0
    alpha: float = 0.0
    weight: WeightField = None

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in _KINDS:
            raise ValueError(
                f"unknown stress kind {self.kind!r}; valid kinds: {', '.join(_KINDS)}"
            )
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if kind == "smagorinski_generalized" and not self.q > 1:
            raise ValueError("power-law index q must exceed 1")
        if self.weight is None and kind in (
            "bounded_perturbation",
            "smagorinski_generalized",
        ):
            object.__setattr__(self, "weight", constant_weight())

    def to_spec(self):
        spec = {"kind": self.kind, "mu": self.mu}
        if self.kind == "smagorinski_distance":
            spec.update({"mu_nl": self.mu_nl, "alpha": self.alpha})
        elif self.kind == "smagorinski_generalized":
            spec.update({"q": self.q, "weight": self.weight.to_spec()})
        elif self.kind == "bounded_perturbation":
            spec["weight"] = self.weight.to_spec()
        return spec

    @staticmethod
    def from_spec(spec):
        spec = dict(spec)
        weight = spec.pop("weight", None)
        if weight is not None and not isinstance(weight, WeightField):
            weight = WeightField.from_spec(weight)
        return StressModel(
            kind=spec.pop("kind"),
            mu=float(spec.pop("mu", 1.0)),
            mu_nl=float(spec.pop("mu_nl", 1.0)),
            q=float(spec.pop("q", 2.0)),
            alpha=float(spec.pop("alpha", 0.0)),
            weight=weight,
        )

    # effective power-law data: every kind maps onto (q, omega closure)
    def _power_data(self):
        if self.kind == "linear":
            return 2.0, None
        if self.kind == "bounded_perturbation":
            return None, self.weight
        if self.kind == "smagorinski_generalized":
            return self.q, self.weight
        dist = boundary_distance_weight(self.alpha)

        def omega(x):
            return self.mu_nl * dist.eval(x)

        return 3.0, omega


def _distance_omega(model):
    """The coefficient mu_nl dist(x)^alpha as an evaluable weight."""
    base = boundary_distance_weight(model.alpha)
    return custom_weight(
        lambda x: model.mu_nl * base.eval(x), singular=base.is_singular
    )


def _omega_values(model, pts):
    _, om = model._power_data()
    if om is None:
        return None
    if callable(om):
        return np.asarray(om(pts), dtype=float)
    return om.eval(pts)


def viscosity_values(model, pts, eps_mag, regularize=True):
    """Pointwise nu(x, m) = mu + omega(x) m^(q-2) with the q < 2 strain
    regularization m -> (m^2 + eps_reg^2)^(1/2) when requested."""
    m = np.asarray(eps_mag, dtype=float)
    if model.kind == "linear":
        return np.full(m.shape, model.mu)
    if model.kind == "bounded_perturbation":
        chi = _omega_values(model, pts).reshape(m.shape)
        return model.mu + chi / (1.0 + m)
    q = model.q if model.kind == "smagorinski_generalized" else 3.0
    om = _omega_values(model, pts)
    om = om.reshape(m.shape) if om is not None else 0.0
    if q == 2.0:
        return model.mu + om * np.ones_like(m)
    if q < 2.0:
        if regularize:
            return model.mu + om * (m * m + _EPS_REG**2) ** ((q - 2.0) / 2.0)
        with np.errstate(divide="ignore"):
            power = np.where(m > 0.0, m, 1.0) ** (q - 2.0)
        return model.mu + np.where(m > 0.0, om * power, 0.0)
    return model.mu + om * m ** (q - 2.0)


def stress_values(model, pts, grads):
    """Batch stress: (N,3,3) symmetric tensors from velocity gradients."""
    grads = np.asarray(grads, dtype=float)
    eps = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    m = np.sqrt(np.sum(eps * eps, axis=(-2, -1)))
    nu = viscosity_values(model, pts, m, regularize=False)
    return nu[..., None, None] * eps


def eval_stress(model, x, Q):
    """Stress at one point for one (not necessarily symmetric) matrix."""
    x = np.asarray(x, dtype=float).reshape(1, 3)
    Q = np.asarray(Q, dtype=float).reshape(1, 3, 3)
    return stress_values(model, x, Q)[0]


@dataclass
class AssumptionReport:
    """Sampled verdicts for the structural stress hypotheses."""

    checks: dict

    @property
    def passed(self):
        return all(c["verdict"] == "pass" for c in self.checks.values())

    def verdict(self, name):
        return self.checks[name]["verdict"]


def _trend_verdict(rung_means, witness_samples, zero_tol=1e-12):
    """pass on a decreasing ladder trend, fail on an increasing one."""
    m = np.asarray(rung_means, dtype=float)
    if m.max() <= zero_tol:
        return "pass", None
    d = np.diff(m)
    if np.all(d <= 1e-12 * m.max()):
        return "pass", None
    if np.all(d >= -1e-12 * m.max()):
        return "fail", witness_samples[-1]
    return "inconclusive", None


def _random_symmetric(rng, norm):
    A = rng.standard_normal((3, 3))
    S = 0.5 * (A + A.T)
    return S * (norm / np.linalg.norm(S))


def check_assumptions(model, sample_plan=None):
    """Numerically probe the five structural assumptions on the stress.

    The plan holds the x-grid size, directions per norm rung, the rung
    norms, and the seed.  Failures carry a witness (x, Q, quotient).
    """
    plan = {
        "n_points": 5,
        "n_directions": 6,
        "norms": (1e-2, 1.0, 1e2, 1e4),
        "seed": 0,
    }
    if sample_plan:
        plan.update(sample_plan)
    rng = np.random.default_rng(plan["seed"])
    grid = np.linspace(0.15, 0.85, max(2, int(np.ceil(plan["n_points"] ** (1 / 3)))))
    xs = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"), axis=-1).reshape(-1, 3)
    xs = xs[: plan["n_points"]]
    norms = list(plan["norms"])
    mu = model.mu

    checks = {}
    coercivity_c = np.inf
    coercivity_witness = None
    growth = {"rungs": [], "witness": []}
    linearity = {"rungs": [], "witness": []}
    uhlen = {"rungs": [], "witness": []}
    mono_min = np.inf
    mono_witness = None

    for x in xs:
        samples = {}
        for norm in norms:
            samples[norm] = [
                _random_symmetric(rng, norm) for _ in range(plan["n_directions"])
            ]
        flat = [(n, Q) for n in norms for Q in samples[n]]
        # strict monotonicity over all pairs at this x
        stresses = {id(Q): eval_stress(model, x, Q) for _, Q in flat}
        for a in range(len(flat)):
            for b in range(a + 1, len(flat)):
                Qa, Qb = flat[a][1], flat[b][1]
                d = float(np.sum((stresses[id(Qa)] - stresses[id(Qb)]) * (Qa - Qb)))
                scale = float(np.linalg.norm(Qa - Qb)) ** 2
                if scale > 0:
                    val = d / scale
                    if val < mono_min:
                        mono_min = val
                        mono_witness = {
                            "x": x.tolist(),
                            "Q": Qa.tolist(),
                            "P": Qb.tolist(),
                            "quotient": val,
                        }
        for norm in norms:
            for Q in samples[norm]:
                S = stresses[id(Q)]
                sq = float(np.sum(S * Q))
                m2 = float(np.sum(Q * Q))
                if m2 > 1.0:
                    c = sq / (m2 - 1.0)
                    if c < coercivity_c:
                        coercivity_c = c
                        coercivity_witness = {
                            "x": x.tolist(),
                            "Q": Q.tolist(),
                            "quotient": c,
                        }

    h_dirs = [_random_symmetric(rng, 1.0) for _ in range(3)]
    for norm in norms:
        g_vals, l_vals, u_vals = [], [], []
        g_wit = l_wit = u_wit = None
        for x in xs:
            for _ in range(plan["n_directions"]):
                Q = _random_symmetric(rng, norm)
                S = eval_stress(model, x, Q)
                g = float(np.linalg.norm(S)) / (1.0 + norm)
                l = float(np.linalg.norm(S - mu * Q)) / norm
                if g_wit is None or g > g_wit["quotient"]:
                    g_wit = {"x": x.tolist(), "Q": Q.tolist(), "quotient": g}
                if l_wit is None or l > l_wit["quotient"]:
                    l_wit = {"x": x.tolist(), "Q": Q.tolist(), "quotient": l}
                g_vals.append(g)
                l_vals.append(l)
                # central finite differences of S along symmetric directions
                step = 1e-5 * norm
                for E in h_dirs:
                    Sp = eval_stress(model, x, Q + step * E)
                    Sm = eval_stress(model, x, Q - step * E)
                    D = (Sp - Sm) / (2.0 * step)
                    u = float(np.linalg.norm(D - mu * E)) / float(np.linalg.norm(E))
                    if u_wit is None or u > u_wit["quotient"]:
                        u_wit = {"x": x.tolist(), "Q": Q.tolist(), "quotient": u}
                    u_vals.append(u)
        growth["rungs"].append(float(np.mean(g_vals)))
        growth["witness"].append(g_wit)
        linearity["rungs"].append(float(np.mean(l_vals)))
        linearity["witness"].append(l_wit)
        uhlen["rungs"].append(float(np.mean(u_vals)))
        uhlen["witness"].append(u_wit)

    if coercivity_c > 0:
        checks["coercivity"] = {
            "verdict": "pass",
            "constant": float(coercivity_c),
            "witness": None,
        }
    else:
        checks["coercivity"] = {
            "verdict": "fail",
            "constant": float(coercivity_c),
            "witness": coercivity_witness,
        }

    # growth is bounded iff the quotient saturates along the ladder
    gr = growth["rungs"]
    sat = gr[-1] / max(gr[-2], 1e-30)
    if sat <= 2.0:
        checks["growth"] = {"verdict": "pass", "trend": gr, "witness": None}
    elif sat >= 10.0:
        checks["growth"] = {
            "verdict": "fail",
            "trend": gr,
            "witness": growth["witness"][-1],
        }
    else:
        checks["growth"] = {"verdict": "inconclusive", "trend": gr, "witness": None}

    # differentiation noise floors the finite-difference quotient near
    # 1e-11 mu, so the exact-zero call gets a scale-aware tolerance
    for name, data, z in (
        ("linearity_at_infinity", linearity, 1e-12),
        ("asymptotic_uhlenbeck", uhlen, 1e-8 * max(mu, 1.0)),
    ):
        verdict, wit = _trend_verdict(data["rungs"], data["witness"], zero_tol=z)
        checks[name] = {"verdict": verdict, "trend": data["rungs"], "witness": wit}

    if mono_min > 0:
        checks["strict_monotonicity"] = {
            "verdict": "pass",
            "min_quotient": float(mono_min),
            "witness": None,
        }
    elif mono_min >= -1e-12:
        checks["strict_monotonicity"] = {
            "verdict": "inconclusive",
            "min_quotient": float(mono_min),
            "witness": mono_witness,
        }
    else:
        checks["strict_monotonicity"] = {
            "verdict": "fail",
            "min_quotient": float(mono_min),
            "witness": mono_witness,
        }
    return AssumptionReport(checks)


@dataclass
class NonlinearSolveTrace:
    """Iteration history of a nonlinear solve."""

    increments: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    message: str = ""


def _quad_geometry(space, quad_order):
    rule = quadrature(quad_order)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    verts = space.mesh.tet_vertices()
    return rule, dshape, gradL, vols6, verts


def _physical_points(rule, verts, sl):
    return np.einsum("qa,tad->tqd", rule.points, verts[sl])


def _strain_magnitude_at_quad(space, u_fun, dshape, sl):
    g = kernels.velocity_gradients(
        u_fun.node_values, space.elem_nodes[sl], space.geometry()[0][sl], dshape
    )
    eps = 0.5 * (g + np.swapaxes(g, 2, 3))
    return eps, np.sqrt(np.sum(eps * eps, axis=(2, 3)))


def _nonlinear_action(space, model, vel, pres, quad_order=4):
    """Nodal vector of int S(x, eps(u)):eps(phi) - int p div phi."""
    rule, dshape, gradL, vols6, verts = _quad_geometry(space, quad_order)
    tets = space.mesh.tets
    out = np.zeros((space.n_nodes, 3))
    T = space.mesh.n_tets
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        g = np.einsum("qka,tab->tqkb", dshape, gradL[sl])
        eps, mag = _strain_magnitude_at_quad(space, vel, dshape, sl)
        pts = _physical_points(rule, verts, sl)
        nu = viscosity_values(model, pts.reshape(-1, 3), mag)
        S = nu[..., None, None] * eps
        w = vols6[sl, None] * rule.weights[None, :]
        loc = np.einsum("tqcb,tqkb,tq->tkc", S, g, w)
        pv = np.einsum("qa,ta->tq", rule.points, pres.coeffs[tets[sl]])
        loc -= np.einsum("tq,tqkc,tq->tkc", pv, g, w)
        np.add.at(out, space.elem_nodes[sl], loc)
    return out.ravel()


def _energy(space, model, vel, load_int, system, quad_order=4):
    """Discrete energy J(u) = int A(x, eps(u)) - F.u with the same
    regularization as the assembled viscosity."""
    rule, dshape, gradL, vols6, verts = _quad_geometry(space, quad_order)
    q, _ = model._power_data()
    total = 0.0
    T = space.mesh.n_tets
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        _, mag = _strain_magnitude_at_quad(space, vel, dshape, sl)
        pts = _physical_points(rule, verts, sl)
        dens = 0.5 * model.mu * mag**2
        if model.kind != "linear":
            om = _omega_values(model, pts.reshape(-1, 3))
            om = om.reshape(mag.shape)
            qq = q if q is not None else 2.0
            if model.kind == "bounded_perturbation":
                # potential of chi m/(1+m): chi (m - log(1+m))
                dens = dens + om * (mag - np.log1p(mag))
            elif qq < 2.0:
                m2 = mag * mag + _EPS_REG**2
                dens = dens + om / qq * m2 ** (qq / 2.0)
            else:
                dens = dens + om / qq * mag**qq
        w = vols6[sl, None] * rule.weights[None, :]
        total += float(np.sum(dens * w))
    u_int = system.reduce_velocity(vel.coeffs)
    return total - float(load_int @ u_int)


def _strain_norm_sq(system_unit_A, du_int):
    """\\|eps(du)\\|_{L2}^2 through the mu=1 operator (A = 2 int eps:eps)."""
    return 0.5 * float(du_int @ (system_unit_A @ du_int))


def _assemble_viscosity_matrix(space, model, vel, slots, n_blocks, cols, indptr,
                               quad_order=4):
    rule, dshape, gradL, vols6, verts = _quad_geometry(space, quad_order)
    T = space.mesh.n_tets
    coeff = np.empty((T, len(rule.weights)))
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        _, mag = _strain_magnitude_at_quad(space, vel, dshape, sl)
        pts = _physical_points(rule, verts, sl)
        nu = viscosity_values(model, pts.reshape(-1, 3), mag)
        coeff[sl] = 0.5 * nu  # kernel doubles the integrand
    data = stokes._accumulate_stiffness(
        space, slots, n_blocks, quad_order, mode=0, coeff=coeff
    )
    n_int = (indptr.shape[0] - 1)
    A = sp.bsr_matrix(
        (data[:n_blocks], cols, indptr), shape=(3 * n_int, 3 * n_int)
    )
    return A, float(np.mean(coeff) * 2.0)


def _residual(space, model, vel, pres, load_full, interior):
    act = _nonlinear_action(space, model, vel, pres)
    r = act.reshape(-1, 3)[interior].ravel() - load_full.reshape(-1, 3)[interior].ravel()
    scale = max(float(np.linalg.norm(load_full.reshape(-1, 3)[interior])), 1e-30)
    return float(np.linalg.norm(r)) / scale


def solve_bulicek(space, model, f, tol=1e-10, max_iter=50, method="auto",
                  check=True):
    """Picard iteration folding the stress defect into the right side.

    Each sweep solves the linear Stokes problem with load
    int (f + mu eps(u^k) - S(x, eps(u^k))):grad v; for the linear kind
    the defect vanishes and the first sweep is the fixed point.
    """
    if check:
        report = check_assumptions(
            model, {"n_points": 2, "n_directions": 3, "seed": 7}
        )
        if not report.passed:
            bad = [k for k, v in report.checks.items() if v["verdict"] != "pass"]
            warnings.warn(
                "stress model misses structural assumptions: " + ", ".join(bad),
                stacklevel=2,
            )
    mu = model.mu
    # operator mu int eps:eps matches the stress convention S = nu eps,
    # so the Newtonian assembly (2 mu0 int eps:eps) runs at mu0 = mu/2
    system = stokes.assemble_stokes(space, 0.5 * mu)
    F_f = stokes.assemble_rhs_divergence_form(space, f)
    trace = NonlinearSolveTrace()
    vel = FEFunction(space, "velocity")
    pres = FEFunction(space, "pressure")
    rule, dshape, gradL, vols6, verts = _quad_geometry(space, 4)

    for it in range(1, max_iter + 1):
        # defect load: int (mu eps(u^k) - S(eps(u^k))):eps(phi)
        defect = np.zeros((space.n_nodes, 3))
        T = space.mesh.n_tets
        for lo in range(0, T, _CHUNK):
            sl = slice(lo, min(lo + _CHUNK, T))
            g = np.einsum("qka,tab->tqkb", dshape, gradL[sl])
            eps, mag = _strain_magnitude_at_quad(space, vel, dshape, sl)
            pts = _physical_points(rule, verts, sl)
            nu = viscosity_values(model, pts.reshape(-1, 3), mag)
            tens = (mu - nu)[..., None, None] * eps
            w = vols6[sl, None] * rule.weights[None, :]
            np.add.at(
                defect,
                space.elem_nodes[sl],
                np.einsum("tqcb,tqkb,tq->tkc", tens, g, w),
            )
        system.set_loads(F_f + defect.ravel(), None)
        sol = stokes.solve_saddle(system, method=method)
        du = system.reduce_velocity(sol.velocity.coeffs) - system.reduce_velocity(
            vel.coeffs
        )
        inc = np.sqrt(max(float(du @ (system.A @ du)) / mu, 0.0))  # A = mu int eps:eps
        vel, pres = sol.velocity, sol.pressure
        res = _residual(space, model, vel, pres, F_f, system.interior_nodes)
        trace.increments.append(inc)
        trace.residuals.append(res)
        trace.iterations = it
        if res <= tol or inc <= tol:
            trace.converged = True
            break
    if not trace.converged:
        raise stokes.NonConvergenceError(
            f"Picard stalled after {max_iter} sweeps "
            f"(last increment {trace.increments[-1]:.3e}, "
            f"residual {trace.residuals[-1]:.3e})",
            trace=trace,
        )
    trace.message = "picard"
    return vel, pres, trace


def divergence_infnorm(system, vel):
    """max over pressure basis functions of |int r_h div u_h|."""
    return float(
        np.abs(system.B @ system.reduce_velocity(vel.coeffs)).max()
    )


def solve_smagorinski(space, model, f, tol=1e-10, max_iter=60, method="auto",
                      line_search=True, quad_order=4, initial=None):
    """Frozen-viscosity iteration with a monotone energy line search.

    initial optionally seeds the iteration (the fixed point does not
    depend on it; a good seed only saves sweeps).
    """
    if model.kind not in ("smagorinski_generalized", "smagorinski_distance"):
        raise ValueError("solver expects a smagorinski stress kind")
    system = stokes.assemble_stokes(space, 1.0)  # mu=1: A = 2 int eps:eps
    unit_A = system.A
    slots, cols, indptr, n_blocks = stokes._block_pattern(
        space, system.node_rmap, len(system.interior_nodes)
    )
    F_f = stokes.assemble_rhs_divergence_form(space, f)
    F_int = system.reduce_velocity(F_f)
    vel = FEFunction(space, "velocity")
    pres = FEFunction(space, "pressure")
    trace = NonlinearSolveTrace()
    energy = _energy(space, model, vel, F_int, system, quad_order)
    trace.energies.append(energy)
    # the seed only shapes the first frozen viscosity; the state itself
    # starts at zero, so every iterate is a combination of constrained
    # solves and stays discretely divergence-free
    nu_state = initial

    for it in range(1, max_iter + 1):
        A_k, mu_eff = _assemble_viscosity_matrix(
            space, model, vel if nu_state is None else nu_state,
            slots, n_blocks, cols, indptr, quad_order
        )
        nu_state = None
        level = stokes.StokesSystem(
            space,
            0.5 * mu_eff,  # Newtonian-equivalent mu for the Schur scaling
            A_k,
            system.B,
            system.mass_vector,
            system.pressure_mass,
            system.interior_nodes,
            system.node_rmap,
        )
        level.set_loads(F_f, None)
        sol = stokes.solve_saddle(level, method=method)
        d_int = level.reduce_velocity(sol.velocity.coeffs) - level.reduce_velocity(
            vel.coeffs
        )
        inc_full = np.sqrt(_strain_norm_sq(unit_A, d_int))
        theta = 1.0
        if line_search:
            base = trace.energies[-1]
            # slack covers quadrature-sum roundoff at the energy's own
            # scale; a sign error in the derivative overshoots it fast
            eps_E = 1e-10 * max(abs(base), 1.0)
            while theta > 1e-4:
                cand = FEFunction(
                    space,
                    "velocity",
                    vel.coeffs
                    + theta * (sol.velocity.coeffs - vel.coeffs),
                )
                cand_energy = _energy(space, model, cand, F_int, system, quad_order)
                if cand_energy <= base + eps_E:
                    break
                theta *= 0.5
            else:
                raise stokes.NonConvergenceError(
                    "energy increase persisted through backtracking",
                    trace=trace,
                )
            vel = cand
            energy = cand_energy
        else:
            vel = sol.velocity
            energy = _energy(space, model, vel, F_int, system, quad_order)
        pres = sol.pressure
        res = _residual(space, model, vel, pres, F_f, system.interior_nodes)
        trace.increments.append(theta * inc_full)
        trace.energies.append(energy)
        trace.residuals.append(res)
        trace.step_sizes.append(theta)
        trace.iterations = it
        if res <= tol or (theta * inc_full <= tol and res <= 10 * tol):
            trace.converged = True
            break
    if not trace.converged:
        raise stokes.NonConvergenceError(
            f"viscosity iteration stalled after {max_iter} steps "
            f"(last increment {trace.increments[-1]:.3e}, "
            f"residual {trace.residuals[-1]:.3e})",
            trace=trace,
        )
    trace.message = "kacanov"
    return vel, pres, trace


def gateaux_check(space, model, vel, f, n_directions=10, step=1e-6, seed=0,
                  quad_order=4):
    """Relative finite-difference error of the energy derivative.

    Compares (J(u + h d) - J(u - h d)) / 2h against the assembled
    derivative action int nu_reg eps(u):eps(d) - F(d) over random
    interior directions d; returns the largest relative mismatch.
    """
    system = stokes.assemble_stokes(space, 1.0)
    F_f = stokes.assemble_rhs_divergence_form(space, f)
    F_int = system.reduce_velocity(F_f)
    zero_p = FEFunction(space, "pressure")
    action = _nonlinear_action(space, model, vel, zero_p, quad_order)
    act_int = system.reduce_velocity(action) - F_int
    rng = np.random.default_rng(seed)
    scale = max(float(np.linalg.norm(vel.coeffs)), 1.0)
    worst = 0.0
    for _ in range(n_directions):
        d_int = rng.standard_normal(system.n_interior_dofs)
        d_int *= scale / np.linalg.norm(d_int)
        d_full = system.expand_velocity(d_int)
        up = FEFunction(space, "velocity", vel.coeffs + step * d_full)
        um = FEFunction(space, "velocity", vel.coeffs - step * d_full)
        fd = (
            _energy(space, model, up, F_int, system, quad_order)
            - _energy(space, model, um, F_int, system, quad_order)
        ) / (2.0 * step)
        exact = float(act_int @ d_int)
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-30))
    return worst


def _convection_matrix(space, w_fun, interior, rmap, quad_order=4):
    """Skew form 0.5[(w.grad)u.v - (w.grad)v.u]; component-diagonal."""
    rule, dshape, gradL, vols6, verts = _quad_geometry(space, quad_order)
    shp = p2_shape_values(rule.points)  # (nq, 10)
    n_int = len(interior)
    T = space.mesh.n_tets
    rows, colsl, vals = [], [], []
    wq_nodes = w_fun.node_values
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        g = np.einsum("qka,tab->tqkb", dshape, gradL[sl])
        wv = np.einsum("qk,tkc->tqc", shp, wq_nodes[space.elem_nodes[sl]])
        conv = np.einsum("tqc,tqkc->tqk", wv, g)  # (w.grad) phi_k
        w = vols6[sl, None] * rule.weights[None, :]
        loc = 0.5 * (
            np.einsum("tqj,qi,tq->tij", conv, shp, w)
            - np.einsum("tqi,qj,tq->tij", conv, shp, w)
        )
        rn = rmap[space.elem_nodes[sl]]
        ri = np.broadcast_to(rn[:, :, None], loc.shape)
        rj = np.broadcast_to(rn[:, None, :], loc.shape)
        keep = (ri >= 0) & (rj >= 0)
        rows.append(ri[keep])
        colsl.append(rj[keep])
        vals.append(loc[keep])
    C_nodes = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(colsl))),
        shape=(n_int, n_int),
    )
    return sp.kron(C_nodes, sp.eye(3), format="csr")


def stability_functionals(space, model, vel):
    """mu ||eps(u)||^2 and the weighted q-power term of the energy bound."""
    q, om = model._power_data()
    e2 = weighted_norm(vel, None, derivative="symmetric_gradient") ** 2
    if model.kind == "smagorinski_distance":
        w = _distance_omega(model)
        eq = weighted_norm(vel, w, q=3.0, derivative="symmetric_gradient") ** 3
        return model.mu * e2 + eq
    if model.kind == "smagorinski_generalized":
        eq = weighted_norm(vel, model.weight, q=model.q,
                           derivative="symmetric_gradient") ** model.q
        return model.mu * e2 + eq
    return model.mu * e2


def solve_smagorinski_convection(space, model, f, tol=1e-10, max_iter=40,
                                 quad_order=4):
    """Outer Picard on the transport velocity with skew convection.

    Each outer step freezes both the viscosity and the convecting field
    at the previous iterate and solves the resulting nonsymmetric
    saddle system directly.
    """
    if model.kind not in ("smagorinski_generalized", "smagorinski_distance"):
        raise ValueError("solver expects a smagorinski stress kind")
    system = stokes.assemble_stokes(space, 1.0)
    unit_A = system.A
    slots, cols, indptr, n_blocks = stokes._block_pattern(
        space, system.node_rmap, len(system.interior_nodes)
    )
    F_f = stokes.assemble_rhs_divergence_form(space, f)
    F_int = system.reduce_velocity(F_f)
    B, m = system.B, system.mass_vector
    npress = system.n_pressure
    vel = FEFunction(space, "velocity")
    pres = FEFunction(space, "pressure")
    trace = NonlinearSolveTrace()

    for it in range(1, max_iter + 1):
        A_k, _ = _assemble_viscosity_matrix(
            space, model, vel, slots, n_blocks, cols, indptr, quad_order
        )
        C = _convection_matrix(
            space, vel, system.interior_nodes, system.node_rmap, quad_order
        )
        K = sp.bmat(
            [
                [A_k + C, B.T, None],
                [B, None, m[:, None]],
                [None, m[None, :], None],
            ],
            format="csc",
        )
        rhs = np.concatenate([F_int, np.zeros(npress + 1)])
        try:
            x = spla.splu(K).solve(rhs)
        except RuntimeError as exc:
            raise stokes.SolverError(f"convection solve failed: {exc}") from exc
        new_int = x[: 3 * len(system.interior_nodes)]
        du = new_int - system.reduce_velocity(vel.coeffs)
        inc = np.sqrt(_strain_norm_sq(unit_A, du))
        vel = FEFunction(space, "velocity", system.expand_velocity(new_int))
        p = x[3 * len(system.interior_nodes) : -1]
        p = p - (m @ p) / m.sum()
        pres = FEFunction(space, "pressure", p)
        trace.increments.append(inc)
        trace.iterations = it
        if inc <= tol:
            trace.converged = True
            break
    if not trace.converged:
        raise stokes.NonConvergenceError(
            f"convection fixed point stalled after {max_iter} sweeps "
            f"(last increment {trace.increments[-1]:.3e}); a larger mu or "
            "smaller forcing restores contraction",
            trace=trace,
        )
    skew_self = float(
        abs(
            system.reduce_velocity(vel.coeffs)
            @ (
                _convection_matrix(
                    space, vel, system.interior_nodes, system.node_rmap, quad_order
                )
                @ system.reduce_velocity(vel.coeffs)
            )
        )
    )
    trace.message = "convection"
    stats = {
        "skew_self_term": skew_self,
        "stability_lhs": stability_functionals(space, model, vel),
        "divergence_infnorm": divergence_infnorm(system, vel),
    }
    return vel, pres, trace, stats


def smagorinski_error_study(meshes_or_spaces, model, case, tol=1e-10,
                            max_iter=60, method="auto"):
    """Error-functional ratios of the energy estimate across levels.

    Per level the left side is \\|eps(u-u_h)\\|^2 + \\|eps(u-u_h)\\|_{L^q(w)}^q
    and the right side is the same functional shape evaluated at the
    interpolant (with the conjugate power q/(q-1) on the weighted term);
    for q < 2 the left side drops the weighted term and the right side
    uses the first power, matching the degenerate-case estimate.
    """
    from wstokes.spaces import interpolate

    q, om = model._power_data()
    w = _distance_omega(model) if model.kind == "smagorinski_distance" else model.weight

    f = case.forcing_tensor(lambda x, eps: _stress_from_eps(model, x, eps))
    rows = []
    for obj in meshes_or_spaces:
        space = obj if isinstance(obj, TaylorHoodSpace) else TaylorHoodSpace(obj)
        # nested iteration: the interpolated exact field seeds the sweep
        seed = interpolate(space, case.u, "velocity")
        vel, pres, trace = solve_smagorinski(
            space, model, f, tol=tol, max_iter=max_iter, method=method,
            initial=seed,
        )
        e2 = weighted_norm(vel, None, derivative="symmetric_gradient",
                           exact=case.grad_u)
        eq = weighted_norm(vel, w, q=q, derivative="symmetric_gradient",
                           exact=case.grad_u)
        uI = interpolate(space, case.u, "velocity")
        i2 = weighted_norm(uI, None, derivative="symmetric_gradient",
                           exact=case.grad_u)
        iq = weighted_norm(uI, w, q=q, derivative="symmetric_gradient",
                           exact=case.grad_u)
        if q >= 2.0:
            lhs = e2**2 + eq**q
            rhs = i2**2 + iq ** (q / (q - 1.0))
        else:
            lhs = e2**2
            rhs = i2**2 + iq
        rows.append(
            {
                "h": space.mesh.h_max / np.sqrt(3.0),
                "lhs": lhs,
                "rhs": rhs,
                "ratio": lhs / rhs,
                "iterations": trace.iterations,
                "error_eps_l2": e2,
            }
        )
    return rows


def _stress_from_eps(model, x, eps):
    """Stress directly from symmetric strain samples (N,3,3)."""
    m = np.sqrt(np.sum(eps * eps, axis=(-2, -1)))
    nu = viscosity_values(model, np.asarray(x, dtype=float), m, regularize=False)
    return nu[..., None, None] * eps


def solve_case(space, case, model_spec, solver):
    """Study hook: solve a manufactured case under a nonlinear model."""
    model = StressModel.from_spec(
        {k: v for k, v in model_spec.items() if k != "type"}
        | {"kind": model_spec.get("kind", model_spec.get("type"))}
    )
    if not case.has_exact_solution:
        raise ValueError("nonlinear studies need a manufactured case")
    f = case.forcing_tensor(lambda x, eps: _stress_from_eps(model, x, eps))
    tol = float(solver.get("tol", 1e-10))
    max_iter = int(solver.get("max_iter", 60))
    method = solver.get("method", "auto")
    if model_spec.get("type") == "smagorinski" or model.kind.startswith("smagorinski"):
        vel, pres, trace = solve_smagorinski(
            space, model, f, tol=tol, max_iter=max_iter, method=method
        )
    else:
        vel, pres, trace = solve_bulicek(
            space, model, f, tol=tol, max_iter=max_iter, method=method
        )
    stats = {
        "iterations": trace.iterations,
        "converged": trace.converged,
        "residual": trace.residuals[-1] if trace.residuals else None,
    }
    return vel, pres, stats
