"""Convergence-study orchestration and reporting.

A study runs one case over a ladder of nested meshes obtained by red
refinement from a base lattice, so h halves exactly between levels and
every fine tet knows its ancestor on each coarser level.  Errors are
measured against the exact solution when the case has one, otherwise
against the solution on a finer reference level of the same lineage,
integrated with reference-mesh quadrature (exact for the P2/P1 pair).

Reports serialize to CSV (deterministic bytes for a fixed config and
build: fixed column order, fixed float formatting, no timestamps) and
to JSON (adds timings, solver traces, and the environment stamp).
"""

import csv
import io
import json
import platform
import sys
import time

import numpy as np

from wstokes.mesh import build_cube_mesh, refine_uniform
from wstokes.quadrature import quadrature
from wstokes.spaces import (
    TaylorHoodSpace,
    FEFunction,
    p2_shape_values,
    weighted_norm,
)
from wstokes.weights import WeightField, constant_weight
from wstokes.cases import builtin_case
from wstokes import stokes

_CHUNK = 16384


def compute_eoc(errors, hs=None):
    """log2 ratios of consecutive errors; None marks undefined rows.

    hs, when given, must halve exactly between consecutive entries.
    """
    errors = list(errors)
    if len(errors) < 2:
        raise ValueError("need at least two errors")
    if hs is not None:
        hs = list(hs)
        if len(hs) != len(errors):
            raise ValueError("errors and hs must have equal length")
        for a, b in zip(hs[:-1], hs[1:]):
            if abs(a - 2.0 * b) > 1e-12 * abs(a):
                raise ValueError("hs must decrease by exact factor 2")
    out = []
    for e0, e1 in zip(errors[:-1], errors[1:]):
        if e0 is None or e1 is None or e0 <= 0.0 or e1 <= 0.0:
            out.append(None)
        else:
            out.append(float(np.log2(e0 / e1)))
    return out


def build_lineage(base_n, count):
    """count nested meshes starting from the base_n cube lattice."""
    meshes = [build_cube_mesh(base_n)]
    for _ in range(count - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def ancestor_map(meshes, fine_level, coarse_level):
    """Index array mapping fine-mesh tets to their coarse-level ancestors."""
    ids = np.arange(meshes[fine_level].n_tets)
    for lev in range(fine_level, coarse_level, -1):
        ids = meshes[lev].parents[ids]
    return ids


def reference_error(ref_fun, coarse_fun, ancestors, derivative="none", quad_order=4):
    """L2 distance between same-role fields on nested meshes.

    Integration runs over the reference mesh; the coarse field is read
    through the ancestor map, so the quadrature is exact for the pair.
    """
    ref_space = ref_fun.space
    coarse_space = coarse_fun.space
    rule = quadrature(quad_order)
    verts = ref_space.mesh.tet_vertices()
    gradL_c, _ = coarse_space.geometry()
    v0_c = coarse_space.mesh.tet_vertices()[:, 0, :]
    _, vols6 = ref_space.geometry()
    total = 0.0
    T = ref_space.mesh.n_tets
    nq = len(rule.weights)
    for lo in range(0, T, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, T))
        ref_ids = np.arange(sl.start, sl.stop)
        pts = np.einsum("qa,tad->tqd", rule.points, verts[sl])  # (C,nq,3)
        anc = ancestors[sl]
        # barycentric coordinates in the ancestor tet: affine in x
        rel = pts - v0_c[anc][:, None, :]
        lam = np.einsum("tab,tqb->tqa", gradL_c[anc], rel)
        lam[:, :, 0] += 1.0
        if derivative == "none":
            rv = _eval_at(ref_fun, ref_ids, np.broadcast_to(rule.points, (len(anc), nq, 4)))
            cv = _eval_at(coarse_fun, anc, lam)
            diff2 = np.sum((rv - cv) ** 2, axis=-1) if rv.ndim == 3 else (rv - cv) ** 2
        elif derivative in ("gradient", "symmetric_gradient"):
            rg = _grad_at(ref_fun, ref_ids, np.broadcast_to(rule.points, (len(anc), nq, 4)))
            cg = _grad_at(coarse_fun, anc, lam)
            d = rg - cg
            if derivative == "symmetric_gradient" and d.ndim == 4:
                d = 0.5 * (d + np.swapaxes(d, 2, 3))
            diff2 = np.sum(d * d, axis=tuple(range(2, d.ndim)))
        else:
            raise ValueError(f"unknown derivative {derivative!r}")
        total += float(np.einsum("tq,q,t->", diff2, rule.weights, vols6[sl]))
    return float(np.sqrt(total))


def _eval_at(fun, tet_ids, lam):
    """(C,nq,·) values of a FE field at barycentric points per tet."""
    space = fun.space
    if fun.role == "velocity":
        shp = p2_shape_values(lam.reshape(-1, 4)).reshape(lam.shape[0], lam.shape[1], 10)
        vals = fun.node_values[space.elem_nodes[tet_ids]]  # (C,10,3)
        return np.einsum("tqk,tkc->tqc", shp, vals)
    vals = fun.coeffs[space.mesh.tets[tet_ids]]  # (C,4)
    return np.einsum("tqa,ta->tq", lam, vals)


def _grad_at(fun, tet_ids, lam):
    from wstokes.spaces import p2_shape_derivs

    space = fun.space
    gradL, _ = space.geometry()
    g = gradL[tet_ids]
    if fun.role == "velocity":
        dsh = p2_shape_derivs(lam.reshape(-1, 4)).reshape(
            lam.shape[0], lam.shape[1], 10, 4
        )
        phys = np.einsum("tqka,tab->tqkb", dsh, g)
        vals = fun.node_values[space.elem_nodes[tet_ids]]
        return np.einsum("tkc,tqkb->tqcb", vals, phys)
    vals = fun.coeffs[space.mesh.tets[tet_ids]]
    out = np.einsum("ta,tab->tb", vals, g)
    return np.broadcast_to(out[:, None, :], (len(tet_ids), lam.shape[1], 3))


def _norm_name(spec):
    if "name" in spec:
        return spec["name"]
    field = spec.get("field", "velocity")
    der = {"none": "L2", "gradient": "grad", "symmetric_gradient": "eps"}[
        spec.get("derivative", "none")
    ]
    tag = f"err_{field}_{der}"
    if spec.get("weight") is not None:
        tag += "_w"
    if spec.get("q", 2.0) != 2.0:
        tag += f"_q{spec['q']:g}"
    return tag


def _parse_weight(entry):
    if entry is None:
        return None
    if isinstance(entry, WeightField):
        return entry
    return WeightField.from_spec(entry)


class StudyReport:
    """Per-level study results with deterministic serialization."""

    def __init__(self, case, model, rows, norm_names, eocs, environment,
                 stability=None, traces=None):
        self.case = case
        self.model = model
        self.rows = rows
        self.norm_names = norm_names
        self.eocs = eocs
        self.environment = environment
        self.stability = stability
        self.traces = traces or []

    def errors(self, name):
        return [row["errors"][name] for row in self.rows]

    def to_csv_bytes(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["level", "h", "n_velocity_dofs", "n_pressure_dofs"]
        for name in self.norm_names:
            header.append(name)
        for name in self.norm_names:
            header.append(f"eoc_{name}")
        if self.stability is not None:
            header.append("stability_ratio")
        writer.writerow(header)
        for i, row in enumerate(self.rows):
            rec = [
                str(row["level"]),
                _fmt(row["h"]),
                str(row["n_velocity_dofs"]),
                str(row["n_pressure_dofs"]),
            ]
            for name in self.norm_names:
                rec.append(_fmt(row["errors"][name]))
            for name in self.norm_names:
                val = self.eocs[name][i - 1] if i > 0 else None
                rec.append("" if val is None else _fmt(val))
            if self.stability is not None:
                rec.append(_fmt(self.stability[i]))
            writer.writerow(rec)
        return buf.getvalue().encode()

    def to_json(self):
        payload = {
            "case": self.case,
            "model": self.model,
            "levels": [
                {k: v for k, v in row.items()} for row in self.rows
            ],
            "eoc": self.eocs,
            "environment": self.environment,
        }
        if self.stability is not None:
            payload["stability_ratio"] = self.stability
        if self.traces:
            payload["traces"] = self.traces
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text):
        payload = json.loads(text)
        rows = payload["levels"]
        norm_names = list(payload["eoc"].keys())
        return StudyReport(
            payload["case"],
            payload["model"],
            rows,
            norm_names,
            payload["eoc"],
            payload["environment"],
            payload.get("stability_ratio"),
            payload.get("traces"),
        )


def _fmt(x):
    return format(float(x), ".17g")


def environment_stamp():
    from wstokes import __version__
    from wstokes import _kernels

    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": __import__("scipy").__version__,
        "kernel_backend": _kernels.backend_name,
    }


def _solve_linear_level(space, case, model, solver):
    mu = float(model.get("mu", 1.0))
    system = stokes.assemble_stokes(space, mu)
    if case.has_exact_solution:
        f = case.forcing_tensor(None, mu=mu)
        F = stokes.assemble_rhs_divergence_form(space, f)
    else:
        F = stokes.assemble_rhs_measure(
            space, case.forcing_point, case.forcing_amplitude
        )
    system.set_loads(F, None)
    return stokes.solve_saddle(
        system,
        method=solver.get("method", "auto"),
        tol=float(solver.get("tol", 1e-11)),
    )


def _solve_level(space, case, model, solver):
    kind = model.get("type", "linear")
    if kind == "linear":
        sol = _solve_linear_level(space, case, model, solver)
        return sol.velocity, sol.pressure, sol.stats
    if kind in ("bulicek", "smagorinski"):
        from wstokes import nonnewtonian

        return nonnewtonian.solve_case(space, case, model, solver)
    raise ValueError(f"unknown model type {kind!r}")


def run_study(config):
    """Run a refinement study described by a config mapping.

    Config keys: domain ({"kind": "cube"}), case (builtin name), model
    ({"type": "linear", "mu": ...} or a nonlinear model spec), levels
    (count, with "base_n" for the coarsest lattice), norms (list of
    {field, weight, q, derivative}), solver ({method, tol}), and
    "reference_extra_levels" for cases without an exact solution.
    """
    domain = config.get("domain", {"kind": "cube"})
    if domain.get("kind", "cube") != "cube":
        raise ValueError("only the unit cube domain is built in")
    case = builtin_case(config["case"])
    model = dict(config.get("model", {"type": "linear", "mu": 1.0}))
    levels = int(config["levels"])
    if levels < 3:
        raise ValueError("a study needs at least 3 levels")
    base_n = int(config.get("base_n", 4))
    norms = config.get("norms") or [{"field": "velocity", "derivative": "none"}]
    solver = dict(config.get("solver", {}))
    extra = 0 if case.has_exact_solution else int(config.get("reference_extra_levels", 1))

    meshes = build_lineage(base_n, levels + extra)
    rows = []
    traces = []
    solutions = []
    try:
        for lev in range(levels + extra):
            space = TaylorHoodSpace(meshes[lev])
            t0 = time.perf_counter()
            vel, pres, stats = _solve_level(space, case, model, solver)
            elapsed = time.perf_counter() - t0
            solutions.append((vel, pres))
            traces.append({"level": lev, "stats": stats})
            if lev < levels:
                rows.append(
                    {
                        "level": lev,
                        "h": 1.0 / (base_n * 2**lev),
                        "n_velocity_dofs": space.n_velocity_dofs,
                        "n_pressure_dofs": space.n_pressure_dofs,
                        "errors": {},
                        "time_solve": elapsed,
                    }
                )
    except Exception as exc:
        exc.partial_report = StudyReport(
            case.name, model, rows, [], {}, environment_stamp(), traces=traces
        )
        raise

    norm_names = [_norm_name(spec) for spec in norms]
    ref_level = levels + extra - 1
    for lev in range(levels):
        vel, pres = solutions[lev]
        for spec, name in zip(norms, norm_names):
            field = spec.get("field", "velocity")
            fun = vel if field == "velocity" else pres
            weight = _parse_weight(spec.get("weight"))
            q = float(spec.get("q", 2.0))
            der = spec.get("derivative", "none")
            if case.has_exact_solution:
                exact = {
                    ("velocity", "none"): case.u,
                    ("velocity", "gradient"): case.grad_u,
                    ("velocity", "symmetric_gradient"): case.grad_u,
                    ("pressure", "none"): case.p,
                }[(field, der)]
                err = weighted_norm(fun, weight, q=q, derivative=der, exact=exact)
            else:
                if weight is not None or q != 2.0:
                    raise ValueError(
                        "reference-based errors support unweighted L2-type norms"
                    )
                ref = solutions[ref_level][0 if field == "velocity" else 1]
                anc = ancestor_map(meshes, ref_level, lev)
                err = reference_error(ref, fun, anc, derivative=der)
            rows[lev]["errors"][name] = err

    eocs = {
        name: compute_eoc([row["errors"][name] for row in rows])
        for name in norm_names
    }
    return StudyReport(
        case.name, model, rows, norm_names, eocs, environment_stamp(), traces=traces
    )
