"""Command line front end.

Subcommands: `study run` drives a convergence study from a JSON
config, `study list-cases` enumerates manufactured cases, `mesh
make-cube` writes a structured mesh file, `weights aq` samples a
Muckenhoupt characteristic, and `infsup` measures the discrete
inf-sup constant of a stored mesh.
"""

import argparse
import json
import sys

from wstokes.cases import CASE_NAMES, builtin_case
from wstokes.errors import SolverError
from wstokes.mesh import build_cube_mesh, read_mesh, write_mesh
from wstokes.weights import WeightField, estimate_aq


def _cmd_study_run(args):
    from wstokes.study import run_study

    with open(args.config) as fh:
        config = json.load(fh)
    try:
        report = run_study(config)
    except SolverError as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        partial = getattr(exc, "partial_report", None)
        if partial is not None and args.json:
            with open(args.json, "w") as fh:
                fh.write(partial.to_json())
            print(f"partial report written to {args.json}", file=sys.stderr)
        return 1
    cols = report.norm_names
    print(f"case: {report.case}  levels: {len(report.rows)}")
    header = f"{'level':>5} {'h':>12} " + " ".join(f"{c:>14}" for c in cols)
    print(header)
    for row in report.rows:
        vals = " ".join(f"{row['errors'][c]:14.6e}" for c in cols)
        print(f"{row['level']:5d} {row['h']:12.6g} {vals}")
    for name in cols:
        eoc = ["  -  " if e is None else f"{e:.3f}" for e in report.eocs[name]]
        print(f"EOC {name}: {', '.join(eoc)}")
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(report.to_csv_bytes())
        print(f"wrote {args.out}")
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(report.to_json())
        print(f"wrote {args.json}")
    return 0


def _cmd_study_list(args):
    for name in CASE_NAMES:
        case = builtin_case(name)
        kind = "exact pair" if case.has_exact_solution else "point forcing"
        print(f"{name}: {kind}")
    return 0


def _cmd_mesh_make_cube(args):
    mesh = build_cube_mesh(args.n)
    write_mesh(mesh, args.out)
    print(
        f"wrote {args.out}: {mesh.n_vertices} vertices, "
        f"{mesh.n_tets} tets, h_max {mesh.h_max:.6g}"
    )
    return 0


def _cmd_weights_aq(args):
    with open(args.spec) as fh:
        spec = json.load(fh)
    w = WeightField.from_spec(spec)
    est = estimate_aq(w, args.q, args.depth)
    print(f"A_{args.q:g} characteristic >= {est.value:.6g}")
    center = ", ".join(f"{float(c):g}" for c in est.argmax_center)
    print(
        f"attained on the cube centered ({center}) "
        f"with side {est.argmax_side:g} (depth {est.depth})"
    )
    return 0


def _cmd_infsup(args):
    from wstokes.spaces import TaylorHoodSpace
    from wstokes.stokes import discrete_infsup

    mesh = read_mesh(args.mesh)
    space = TaylorHoodSpace(mesh)
    result = discrete_infsup(space)
    print(f"beta_h = {result.beta:.6g}")
    print(
        f"{result.path} path, {result.iterations} iterations, "
        f"residual {result.residual:.3g}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wstokes",
        description="weighted Stokes and non-Newtonian study driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", help="convergence studies")
    study_sub = study.add_subparsers(dest="study_command", required=True)
    run = study_sub.add_parser("run", help="run a study from a JSON config")
    run.add_argument("config", help="study config JSON path")
    run.add_argument("--out", help="write the report as CSV")
    run.add_argument("--json", help="write the report as JSON")
    run.set_defaults(func=_cmd_study_run)
    lst = study_sub.add_parser("list-cases", help="list manufactured cases")
    lst.set_defaults(func=_cmd_study_list)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    mesh_sub = mesh.add_subparsers(dest="mesh_command", required=True)
    mk = mesh_sub.add_parser("make-cube", help="structured unit-cube mesh")
    mk.add_argument("--n", type=int, required=True, help="subdivisions per axis")
    mk.add_argument("--out", required=True, help="output mesh path")
    mk.set_defaults(func=_cmd_mesh_make_cube)

    weights = sub.add_parser("weights", help="weight diagnostics")
    weights_sub = weights.add_subparsers(dest="weights_command", required=True)
    aq = weights_sub.add_parser("aq", help="sample a Muckenhoupt characteristic")
    aq.add_argument("--spec", required=True, help="weight spec JSON path")
    aq.add_argument("--q", type=float, required=True, help="exponent q > 1")
    aq.add_argument("--depth", type=int, required=True, help="dyadic depth")
    aq.set_defaults(func=_cmd_weights_aq)

    infsup = sub.add_parser("infsup", help="discrete inf-sup constant")
    infsup.add_argument("--mesh", required=True, help="mesh file path")
    infsup.set_defaults(func=_cmd_infsup)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
