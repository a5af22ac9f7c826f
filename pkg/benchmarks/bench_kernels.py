"""Timing comparison of the compiled and numpy kernel backends.

Runs the three hot kernels on a real Kuhn-mesh geometry at a few sizes
and prints per-call times plus the end-to-end Stokes assembly wall time
under each backend.  Usage: python benchmarks/bench_kernels.py [n ...]
with lattice resolutions as arguments (default 8 16).
"""

import sys
import time

import numpy as np

from wstokes import _kernels as K
from wstokes.mesh import build_cube_mesh
from wstokes.quadrature import quadrature
from wstokes.spaces import TaylorHoodSpace, p2_shape_derivs
from wstokes.stokes import _block_pattern, _interior_node_map, assemble_stokes

try:
    from wstokes._kernels import _core
except ImportError:
    _core = None


def _time(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(n):
    mesh = build_cube_mesh(n)
    space = TaylorHoodSpace(mesh)
    rule = quadrature(3)
    dshape = p2_shape_derivs(rule.points)
    gradL, vols6 = space.geometry()
    interior, rmap = _interior_node_map(space)
    slots, cols, indptr, nb = _block_pattern(space, rmap, len(interior))
    rng = np.random.default_rng(0)
    u = rng.standard_normal((space.n_nodes, 3))
    coeff = rng.uniform(0.5, 1.5, (mesh.n_tets, len(rule.weights)))

    backends = [("fallback", K.fallback)]
    if _core is not None:
        backends.append(("compiled", _core))

    print(f"n={n}: {mesh.n_tets} tets, {nb} interior node pairs")
    rows = []
    for name, impl in backends:
        data = np.zeros((nb + 1, 3, 3))
        t_stiff = _time(
            lambda: impl.accumulate_block_stiffness(
                gradL, vols6, rule.weights, dshape, coeff, slots, data, 0
            )
        )
        t_div = _time(
            lambda: impl.divergence_triplets(
                gradL, vols6, rule.weights, dshape, rule.points
            )
        )
        t_grad = _time(
            lambda: impl.velocity_gradients(u, space.elem_nodes, gradL, dshape)
        )
        rows.append((name, t_stiff, t_div, t_grad))
        print(
            f"  {name:9s} stiffness {t_stiff * 1e3:8.1f} ms   "
            f"divergence {t_div * 1e3:8.1f} ms   "
            f"strain eval {t_grad * 1e3:8.1f} ms"
        )
    if len(rows) == 2:
        f, c = rows
        print(
            f"  speedup   stiffness {f[1] / c[1]:8.2f} x    "
            f"divergence {f[2] / c[2]:8.2f} x    "
            f"strain eval {f[3] / c[3]:8.2f} x"
        )

    t_asm = _time(lambda: assemble_stokes(space, 1.0), repeats=1)
    print(f"  full Stokes assembly (selected backend): {t_asm * 1e3:.0f} ms")


def main(argv=None):
    sizes = [int(a) for a in (argv or sys.argv[1:])] or [8, 16]
    print(f"selected backend: {K.backend_name}")
    for n in sizes:
        bench(n)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
