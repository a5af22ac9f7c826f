"""Numerical core kernels with a compiled fast path.

The hot element loops (stiffness/divergence assembly and strain
evaluation at quadrature points) exist twice: a Cython extension
(``_core``) and a pure numpy implementation (``_fallback``) with
identical signatures.  The compiled core is preferred and the fallback
is selected at import time when the extension is missing.  Both produce
the same numbers up to roundoff from summation order.
"""

try:  # pragma: no cover - exercised only when the extension is absent
    from wstokes._kernels import _core as _impl

    backend_name = "compiled"
except ImportError:  # pragma: no cover
    from wstokes._kernels import _fallback as _impl

    backend_name = "fallback"

from wstokes._kernels import _fallback as fallback

accumulate_block_stiffness = _impl.accumulate_block_stiffness
divergence_triplets = _impl.divergence_triplets
velocity_gradients = _impl.velocity_gradients

__all__ = [
    "backend_name",
    "fallback",
    "accumulate_block_stiffness",
    "divergence_triplets",
    "velocity_gradients",
]
