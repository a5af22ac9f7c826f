"""Pure numpy implementations of the assembly kernels.

Shared conventions:

* ``gradL`` (T, 4, 3): constant barycentric gradients per element.
* ``vols6`` (T,): absolute Jacobian determinant, 6 * volume.
* ``qw`` (nq,): reference weights summing to 1/6.
* ``dshape`` (nq, 10, 4): P2 shape derivatives w.r.t. barycentric coords.
* ``coeff`` (T, nq) or None: coefficient at quadrature points (None = 1).
* physical quadrature weight of point q on element T: qw[q] * vols6[T].

``accumulate_block_stiffness`` adds, for mode 0 (doubled symmetric
gradient, i.e. the integrand 2 eps(phi_i e_c) : eps(phi_j e_d)),

    sum_q W c [ delta_cd grad(phi_i).grad(phi_j) + d_d(phi_i) d_c(phi_j) ]

into 3x3 node blocks of a scalar-pattern CSR, and for mode 1 the plain
gradient form delta_cd grad(phi_i).grad(phi_j).  ``slots`` (T, 10, 10)
maps local pairs to block indices in ``data`` (nblocks, 3, 3).
"""

import numpy as np


def _phys_gradients(gradL, dshape):
    """Physical P2 basis gradients, shape (T, nq, 10, 3)."""
    return np.einsum("qka,tab->tqkb", dshape, gradL)


def _weights(vols6, qw, coeff):
    w = vols6[:, None] * qw[None, :]
    if coeff is not None:
        w = w * coeff
    return w


def accumulate_block_stiffness(gradL, vols6, qw, dshape, coeff, slots, data, mode):
    g = _phys_gradients(gradL, dshape)
    w = _weights(vols6, qw, coeff)
    dot = np.einsum("tqib,tqjb,tq->tij", g, g, w)
    nb = data.shape[0]
    flat = data.reshape(nb * 9)
    eye_idx = np.arange(3) * 3 + np.arange(3)  # diagonal (c, c) offsets
    if mode == 0:
        cross = np.einsum("tqid,tqjc,tq->tijcd", g, g, w)
        base = slots[..., None, None] * 9 + (
            np.arange(3)[:, None] * 3 + np.arange(3)[None, :]
        )
        np.add.at(flat, base.ravel(), cross.ravel())
        diag_idx = slots[..., None] * 9 + eye_idx
        np.add.at(flat, diag_idx.ravel(), np.repeat(dot.ravel(), 3))
    elif mode == 1:
        diag_idx = slots[..., None] * 9 + eye_idx
        np.add.at(flat, diag_idx.ravel(), np.repeat(dot.ravel(), 3))
    else:
        raise ValueError(f"unknown stiffness mode {mode}")


def divergence_triplets(gradL, vols6, qw, dshape, bary, coeff=None):
    """Local divergence matrices, shape (T, 4, 10, 3).

    Entry (a, j, d) is the integral over the element of
    coeff * lambda_a * d_d(phi_j); ``bary`` (nq, 4) are the barycentric
    point coordinates, which equal the P1 shape values.
    """
    g = _phys_gradients(gradL, dshape)
    w = _weights(vols6, qw, coeff)
    return np.einsum("tqjd,qa,tq->tajd", g, bary, w)


def velocity_gradients(u_nodes, elem_nodes, gradL, dshape):
    """Discrete velocity gradient at quadrature points, (T, nq, 3, 3).

    ``u_nodes`` (N, 3) holds nodal values; entry (t, q, c, b) is
    d(u_c)/d(x_b) on element t at point q.
    """
    g = _phys_gradients(gradL, dshape)
    u_loc = u_nodes[elem_nodes]  # (T, 10, 3)
    return np.einsum("tkc,tqkb->tqcb", u_loc, g)
