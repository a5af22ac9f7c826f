# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, language_level=3
"""Compiled twins of the fallback assembly kernels.

Signatures and numerical contracts match ``_fallback`` exactly; the
difference is that the element loops run in C without materializing the
(T, nq, 10, 3) gradient temporaries, which dominates both runtime and
peak memory of the numpy path.  Summation order differs, so results
agree only to roundoff.
"""

import numpy as np

cimport cython
from libc.string cimport memset


cdef inline void _elem_gradients(
    const double[:, :, ::1] dshape,
    const double[:, ::1] gradL_t,
    double[:, :, ::1] g,
    Py_ssize_t nq,
) noexcept nogil:
    # g[q, k, b] = sum_a dshape[q, k, a] * gradL_t[a, b]
    cdef Py_ssize_t q, k, a, b
    cdef double acc
    for q in range(nq):
        for k in range(10):
            for b in range(3):
                acc = 0.0
                for a in range(4):
                    acc += dshape[q, k, a] * gradL_t[a, b]
                g[q, k, b] = acc


def accumulate_block_stiffness(gradL, vols6, qw, dshape, coeff, slots, data, mode):
    cdef double[:, :, ::1] gL = np.ascontiguousarray(gradL, dtype=np.float64)
    cdef double[::1] v6 = np.ascontiguousarray(vols6, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(qw, dtype=np.float64)
    cdef double[:, :, ::1] ds = np.ascontiguousarray(dshape, dtype=np.float64)
    cdef long[:, :, ::1] sl = np.ascontiguousarray(slots, dtype=np.int64)
    cdef double[:, :, ::1] dat = data
    cdef int md = mode
    if md != 0 and md != 1:
        raise ValueError(f"unknown stiffness mode {mode}")
    cdef bint has_c = coeff is not None
    cdef double[:, ::1] cf
    if has_c:
        cf = np.ascontiguousarray(coeff, dtype=np.float64)
    else:
        cf = np.zeros((1, 1))

    cdef Py_ssize_t T = gL.shape[0]
    cdef Py_ssize_t nq = w.shape[0]
    cdef double[:, :, ::1] g = np.empty((nq, 10, 3))
    cdef Py_ssize_t t, q, i, j, c, d, s
    cdef double wq, dot, wd
    with nogil:
        for t in range(T):
            _elem_gradients(ds, gL[t], g, nq)
            for q in range(nq):
                wq = w[q] * v6[t]
                if has_c:
                    wq *= cf[t, q]
                for i in range(10):
                    for j in range(10):
                        s = sl[t, i, j]
                        dot = (
                            g[q, i, 0] * g[q, j, 0]
                            + g[q, i, 1] * g[q, j, 1]
                            + g[q, i, 2] * g[q, j, 2]
                        )
                        wd = wq * dot
                        dat[s, 0, 0] += wd
                        dat[s, 1, 1] += wd
                        dat[s, 2, 2] += wd
                        if md == 0:
                            for c in range(3):
                                for d in range(3):
                                    dat[s, c, d] += wq * g[q, i, d] * g[q, j, c]


def divergence_triplets(gradL, vols6, qw, dshape, bary, coeff=None):
    cdef double[:, :, ::1] gL = np.ascontiguousarray(gradL, dtype=np.float64)
    cdef double[::1] v6 = np.ascontiguousarray(vols6, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(qw, dtype=np.float64)
    cdef double[:, :, ::1] ds = np.ascontiguousarray(dshape, dtype=np.float64)
    cdef double[:, ::1] ba = np.ascontiguousarray(bary, dtype=np.float64)
    cdef bint has_c = coeff is not None
    cdef double[:, ::1] cf
    if has_c:
        cf = np.ascontiguousarray(coeff, dtype=np.float64)
    else:
        cf = np.zeros((1, 1))

    cdef Py_ssize_t T = gL.shape[0]
    cdef Py_ssize_t nq = w.shape[0]
    out_arr = np.zeros((T, 4, 10, 3))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, ::1] g = np.empty((nq, 10, 3))
    cdef Py_ssize_t t, q, a, j, d
    cdef double wq, wa
    with nogil:
        for t in range(T):
            _elem_gradients(ds, gL[t], g, nq)
            for q in range(nq):
                wq = w[q] * v6[t]
                if has_c:
                    wq *= cf[t, q]
                for a in range(4):
                    wa = wq * ba[q, a]
                    for j in range(10):
                        for d in range(3):
                            out[t, a, j, d] += wa * g[q, j, d]
    return out_arr


def velocity_gradients(u_nodes, elem_nodes, gradL, dshape):
    cdef double[:, ::1] un = np.ascontiguousarray(u_nodes, dtype=np.float64)
    cdef long[:, ::1] en = np.ascontiguousarray(elem_nodes, dtype=np.int64)
    cdef double[:, :, ::1] gL = np.ascontiguousarray(gradL, dtype=np.float64)
    cdef double[:, :, ::1] ds = np.ascontiguousarray(dshape, dtype=np.float64)

    cdef Py_ssize_t T = gL.shape[0]
    cdef Py_ssize_t nq = ds.shape[0]
    out_arr = np.zeros((T, nq, 3, 3))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, ::1] g = np.empty((nq, 10, 3))
    cdef double[10][3] u_loc
    cdef Py_ssize_t t, q, k, c, b
    with nogil:
        for t in range(T):
            _elem_gradients(ds, gL[t], g, nq)
            for k in range(10):
                for c in range(3):
                    u_loc[k][c] = un[en[t, k], c]
            for q in range(nq):
                for k in range(10):
                    for c in range(3):
                        for b in range(3):
                            out[t, q, c, b] += u_loc[k][c] * g[q, k, b]
    return out_arr
