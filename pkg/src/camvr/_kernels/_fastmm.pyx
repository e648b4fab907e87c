# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled matrix-multiply kernel with deterministic accumulation order.

Every output element accumulates its products in ascending order of the
contracted index, so results are bit-identical to a scalar triple loop
(the build disables FMA contraction). This is what lets oracle tests
assert exact equality against brute-force references.
"""

import numpy as np


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    if b.shape[0] != k:
        raise ValueError("inner dimensions differ")
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double s
    with nogil:
        for i in range(m):
            for p in range(k):
                s = a[i, p]
                for j in range(n):
                    out[i, j] += s * b[p, j]
    return out_arr
