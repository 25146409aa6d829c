# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implicit pressure kernel.

Same contract as ``dsinv.kernels._python.run_pressure_steps``: assembles
the banded backward-Euler system, factorises it once with LAPACK dpbtrf
and runs the whole time loop in C, avoiding per-step Python overhead.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite
from scipy.linalg.cython_lapack cimport dpbtrf, dpbtrs

from dsinv.errors import SimulationFailed

cnp.import_array()


def run_pressure_steps(int nx, int ny,
                       double[:, ::1] tx, double[:, ::1] ty,
                       double accum,
                       double[:, ::1] sources,
                       long[::1] steps_per_segment,
                       double[::1] p_init):
    cdef int n = nx * ny
    cdef int kd = nx if ny > 1 else (1 if nx > 1 else 0)
    cdef int ldab = kd + 1
    cdef int ix, iy, c, seg, step, i, row
    cdef int info = 0
    cdef int nrhs = 1
    cdef char uplo = b'L'

    # Column j of the LAPACK band storage lives at ab[j, :]; the C-order
    # (n, ldab) buffer is exactly the column-major (ldab, n) array LAPACK
    # expects. ab[j, r] = A[j + r, j].
    ab_arr = np.zeros((n, ldab))
    cdef double[:, ::1] ab = ab_arr

    for iy in range(ny):
        for ix in range(nx):
            c = ix + nx * iy
            ab[c, 0] = accum
            if nx > 1:
                if ix < nx - 1:
                    ab[c, 0] += tx[iy, ix]
                    ab[c, 1] = -tx[iy, ix]
                if ix > 0:
                    ab[c, 0] += tx[iy, ix - 1]
            if ny > 1:
                if iy < ny - 1:
                    ab[c, 0] += ty[iy, ix]
                    ab[c, kd] = -ty[iy, ix]
                if iy > 0:
                    ab[c, 0] += ty[iy - 1, ix]

    dpbtrf(&uplo, &n, &kd, &ab[0, 0], &ldab, &info)
    if info != 0:
        raise SimulationFailed(f"implicit system factorisation failed (dpbtrf info={info})")

    cdef int n_total = 0
    for i in range(steps_per_segment.shape[0]):
        n_total += steps_per_segment[i]

    out_arr = np.empty((n_total + 1, n))
    cdef double[:, ::1] out = out_arr
    b_arr = np.empty(n)
    cdef double[::1] b = b_arr
    cdef bint finite = True

    for i in range(n):
        out[0, i] = p_init[i]

    row = 0
    for seg in range(steps_per_segment.shape[0]):
        for step in range(steps_per_segment[seg]):
            for i in range(n):
                b[i] = accum * out[row, i] + sources[seg, i]
            dpbtrs(&uplo, &n, &kd, &nrhs, &ab[0, 0], &ldab, &b[0], &n, &info)
            if info != 0:
                raise SimulationFailed(f"implicit solve failed (dpbtrs info={info})")
            row += 1
            for i in range(n):
                out[row, i] = b[i]
                if not isfinite(b[i]):
                    finite = False
    if not finite:
        raise SimulationFailed("pressure state became non-finite")
    return out_arr
