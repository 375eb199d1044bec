# cython: boundscheck=False, wraparound=False, cdivision=True
"""Batched weighted least-squares solves via LAPACK Cholesky routines.

Each task shares one design matrix but has its own nonnegative weight vector
and response; the q x q normal equations are assembled row by row, skipping
zero-weight observations, and solved with dpotrf/dpotrs. A ridge of
jitter * trace/q is added whenever the factorization fails or the dpocon
condition estimate exceeds ``cond_limit``, escalating twice before giving up.
"""

import numpy as np

from scipy.linalg.cython_lapack cimport dpocon, dpotrf, dpotrs


class KernelSolveError(ArithmeticError):
    """Normal equations remained unsolvable after ridge escalation."""


def batched_wls(double[:, ::1] design, double[:, ::1] responses,
                double[:, ::1] weights, double jitter, double cond_limit=1e12):
    """Solve argmin_b sum_l w[r,l] (z[r,l] - design[l]@b)^2 for every row r.

    design: (k, q); responses, weights: (m, k). Returns (m, q).
    """
    cdef Py_ssize_t k = design.shape[0]
    cdef Py_ssize_t q = design.shape[1]
    cdef Py_ssize_t m = responses.shape[0]
    if responses.shape[1] != k or weights.shape[0] != m or weights.shape[1] != k:
        raise ValueError("design/response/weight shapes do not line up")

    out_arr = np.empty((m, q), dtype=np.float64)
    a0_arr = np.empty((q, q), dtype=np.float64)
    a_arr = np.empty((q, q), dtype=np.float64)
    b0_arr = np.empty(q, dtype=np.float64)
    work_arr = np.empty(3 * q, dtype=np.float64)
    iwork_arr = np.empty(q, dtype=np.intc)

    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] a0 = a0_arr
    cdef double[:, ::1] a = a_arr
    cdef double[::1] b0 = b0_arr
    cdef double[::1] work = work_arr
    cdef int[::1] iwork = iwork_arr

    cdef Py_ssize_t r, l, i, j
    cdef int qi = <int> q, nrhs = 1, info = 0
    cdef int attempt
    cdef double w, z, trace, ridge, anorm, colsum, rcond, rcond_min
    cdef bint ok

    rcond_min = 1.0 / cond_limit

    for r in range(m):
        for i in range(q):
            b0[i] = 0.0
            for j in range(i, q):
                a0[i, j] = 0.0
        for l in range(k):
            w = weights[r, l]
            if w <= 0.0:
                continue
            z = w * responses[r, l]
            for i in range(q):
                b0[i] += z * design[l, i]
                for j in range(i, q):
                    a0[i, j] += w * design[l, i] * design[l, j]
        trace = 0.0
        for i in range(q):
            trace += a0[i, i]
            for j in range(i + 1, q):
                a0[j, i] = a0[i, j]
        if trace <= 0.0:
            raise KernelSolveError(f"all-zero weighted system in task {r}")

        ridge = jitter * trace / q
        ok = False
        for attempt in range(4):
            for i in range(q):
                for j in range(q):
                    a[i, j] = a0[i, j]
                if attempt > 0:
                    a[i, i] += ridge
                out[r, i] = b0[i]
            # A is symmetric, so the C layout doubles as column-major.
            dpotrf("U", &qi, &a[0, 0], &qi, &info)
            if info == 0:
                anorm = 0.0
                for j in range(q):
                    colsum = 0.0
                    for i in range(q):
                        colsum += abs(a0[i, j])
                    if attempt > 0:
                        colsum += ridge
                    if colsum > anorm:
                        anorm = colsum
                dpocon("U", &qi, &a[0, 0], &qi, &anorm, &rcond,
                       &work[0], &iwork[0], &info)
                if info == 0 and (rcond >= rcond_min or attempt == 3):
                    dpotrs("U", &qi, &nrhs, &a[0, 0], &qi, &out[r, 0], &qi, &info)
                    if info == 0:
                        ok = True
                        break
            ridge *= 100.0
        if not ok:
            raise KernelSolveError(
                f"weighted normal equations unsolvable in task {r}")
    return out_arr
