# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Same contracts as ``_kernels_py``; plain loops over typed memoryviews,
with deterministic (fixed-order) accumulation.
"""

import numpy as np


def cp_values(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C):
    cdef Py_ssize_t I = A.shape[0], R = A.shape[1]
    cdef Py_ssize_t J = B.shape[0], K = C.shape[0]
    out_arr = np.zeros(I * J * K)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, k, r, base
    cdef double cb
    for k in range(K):
        for j in range(J):
            base = (k * J + j) * I
            for r in range(R):
                cb = C[k, r] * B[j, r]
                for i in range(I):
                    out[base + i] += A[i, r] * cb
    return out_arr


def jacobian_values(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C):
    cdef Py_ssize_t I = A.shape[0], R = A.shape[1]
    cdef Py_ssize_t J = B.shape[0], K = C.shape[0]
    cdef Py_ssize_t Q = I * J * K
    out_arr = np.empty(3 * R * Q)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t pos = 0, i, j, k, r, rep, t
    cdef Py_ssize_t kj = K * J, ki = K * I, ji = J * I
    # A-section: each of the I columns of component r shares the values -C[k]*B[j]
    for r in range(R):
        t = pos
        for k in range(K):
            for j in range(J):
                out[t] = -C[k, r] * B[j, r]
                t += 1
        for rep in range(1, I):
            for i in range(kj):
                out[t] = out[pos + i]
                t += 1
        pos += I * kj
    for r in range(R):
        t = pos
        for k in range(K):
            for i in range(I):
                out[t] = -C[k, r] * A[i, r]
                t += 1
        for rep in range(1, J):
            for i in range(ki):
                out[t] = out[pos + i]
                t += 1
        pos += J * ki
    for r in range(R):
        t = pos
        for j in range(J):
            for i in range(I):
                out[t] = -B[j, r] * A[i, r]
                t += 1
        for rep in range(1, K):
            for i in range(ji):
                out[t] = out[pos + i]
                t += 1
        pos += K * ji
    return out_arr


def gram_matrix(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C):
    cdef Py_ssize_t I = A.shape[0], R = A.shape[1]
    cdef Py_ssize_t J = B.shape[0], K = C.shape[0]
    cdef Py_ssize_t na = R * I, nb = R * J, nc = R * K
    cdef Py_ssize_t ob = na, oc = na + nb, P = na + nb + nc
    ga_arr = np.dot(np.asarray(A).T, np.asarray(A))
    gb_arr = np.dot(np.asarray(B).T, np.asarray(B))
    gc_arr = np.dot(np.asarray(C).T, np.asarray(C))
    cdef double[:, ::1] ga = ga_arr, gb = gb_arr, gc = gc_arr
    out_arr = np.zeros((P, P))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, r, s, row
    cdef double w, v
    for r in range(R):
        for s in range(R):
            w = gb[r, s] * gc[r, s]
            for i in range(I):
                out[r * I + i, s * I + i] = w
            w = ga[r, s] * gc[r, s]
            for j in range(J):
                out[ob + r * J + j, ob + s * J + j] = w
            w = ga[r, s] * gb[r, s]
            for k in range(K):
                out[oc + r * K + k, oc + s * K + k] = w
    for r in range(R):
        for i in range(I):
            row = r * I + i
            for s in range(R):
                w = gc[r, s]
                for j in range(J):
                    v = w * A[i, s] * B[j, r]
                    out[row, ob + s * J + j] = v
                    out[ob + s * J + j, row] = v
                w = gb[r, s]
                for k in range(K):
                    v = w * A[i, s] * C[k, r]
                    out[row, oc + s * K + k] = v
                    out[oc + s * K + k, row] = v
    for r in range(R):
        for j in range(J):
            row = ob + r * J + j
            for s in range(R):
                w = ga[r, s]
                for k in range(K):
                    v = w * B[j, s] * C[k, r]
                    out[row, oc + s * K + k] = v
                    out[oc + s * K + k, row] = v
    return out_arr


def jt_apply(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C, const double[::1] f):
    cdef Py_ssize_t I = A.shape[0], R = A.shape[1]
    cdef Py_ssize_t J = B.shape[0], K = C.shape[0]
    cdef Py_ssize_t na = R * I, nb = R * J
    out_arr = np.zeros(na + nb + R * K)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, k, r, base
    cdef double w, t, v
    for k in range(K):
        for j in range(J):
            base = (k * J + j) * I
            for r in range(R):
                w = B[j, r] * C[k, r]
                t = 0.0
                for i in range(I):
                    v = f[base + i]
                    out[r * I + i] -= v * w
                    t += v * A[i, r]
                out[na + r * J + j] -= t * C[k, r]
                out[na + nb + r * K + k] -= t * B[j, r]
    return out_arr


def apply_jacobian(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C,
                   const double[:, ::1] dA, const double[:, ::1] dB, const double[:, ::1] dC):
    cdef Py_ssize_t I = A.shape[0], R = A.shape[1]
    cdef Py_ssize_t J = B.shape[0], K = C.shape[0]
    out_arr = np.zeros(I * J * K)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, k, r, base
    cdef double bc, dbc
    for k in range(K):
        for j in range(J):
            base = (k * J + j) * I
            for r in range(R):
                bc = B[j, r] * C[k, r]
                dbc = dB[j, r] * C[k, r] + B[j, r] * dC[k, r]
                for i in range(I):
                    out[base + i] -= dA[i, r] * bc + A[i, r] * dbc
    return out_arr
