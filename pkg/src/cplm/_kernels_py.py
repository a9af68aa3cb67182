"""Pure-numpy implementations of the hot kernels.

Mirrors the compiled extension in ``_kernels.pyx``; the backend module picks
one of the two at import time.  All functions take C-contiguous float64
factor matrices A (I x R), B (J x R), C (K x R) and work in the flat tensor
layout where entry (i, j, k) sits at position i + j*I + k*I*J.
"""

import numpy as np


def cp_values(A, B, C):
    """Flat rank-R model values, length I*J*K."""
    out = np.einsum("kr,jr,ir->kji", C, B, A, optimize=True)
    return np.ascontiguousarray(out).reshape(-1)


def jacobian_values(A, B, C):
    """Values of the sparse Jacobian in compressed-column order.

    Column blocks come in factor order (A, B, C); within a block, columns
    are ordered by component then by row of the factor, and the values of
    each column depend only on the component index.
    """
    I = A.shape[0]
    J = B.shape[0]
    K = C.shape[0]
    R = A.shape[1]
    wa = -np.einsum("kr,jr->rkj", C, B).reshape(R, K * J)
    wb = -np.einsum("kr,ir->rki", C, A).reshape(R, K * I)
    wc = -np.einsum("jr,ir->rji", B, A).reshape(R, J * I)
    return np.concatenate(
        [
            np.repeat(wa, I, axis=0).reshape(-1),
            np.repeat(wb, J, axis=0).reshape(-1),
            np.repeat(wc, K, axis=0).reshape(-1),
        ]
    )


def gram_matrix(A, B, C):
    """Dense P x P Gram matrix of the sparse Jacobian (P = R*(I+J+K)).

    Assembled block-wise from factor Gram matrices: the diagonal factor
    blocks are scaled identities, the cross blocks are scaled outer
    products of factor columns.
    """
    I = A.shape[0]
    J = B.shape[0]
    K = C.shape[0]
    R = A.shape[1]
    ga = A.T @ A
    gb = B.T @ B
    gc = C.T @ C
    na, nb, nc = R * I, R * J, R * K
    ob = na
    oc = na + nb
    P = na + nb + nc
    out = np.zeros((P, P))

    wa = gb * gc
    wb = ga * gc
    wc = ga * gb
    for i in range(I):
        out[i:na:I, i:na:I] = wa
    for j in range(J):
        out[ob + j : oc : J, ob + j : oc : J] = wb
    for k in range(K):
        out[oc + k : P : K, oc + k : P : K] = wc

    ab = np.einsum("rs,is,jr->risj", gc, A, B, optimize=True).reshape(na, nb)
    out[:na, ob:oc] = ab
    out[ob:oc, :na] = ab.T
    ac = np.einsum("rs,is,kr->risk", gb, A, C, optimize=True).reshape(na, nc)
    out[:na, oc:] = ac
    out[oc:, :na] = ac.T
    bc = np.einsum("rs,js,kr->rjsk", ga, B, C, optimize=True).reshape(nb, nc)
    out[ob:oc, oc:] = bc
    out[oc:, ob:oc] = bc.T
    return out


def jt_apply(A, B, C, f):
    """Jacobian-transpose times a flat length-Q vector, result length P."""
    I = A.shape[0]
    J = B.shape[0]
    K = C.shape[0]
    T = f.reshape(K, J, I)
    gA = np.einsum("kji,jr,kr->ir", T, B, C, optimize=True)
    gB = np.einsum("kji,ir,kr->jr", T, A, C, optimize=True)
    gC = np.einsum("kji,ir,jr->kr", T, A, B, optimize=True)
    return -np.concatenate(
        [gA.reshape(-1, order="F"), gB.reshape(-1, order="F"), gC.reshape(-1, order="F")]
    )


def apply_jacobian(A, B, C, dA, dB, dC):
    """Jacobian times a packed direction (dA, dB, dC), result length Q."""
    t = np.einsum("kr,jr,ir->kji", C, B, dA, optimize=True)
    t += np.einsum("kr,jr,ir->kji", C, dB, A, optimize=True)
    t += np.einsum("kr,jr,ir->kji", dC, B, A, optimize=True)
    return -np.ascontiguousarray(t).reshape(-1)
