"""Structured sparse Jacobian of the CP residual and its normal system.

For a rank-R model of an I x J x K tensor the residual Jacobian has
Q = IJK rows, P = R(I+J+K) columns and exactly 3RQ structural nonzeros:
each residual component depends on one entry per factor per component.
Per component r the column blocks are

    A block:  -c_r (x) b_r (x) I_I      (Q x I)
    B block:  -c_r (x) I_J (x) a_r      (Q x J)
    C block:  -I_K (x) b_r (x) a_r      (Q x K)

with (x) the Kronecker product.  The sparsity pattern depends only on
the shape, so it is cached; per-column values depend only on r, so they
are generated in bulk by the kernel backend.  J^T J and J^T F are
assembled directly from the factors without touching the pattern.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.linalg import svdvals

from . import backend
from .errors import CapacityError, DimensionError
from .model import CpModel

DENSE_ENTRY_GUARD = 10**7


@functools.lru_cache(maxsize=8)
def _csc_pattern(I: int, J: int, K: int, R: int):
    """(indptr, row indices) shared by every Jacobian of this shape."""
    q = I * J * K
    # rows of one column block, identical across components
    rows_a = (np.arange(I)[:, None] + I * np.arange(J * K)[None, :]).ravel()
    m = np.arange(K * I)
    base_b = (m % I) + I * J * (m // I)
    rows_b = (I * np.arange(J)[:, None] + base_b[None, :]).ravel()
    rows_c = (I * J * np.arange(K)[:, None] + np.arange(I * J)[None, :]).ravel()
    indices = np.concatenate(
        [np.tile(rows_a, R), np.tile(rows_b, R), np.tile(rows_c, R)]
    ).astype(np.int64)
    counts = np.concatenate(
        [
            np.full(R * I, J * K, dtype=np.int64),
            np.full(R * J, I * K, dtype=np.int64),
            np.full(R * K, I * J, dtype=np.int64),
        ]
    )
    indptr = np.concatenate([[0], np.cumsum(counts)])
    assert indptr[-1] == 3 * R * q
    indices.flags.writeable = False
    indptr.flags.writeable = False
    return indptr, indices


class SparseJacobian:
    """Residual Jacobian in compressed-column form, tied to its factors.

    The value array is materialized lazily; the normal-system products
    come straight from the factor matrices, which is what the solver
    loop uses.
    """

    __slots__ = ("model", "_values")

    def __init__(self, model: CpModel):
        self.model = model
        self._values = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.model.dims

    @property
    def rank(self) -> int:
        return self.model.rank

    @property
    def shape(self) -> tuple[int, int]:
        I, J, K = self.model.dims
        return (I * J * K, self.model.rank * (I + J + K))

    @property
    def nnz(self) -> int:
        """Structural nonzero count 3RQ, regardless of numeric zeros."""
        return 3 * self.rank * self.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        I, J, K = self.dims
        return _csc_pattern(I, J, K, self.rank)[0]

    @property
    def indices(self) -> np.ndarray:
        """Row indices (0-based), ascending within each column."""
        I, J, K = self.dims
        return _csc_pattern(I, J, K, self.rank)[1]

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            m = self.model
            vals = backend.jacobian_values(m.A, m.B, m.C)
            vals.flags.writeable = False
            self._values = vals
        return self._values

    def to_csc(self) -> scipy.sparse.csc_matrix:
        return scipy.sparse.csc_matrix(
            (self.values, self.indices, self.indptr), shape=self.shape
        )

    def densify(self) -> np.ndarray:
        """Dense Q x P scatter of the stored entries."""
        q, p = self.shape
        if q * p > DENSE_ENTRY_GUARD:
            raise CapacityError(
                f"dense Jacobian would hold {q * p} entries "
                f"(guard {DENSE_ENTRY_GUARD})"
            )
        return self.to_csc().toarray()

    def gram(self) -> np.ndarray:
        """Dense P x P matrix J^T J."""
        m = self.model
        return backend.gram_matrix(m.A, m.B, m.C)

    def rmatvec(self, f: np.ndarray) -> np.ndarray:
        """J^T f for a flat length-Q vector."""
        f = np.asarray(f, dtype=np.float64).reshape(-1)
        if f.size != self.shape[0]:
            raise DimensionError(
                f"vector length {f.size} != Q = {self.shape[0]}"
            )
        m = self.model
        return backend.jt_apply(m.A, m.B, m.C, f)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """J v for a flat length-P vector."""
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.size != self.shape[1]:
            raise DimensionError(
                f"vector length {v.size} != P = {self.shape[1]}"
            )
        I, J, K = self.dims
        R = self.rank
        dA = v[: R * I].reshape((I, R), order="F")
        dB = v[R * I : R * (I + J)].reshape((J, R), order="F")
        dC = v[R * (I + J) :].reshape((K, R), order="F")
        m = self.model
        return backend.apply_jacobian(m.A, m.B, m.C, dA, dB, dC)

    def write_pattern_csv(self, path) -> None:
        """Dump `row,col,value` triplets, 1-based, in stored order."""
        indptr, indices, values = self.indptr, self.indices, self.values
        cols = np.repeat(
            np.arange(1, self.shape[1] + 1), np.diff(indptr)
        )
        lines = ["row,col,value"]
        for r, c, v in zip(indices + 1, cols, values):
            lines.append(f"{r},{c},{v:.17g}")
        from ._util import atomic_write_text

        atomic_write_text(path, "\n".join(lines) + "\n")


def build_jacobian(model: CpModel) -> SparseJacobian:
    """Jacobian of the residual at the given factors."""
    return SparseJacobian(model)


@dataclass(frozen=True)
class NormalSystem:
    """J^T J (dense symmetric PSD) and J^T F for one iterate."""

    gram: np.ndarray
    grad: np.ndarray


def normal_system(j: SparseJacobian, f: np.ndarray) -> NormalSystem:
    """Assemble J^T J and J^T f from the factors."""
    return NormalSystem(gram=j.gram(), grad=j.rmatvec(f))


def numerical_rank(j: SparseJacobian, tol: float = 1e-10) -> int:
    """Count singular values above tol times the largest one."""
    dense = j.densify()
    s = svdvals(dense)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))
