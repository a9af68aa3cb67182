"""CP factor matrices, parameter-vector packing, reconstruction, residuals.

A rank-R model of an I x J x K tensor is the factor triple (A, B, C) with
shapes (I, R), (J, R), (K, R).  The solver works on the stacked vector

    x = [vec(A); vec(B); vec(C)]        (each vec column-major)

of length P = R (I + J + K).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import backend
from ._util import atomic_write_bytes
from .errors import DimensionError, FormatError
from .tensor import DenseTensor3

_CPD3_MAGIC = b"CPD3"


def _check_factor(name: str, m, rank: int) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"factor {name} must be 2-d, got ndim={a.ndim}")
    if a.shape[1] != rank:
        raise DimensionError(
            f"factor {name} has {a.shape[1]} columns, expected rank {rank}"
        )
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"factor {name} contains non-finite values")
    return a


class CpModel:
    """Immutable factor triple (A, B, C) sharing a column count R >= 1."""

    __slots__ = ("A", "B", "C")

    def __init__(self, A, B, C):
        a0 = np.asarray(A, dtype=np.float64)
        if a0.ndim != 2 or a0.shape[1] < 1:
            raise DimensionError("factor A must be 2-d with at least one column")
        rank = a0.shape[1]
        for name, m in (("A", A), ("B", B), ("C", C)):
            arr = _check_factor(name, m, rank)
            arr = arr.copy(order="C")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __setattr__(self, name, value):
        raise AttributeError("CpModel is immutable")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    @classmethod
    def random_uniform(cls, dims, rank: int, seed: int) -> "CpModel":
        """Factors with i.i.d. uniform [0,1) entries, one child stream each."""
        if rank < 1:
            raise DimensionError(f"rank must be positive, got {rank}")
        streams = np.random.SeedSequence(seed).spawn(3)
        mats = [
            np.random.default_rng(s).random((n, rank))
            for s, n in zip(streams, dims)
        ]
        return cls(*mats)

    def __eq__(self, other):
        if not isinstance(other, CpModel):
            return NotImplemented
        return (
            np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.C, other.C)
        )

    def __repr__(self):
        I, J, K = self.dims
        return f"CpModel(dims=({I}, {J}, {K}), rank={self.rank})"


class ParamVector:
    """Flat parameter vector with its (I, J, K, R) shape tag attached."""

    __slots__ = ("data", "shape")

    def __init__(self, data, shape):
        I, J, K, R = (int(v) for v in shape)
        flat = np.asarray(data, dtype=np.float64).reshape(-1)
        expected = R * (I + J + K)
        if flat.size != expected:
            raise DimensionError(
                f"parameter vector length {flat.size} != R(I+J+K) = {expected}"
            )
        object.__setattr__(self, "data", flat)
        object.__setattr__(self, "shape", (I, J, K, R))

    def __setattr__(self, name, value):
        raise AttributeError("ParamVector is immutable")

    def __len__(self):
        return self.data.size

    def replace(self, data) -> "ParamVector":
        """Same shape tag, new contents."""
        return ParamVector(data, self.shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def pack(model: CpModel) -> ParamVector:
    """Stack [vec(A); vec(B); vec(C)] column-major."""
    I, J, K = model.dims
    parts = [m.reshape(-1, order="F") for m in (model.A, model.B, model.C)]
    return ParamVector(np.concatenate(parts), (I, J, K, model.rank))


def unpack(x: ParamVector) -> CpModel:
    """Inverse of pack: slice the three column-major factor blocks."""
    I, J, K, R = x.shape
    v = x.data
    A = v[: R * I].reshape((I, R), order="F")
    B = v[R * I : R * (I + J)].reshape((J, R), order="F")
    C = v[R * (I + J) :].reshape((K, R), order="F")
    return CpModel(A, B, C)


def cp_reconstruct(model: CpModel, dims=None) -> DenseTensor3:
    """Tensor with entries sum_r a_r(i1) b_r(i2) c_r(i3)."""
    if dims is not None and tuple(dims) != model.dims:
        raise DimensionError(
            f"model dims {model.dims} do not match requested {tuple(dims)}"
        )
    flat = backend.cp_values(model.A, model.B, model.C)
    return DenseTensor3(model.dims, flat)


def residual(x: ParamVector, observed: DenseTensor3) -> np.ndarray:
    """Flat residual: observed minus model value at every position."""
    I, J, K, _ = x.shape
    if observed.dims != (I, J, K):
        raise DimensionError(
            f"observed dims {observed.dims} do not match shape tag {(I, J, K)}"
        )
    m = unpack(x)
    return observed.data - backend.cp_values(m.A, m.B, m.C)


@dataclass(frozen=True)
class CompressionReport:
    """Storage reduction of the factored form versus the dense tensor."""

    percent: float
    displayed: int
    storage_reduced: bool


def compression_percent(I: int, J: int, K: int, R: int) -> CompressionReport:
    """100 (1 - R(I+J+K)/(IJK)), plus its nearest-integer display value.

    When the factored form is no smaller than the dense tensor the
    report carries 0 with ``storage_reduced`` False.
    """
    if min(I, J, K, R) < 1:
        raise DimensionError("all arguments must be positive")
    stored = R * (I + J + K)
    total = I * J * K
    if stored > total:
        return CompressionReport(0.0, 0, False)
    pct = 100.0 * (1.0 - stored / total)
    # round half away from zero; values are nonnegative here
    return CompressionReport(pct, int(math.floor(pct + 0.5)), True)


def write_cpd3(model: CpModel, path) -> None:
    """Write the factors in the CPD3 binary format (atomically)."""
    I, J, K = model.dims
    payload = _CPD3_MAGIC + struct.pack("<4I", I, J, K, model.rank)
    for m in (model.A, model.B, model.C):
        payload += np.asfortranarray(m, dtype="<f8").tobytes(order="F")
    atomic_write_bytes(path, payload)


def read_cpd3(path) -> CpModel:
    """Read a CPD3 file, validating structure with byte-offset diagnostics."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _CPD3_MAGIC:
        raise FormatError(f"bad magic, expected {_CPD3_MAGIC!r}", offset=0)
    if len(raw) < 20:
        raise FormatError("truncated header", offset=len(raw))
    I, J, K, R = struct.unpack_from("<4I", raw, 4)
    for off, name, val in ((4, "I", I), (8, "J", J), (12, "K", K), (16, "R", R)):
        if val == 0:
            raise FormatError(f"extent {name} is zero", offset=off)
    expected = 20 + 8 * R * (I + J + K)
    if len(raw) < expected:
        raise FormatError(
            f"payload truncated, expected {expected} bytes total", offset=len(raw)
        )
    if len(raw) > expected:
        raise FormatError("trailing bytes after payload", offset=expected)
    vals = np.frombuffer(raw, dtype="<f8", count=R * (I + J + K), offset=20)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FormatError("non-finite factor value", offset=20 + 8 * int(bad[0]))
    return unpack(ParamVector(vals.astype(np.float64), (I, J, K, R)))
