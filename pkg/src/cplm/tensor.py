"""Dense third-order tensor storage and the TNS3 binary format.

Entries of an I x J x K tensor live in one flat float64 array ordered by
the linear index map

    alpha(i1, i2, i3) = i1 + (i2 - 1) I + (i3 - 1) I J      (1-based)

so mode-1 varies fastest.  Public indexing follows the 1-based math
convention; everything internal is 0-based.
"""
from __future__ import annotations

import struct

import numpy as np

from ._util import atomic_write_bytes
from .errors import DimensionError, FormatError

_TNS3_MAGIC = b"TNS3"


def linear_index(i1: int, i2: int, i3: int, extent_i: int, extent_j: int) -> int:
    """1-based flat position of entry (i1, i2, i3) for mode extents I, J."""
    if not 1 <= i1 <= extent_i:
        raise DimensionError(f"mode-1 index {i1} outside 1..{extent_i}")
    if not 1 <= i2 <= extent_j:
        raise DimensionError(f"mode-2 index {i2} outside 1..{extent_j}")
    if i3 < 1:
        raise DimensionError(f"mode-3 index {i3} must be at least 1")
    return i1 + (i2 - 1) * extent_i + (i3 - 1) * extent_i * extent_j


class DenseTensor3:
    """Immutable dense tensor of order 3 with float64 entries.

    ``data`` holds the entries flat in linear-index order; it is exposed
    read-only.  Constructors reject non-finite values and shape
    mismatches up front so the solver never sees NaN.
    """

    __slots__ = ("_dims", "_data")

    def __init__(self, dims, data):
        I, J, K = (int(d) for d in dims)
        if min(I, J, K) < 1:
            raise DimensionError(f"extents must be positive, got {(I, J, K)}")
        flat = np.asarray(data, dtype=np.float64).reshape(-1)
        if flat.size != I * J * K:
            raise DimensionError(
                f"data length {flat.size} != I*J*K = {I * J * K} for dims {(I, J, K)}"
            )
        if not np.all(np.isfinite(flat)):
            raise DimensionError("tensor data contains non-finite values")
        if flat is np.asarray(data):
            flat = flat.copy()
        flat.flags.writeable = False
        self._dims = (I, J, K)
        self._data = flat

    @classmethod
    def zeros(cls, dims) -> "DenseTensor3":
        I, J, K = dims
        return cls(dims, np.zeros(I * J * K))

    @classmethod
    def from_array(cls, arr) -> "DenseTensor3":
        """Build from an (I, J, K) array, mode-1 as the first axis."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 3:
            raise DimensionError(f"expected a 3-d array, got ndim={a.ndim}")
        return cls(a.shape, a.reshape(-1, order="F"))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._dims

    @property
    def data(self) -> np.ndarray:
        """Flat entries in linear-index order (read-only view)."""
        return self._data

    def as_array(self) -> np.ndarray:
        """View the entries as an (I, J, K) array."""
        return self._data.reshape(self._dims, order="F")

    def value_at(self, i1: int, i2: int, i3: int) -> float:
        """Entry at 1-based position (i1, i2, i3)."""
        I, J, K = self._dims
        if not 1 <= i3 <= K:
            raise DimensionError(f"mode-3 index {i3} outside 1..{K}")
        return float(self._data[linear_index(i1, i2, i3, I, J) - 1])

    def norm(self) -> float:
        return float(np.linalg.norm(self._data))

    def __sub__(self, other: "DenseTensor3") -> "DenseTensor3":
        return sub(self, other)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor3):
            return NotImplemented
        return self._dims == other._dims and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self._dims, self._data.tobytes()))

    def __repr__(self):
        I, J, K = self._dims
        return f"DenseTensor3(dims=({I}, {J}, {K}))"


def frobenius_norm(t: DenseTensor3) -> float:
    """Square root of the sum of squared entries."""
    return t.norm()


def sub(a: DenseTensor3, b: DenseTensor3) -> DenseTensor3:
    """Elementwise a - b; dims must match."""
    if a.dims != b.dims:
        raise DimensionError(f"dims mismatch: {a.dims} vs {b.dims}")
    return DenseTensor3(a.dims, a.data - b.data)


def write_tns3(t: DenseTensor3, path) -> None:
    """Write ``t`` in the TNS3 binary format (atomically)."""
    I, J, K = t.dims
    payload = _TNS3_MAGIC + struct.pack("<3I", I, J, K)
    payload += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    atomic_write_bytes(path, payload)


def read_tns3(path) -> DenseTensor3:
    """Read a TNS3 file, validating structure with byte-offset diagnostics."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _TNS3_MAGIC:
        raise FormatError(f"bad magic, expected {_TNS3_MAGIC!r}", offset=0)
    if len(raw) < 16:
        raise FormatError("truncated header", offset=len(raw))
    I, J, K = struct.unpack_from("<3I", raw, 4)
    for off, name, val in ((4, "I", I), (8, "J", J), (12, "K", K)):
        if val == 0:
            raise FormatError(f"extent {name} is zero", offset=off)
    expected = 16 + 8 * I * J * K
    if len(raw) < expected:
        raise FormatError(
            f"payload truncated, expected {expected} bytes total", offset=len(raw)
        )
    if len(raw) > expected:
        raise FormatError("trailing bytes after payload", offset=expected)
    data = np.frombuffer(raw, dtype="<f8", count=I * J * K, offset=16)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError("non-finite tensor value", offset=16 + 8 * int(bad[0]))
    return DenseTensor3((I, J, K), data.astype(np.float64))
