"""RGB image <-> third-order tensor conversion, PSNR, and image file IO.

An image maps to a tensor of dims (height, width, 3): mode 1 walks rows,
mode 2 columns, mode 3 the color channel.  Two value scales are
supported and must round-trip losslessly:

    unit: sample v -> v / 255 in [0, 1]
    byte: sample v -> float(v) in [0, 255]

Files are PNG (via Pillow, alpha stripped with a warning) or binary
PPM (type P6), the latter hand-rolled so golden tests have a
dependency-light bit-exact path.
"""
from __future__ import annotations

import io
import math
import warnings

import numpy as np
from PIL import Image

from ._util import atomic_write_bytes
from .errors import DimensionError, FormatError
from .tensor import DenseTensor3

PSNR_CAP_DB = 99.0


class RgbImage:
    """8-bit-per-channel RGB raster; pixels row-major (height, width, 3)."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionError(
                f"pixels must have shape (height, width, 3), got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image extents must be positive, got {arr.shape}")
        if arr.dtype != np.uint8:
            raise DimensionError(f"pixels must be uint8, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._pixels = arr

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RgbImage):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash(self._pixels.tobytes())

    def __repr__(self):
        return f"RgbImage({self.width}x{self.height})"


def _check_scale(scale: str) -> str:
    if scale not in ("unit", "byte"):
        raise DimensionError(f"scale must one of 'unit', 'byte', got {scale!r}")
    return scale


def image_to_tensor(img: RgbImage, scale: str = "unit") -> DenseTensor3:
    """Tensor of dims (height, width, 3) holding the samples."""
    _check_scale(scale)
    arr = img.pixels.astype(np.float64)
    if scale == "unit":
        arr = arr / 255.0
    return DenseTensor3.from_array(arr)


def tensor_to_image(t: DenseTensor3, scale: str = "unit") -> RgbImage:
    """Clamp to the valid range, then round half away from zero to 8-bit."""
    _check_scale(scale)
    if t.dims[2] != 3:
        raise DimensionError(
            f"tensor must have third extent 3 for image output, got {t.dims}"
        )
    arr = t.as_array()
    if scale == "unit":
        arr = arr * 255.0
    arr = np.clip(arr, 0.0, 255.0)
    # nonnegative after the clamp, so half away from zero is floor(v + 0.5)
    return RgbImage(np.floor(arr + 0.5).astype(np.uint8))


def psnr(a: RgbImage, b: RgbImage) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs.

    Callers writing CSV should cap the infinite case at PSNR_CAP_DB.
    """
    if a.pixels.shape != b.pixels.shape:
        raise DimensionError(
            f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}"
        )
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _read_ppm(raw: bytes) -> RgbImage:
    if raw[:2] != b"P6":
        raise FormatError("bad magic, expected P6", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise FormatError("truncated header", offset=pos)
        ch = raw[pos : pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(raw) and raw[pos : pos + 1].isdigit():
                pos += 1
            fields.append((start, int(raw[start:pos])))
        else:
            raise FormatError(f"unexpected byte {ch!r} in header", offset=pos)
    (w_off, w), (h_off, h), (m_off, maxval) = fields
    if w < 1:
        raise FormatError("width must be positive", offset=w_off)
    if h < 1:
        raise FormatError("height must be positive", offset=h_off)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, need 255", offset=m_off)
    pos += 1  # single whitespace byte separates header from samples
    expected = pos + 3 * w * h
    if len(raw) < expected:
        raise FormatError(
            f"pixel payload truncated, expected {expected} bytes total",
            offset=len(raw),
        )
    if len(raw) > expected:
        raise FormatError("trailing bytes after pixel payload", offset=expected)
    arr = np.frombuffer(raw, dtype=np.uint8, count=3 * w * h, offset=pos)
    return RgbImage(arr.reshape(h, w, 3).copy())


def _ppm_bytes(img: RgbImage) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_image(path) -> RgbImage:
    """Load a PNG or P6 PPM file as 8-bit RGB."""
    p = str(path)
    if p.lower().endswith((".ppm", ".pnm")):
        with open(p, "rb") as fh:
            return _read_ppm(fh.read())
    try:
        with Image.open(p) as im:
            if im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info:
                warnings.warn(f"stripping alpha channel from {p}", stacklevel=2)
            rgb = im.convert("RGB")
            return RgbImage(np.asarray(rgb, dtype=np.uint8))
    except (Image.UnidentifiedImageError, SyntaxError) as exc:
        raise FormatError(f"cannot decode image {p}: {exc}") from exc


def write_image(img: RgbImage, path) -> None:
    """Write PNG or P6 PPM depending on the file extension (atomically)."""
    p = str(path)
    if p.lower().endswith((".ppm", ".pnm")):
        atomic_write_bytes(p, _ppm_bytes(img))
        return
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(p, buf.getvalue())
