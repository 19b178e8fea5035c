"""Raster types, Q12.4 fixed-point disparities and bit-exact PGM/PFM IO.

Images are stored row-major, top row first. Disparities are 16-bit words
holding ``disparity * 16``; the value ``0xFFFF`` is reserved as INVALID.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

INVALID = 0xFFFF
FRAC_BITS = 4
SCALE = 1 << FRAC_BITS
MAX_DIM = 1856


class FormatError(ValueError):
    """Raised for malformed or unsupported raster files."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    if not arr.flags.writeable and arr.flags.c_contiguous:
        return arr
    arr = np.array(arr, order="C", copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit single-channel image, shape ``(height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {data.shape}")
        if data.dtype != np.uint8:
            raise ValueError(f"expected uint8 intensities, got {data.dtype}")
        h, w = data.shape
        if h < 1 or w < 1:
            raise ValueError("image must be at least 1x1")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class DisparityMap:
    """Q12.4 disparity raster, shape ``(height, width)``, INVALID = 0xFFFF."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {data.shape}")
        if data.dtype != np.uint16:
            raise ValueError(f"expected uint16 raw disparities, got {data.dtype}")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_float(cls, values) -> "DisparityMap":
        """Quantize float disparities to 1/16 px (half up); NaN/-inf become INVALID."""
        values = np.asarray(values, dtype=np.float64)
        bad = ~np.isfinite(values) | (values < 0)
        raw = np.floor(np.where(bad, 0.0, values) * SCALE + 0.5)
        if np.any(raw[~bad] >= INVALID):
            raise ValueError("disparity exceeds the Q12.4 range")
        raw = np.where(bad, INVALID, raw).astype(np.uint16)
        return cls(raw)

    @classmethod
    def invalid(cls, height: int, width: int) -> "DisparityMap":
        return cls(np.full((height, width), INVALID, dtype=np.uint16))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def valid(self) -> np.ndarray:
        return self.data != INVALID

    def to_float(self) -> np.ndarray:
        """Disparities in pixels; INVALID pixels become NaN."""
        out = self.data.astype(np.float64) / SCALE
        out[~self.valid] = np.nan
        return out

    def __eq__(self, other):
        if not isinstance(other, DisparityMap):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def _read_header(buf: bytes, magic: bytes, nfields: int) -> tuple[list[int], int]:
    if not buf.startswith(magic):
        raise FormatError(f"bad magic, expected {magic!r}")
    pos = len(magic)
    fields = []
    for _ in range(nfields):
        m = _TOKEN.match(buf, pos)
        pos = m.end()
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise FormatError("malformed header")
        fields.append(int(buf[start:pos]))
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("malformed header")
    return fields, pos + 1


def _check_dims(width: int, height: int) -> None:
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}")
    if width > MAX_DIM or height > MAX_DIM:
        raise FormatError(f"dimensions {width}x{height} exceed {MAX_DIM}x{MAX_DIM}")


def load_pgm(buf: bytes) -> GrayImage:
    """Decode a binary 8-bit PGM (``P5``, maxval 255)."""
    (width, height, maxval), off = _read_header(buf, b"P5", 3)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, expected 255")
    _check_dims(width, height)
    n = width * height
    if len(buf) - off < n:
        raise FormatError(f"truncated payload: {len(buf) - off} of {n} bytes")
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off)
    return GrayImage(data.reshape(height, width).copy())


def save_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.data.tobytes()


def save_disparity_pgm16(disp: DisparityMap) -> bytes:
    """Encode raw Q12.4 words as a big-endian 16-bit PGM; INVALID stays 65535."""
    header = f"P5\n{disp.width} {disp.height}\n65535\n".encode("ascii")
    return header + disp.data.astype(">u2").tobytes()


def load_disparity_pgm16(buf: bytes) -> DisparityMap:
    (width, height, maxval), off = _read_header(buf, b"P5", 3)
    if maxval != 65535:
        raise FormatError(f"unsupported maxval {maxval}, expected 65535")
    _check_dims(width, height)
    n = width * height
    if len(buf) - off < 2 * n:
        raise FormatError(f"truncated payload: {len(buf) - off} of {2 * n} bytes")
    data = np.frombuffer(buf, dtype=">u2", count=n, offset=off)
    return DisparityMap(data.reshape(height, width).astype(np.uint16))


def save_disparity_pfm(disp: DisparityMap) -> bytes:
    """Encode as grayscale little-endian PFM, bottom row first, INVALID as -inf."""
    values = disp.data.astype(np.float32) / np.float32(SCALE)
    values[~disp.valid] = -np.inf
    header = f"Pf\n{disp.width} {disp.height}\n-1.0\n".encode("ascii")
    return header + values[::-1].astype("<f4").tobytes()


def load_pfm(buf: bytes) -> np.ndarray:
    """Decode a grayscale PFM into a float32 array, top row first."""
    if not buf.startswith(b"Pf"):
        raise FormatError("bad magic, expected b'Pf'")
    lines = buf.split(b"\n", 3)
    if len(lines) < 4:
        raise FormatError("malformed header")
    try:
        width, height = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise FormatError("malformed header") from exc
    _check_dims(width, height)
    if scale == 0:
        raise FormatError("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    payload = lines[3]
    n = width * height
    if len(payload) < 4 * n:
        raise FormatError(f"truncated payload: {len(payload)} of {4 * n} bytes")
    data = np.frombuffer(payload, dtype=dtype, count=n).reshape(height, width)
    return data[::-1].astype(np.float32)


def load_disparity_pfm(buf: bytes) -> DisparityMap:
    return DisparityMap.from_float(load_pfm(buf))


def load_disparity(buf: bytes) -> DisparityMap:
    """Load a disparity map from either a 16-bit PGM or a PFM byte string."""
    if buf.startswith(b"Pf"):
        return load_disparity_pfm(buf)
    return load_disparity_pgm16(buf)
