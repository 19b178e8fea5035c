"""Rectification with a precomputed subpixel displacement map.

Offsets are signed Q12.4 words (1/16 px) and are limited to +/-39 px by the
79x79 sampling window. The map travels as an RMAP1 stream: per pixel, the
left record followed by the right record, each a prediction residual that
usually fits in a single byte.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from stereopipe._parallel import for_rows
from stereopipe.imagecore import SCALE, FormatError, GrayImage

MAX_OFFSET_PX = 39
MAX_OFFSET_RAW = MAX_OFFSET_PX * SCALE
MAGIC = b"RMAP1\n"
ESCAPE = 0x80


def _check_offsets(offsets: np.ndarray, shape: tuple[int, int], what: str) -> np.ndarray:
    offsets = np.asarray(offsets)
    if offsets.shape != (*shape, 2):
        raise ValueError(f"{what}: offset field {offsets.shape} does not match image {shape}")
    if offsets.dtype != np.int16:
        raise ValueError(f"{what}: offsets must be int16 Q12.4 words, got {offsets.dtype}")
    if offsets.size and int(np.abs(offsets.astype(np.int32)).max()) > MAX_OFFSET_RAW:
        raise ValueError(f"{what}: offset exceeds +/-{MAX_OFFSET_PX} px window")
    return np.ascontiguousarray(offsets)


@dataclass(frozen=True, eq=False)
class RectificationMap:
    """Per-pixel (dx, dy) fields for both cameras, int16 arrays of shape (H, W, 2)."""

    offsets_left: np.ndarray
    offsets_right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.offsets_left)
        if left.ndim != 3:
            raise ValueError("offset fields must have shape (H, W, 2)")
        shape = left.shape[:2]
        object.__setattr__(self, "offsets_left", _check_offsets(left, shape, "left"))
        object.__setattr__(
            self, "offsets_right", _check_offsets(self.offsets_right, shape, "right")
        )

    @classmethod
    def from_float(cls, left, right) -> "RectificationMap":
        """Build from pixel-unit offsets, rounding to the nearest 1/16 (half up)."""
        def q(a):
            return np.floor(np.asarray(a, dtype=np.float64) * SCALE + 0.5).astype(np.int16)

        return cls(q(left), q(right))

    @classmethod
    def identity(cls, width: int, height: int) -> "RectificationMap":
        zero = np.zeros((height, width, 2), dtype=np.int16)
        return cls(zero, zero)

    @property
    def width(self) -> int:
        return self.offsets_left.shape[1]

    @property
    def height(self) -> int:
        return self.offsets_left.shape[0]

    def __eq__(self, other):
        if not isinstance(other, RectificationMap):
            return NotImplemented
        return bool(
            np.array_equal(self.offsets_left, other.offsets_left)
            and np.array_equal(self.offsets_right, other.offsets_right)
        )


@njit(cache=True, nogil=True)
def _remap_rows(src, offsets, out, y0, y1):
    h, w = src.shape
    for y in range(y0, y1):
        for x in range(w):
            dx = np.int32(offsets[y, x, 0])
            dy = np.int32(offsets[y, x, 1])
            sx = x + (dx >> 4)
            sy = y + (dy >> 4)
            wx = (dx & 15) * 16
            wy = (dy & 15) * 16
            # support is the set of taps with non-zero weight
            sx1 = sx + 1 if wx > 0 else sx
            sy1 = sy + 1 if wy > 0 else sy
            if sx < 0 or sy < 0 or sx1 >= w or sy1 >= h:
                out[y, x] = 0
                continue
            top = np.int32(src[sy, sx]) * (256 - wx) + np.int32(src[sy, sx1]) * wx
            bot = np.int32(src[sy1, sx]) * (256 - wx) + np.int32(src[sy1, sx1]) * wx
            out[y, x] = (top * (256 - wy) + bot * wy + 32768) >> 16


def remap(img: GrayImage, offsets: np.ndarray, threads: int = 1) -> GrayImage:
    """Bilinearly resample ``img`` at ``(x + dx, y + dy)`` for every pixel.

    Samples whose support leaves the image are black. Weights carry 8
    fractional bits and the result is rounded half up.
    """
    offsets = _check_offsets(offsets, img.shape, "remap")
    out = np.empty(img.shape, dtype=np.uint8)
    src = img.data
    for_rows(lambda y0, y1: _remap_rows(src, offsets, out, y0, y1), img.height, threads)
    return GrayImage(out)


def rectify_pair(
    left: GrayImage, right: GrayImage, rmap: RectificationMap, threads: int = 1
) -> tuple[GrayImage, GrayImage]:
    if left.shape != right.shape:
        raise ValueError(f"image sizes differ: {left.shape} vs {right.shape}")
    if left.shape != (rmap.height, rmap.width):
        raise ValueError(
            f"map is {rmap.width}x{rmap.height}, images are {left.width}x{left.height}"
        )
    return remap(left, rmap.offsets_left, threads), remap(right, rmap.offsets_right, threads)


@njit(cache=True)
def _put_record(buf, pos, rx, ry):
    if -8 <= rx <= 7 and -8 <= ry <= 7:
        byte = ((rx & 15) << 4) | (ry & 15)
        if byte != 0x80:
            buf[pos] = byte
            return pos + 1
    buf[pos] = 0x80
    buf[pos + 1] = rx & 0xFF
    buf[pos + 2] = (rx >> 8) & 0xFF
    buf[pos + 3] = ry & 0xFF
    buf[pos + 4] = (ry >> 8) & 0xFF
    return pos + 5


@njit(cache=True)
def _encode(left, right):
    h, w = left.shape[:2]
    buf = np.empty(10 * h * w, dtype=np.uint8)
    pos = 0
    for y in range(h):
        for x in range(w):
            for field in (left, right):
                if x > 0:
                    px, py = field[y, x - 1, 0], field[y, x - 1, 1]
                elif y > 0:
                    px, py = field[y - 1, 0, 0], field[y - 1, 0, 1]
                else:
                    px, py = 0, 0
                rx = np.int32(field[y, x, 0]) - np.int32(px)
                ry = np.int32(field[y, x, 1]) - np.int32(py)
                pos = _put_record(buf, pos, rx, ry)
    return buf[:pos]


@njit(cache=True)
def _nibble(v):
    return v - 16 if v >= 8 else v


@njit(cache=True)
def _decode(buf, pos, h, w, limit):
    """Return (left, right, status); status 0 ok, 1 truncated, 2 out of range, 3 trailing."""
    left = np.zeros((h, w, 2), dtype=np.int16)
    right = np.zeros((h, w, 2), dtype=np.int16)
    n = buf.shape[0]
    for y in range(h):
        for x in range(w):
            for field in (left, right):
                if pos >= n:
                    return left, right, 1
                b = np.int32(buf[pos])
                if b == 0x80:
                    if pos + 5 > n:
                        return left, right, 1
                    rx = np.int32(buf[pos + 1]) | (np.int32(buf[pos + 2]) << 8)
                    ry = np.int32(buf[pos + 3]) | (np.int32(buf[pos + 4]) << 8)
                    rx = rx - 65536 if rx >= 32768 else rx
                    ry = ry - 65536 if ry >= 32768 else ry
                    pos += 5
                else:
                    rx = _nibble(b >> 4)
                    ry = _nibble(b & 15)
                    pos += 1
                if x > 0:
                    px, py = np.int32(field[y, x - 1, 0]), np.int32(field[y, x - 1, 1])
                elif y > 0:
                    px, py = np.int32(field[y - 1, 0, 0]), np.int32(field[y - 1, 0, 1])
                else:
                    px, py = 0, 0
                vx = px + rx
                vy = py + ry
                if abs(vx) > limit or abs(vy) > limit:
                    return left, right, 2
                field[y, x, 0] = vx
                field[y, x, 1] = vy
    if pos != n:
        return left, right, 3
    return left, right, 0


def encode_map(rmap: RectificationMap) -> bytes:
    header = MAGIC + f"{rmap.width} {rmap.height}\n".encode("ascii")
    return header + _encode(rmap.offsets_left, rmap.offsets_right).tobytes()


def decode_map(buf: bytes) -> RectificationMap:
    if not buf.startswith(MAGIC):
        raise FormatError("bad magic, expected RMAP1")
    end = buf.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError("malformed RMAP1 header")
    try:
        width, height = (int(v) for v in buf[len(MAGIC) : end].split())
    except ValueError as exc:
        raise FormatError("malformed RMAP1 header") from exc
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}")
    payload = np.frombuffer(buf, dtype=np.uint8)
    left, right, status = _decode(payload, end + 1, height, width, MAX_OFFSET_RAW)
    if status == 1:
        raise FormatError("truncated RMAP1 residual stream")
    if status == 2:
        raise FormatError(f"decoded offset outside +/-{MAX_OFFSET_PX} px")
    if status == 3:
        raise FormatError("trailing bytes after RMAP1 residual stream")
    return RectificationMap(left, right)
