"""Deterministic synthetic stereo pairs and rectification maps.

Textures are multi-octave value noise interpolated with Catmull-Rom splines,
so they can be sampled at any real coordinate. That makes subpixel shifts
exact: the right view is the same continuous texture evaluated at ``x + d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stereopipe.imagecore import INVALID, SCALE, DisparityMap, GrayImage
from stereopipe.rectify import MAX_OFFSET_PX, RectificationMap

OCTAVES = ((2.0, 1.0), (4.0, 0.8), (8.0, 0.6), (16.0, 0.5))


def _catmull_rom(coords: np.ndarray, spacing: float, size: int) -> np.ndarray:
    """Dense (len(coords), size) interpolation matrix onto a lattice of ``size`` knots."""
    g = coords / spacing + 1.0  # knot 0 sits one spacing left of the origin
    i = np.floor(g).astype(np.int64)
    t = g - i
    t2, t3 = t * t, t * t * t
    weights = (
        0.5 * (-t3 + 2 * t2 - t),
        0.5 * (3 * t3 - 5 * t2 + 2),
        0.5 * (-3 * t3 + 4 * t2 + t),
        0.5 * (t3 - t2),
    )
    mat = np.zeros((len(coords), size))
    rows = np.arange(len(coords))
    for k, wk in enumerate(weights):
        np.add.at(mat, (rows, i - 1 + k), wk)
    return mat


class ValueNoise:
    """Band-limited random texture defined on ``[0, extent_x) x [0, extent_y)``."""

    def __init__(self, extent_x: float, extent_y: float, rng: np.random.Generator):
        self._layers = []
        for spacing, amp in OCTAVES:
            nx = int(np.ceil(extent_x / spacing)) + 4
            ny = int(np.ceil(extent_y / spacing)) + 4
            self._layers.append((spacing, amp, rng.uniform(-1.0, 1.0, (ny, nx))))

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Evaluate on the grid ``ys x xs``; returns float intensities in [0, 255]."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        acc = np.zeros((len(ys), len(xs)))
        for spacing, amp, lattice in self._layers:
            wy = _catmull_rom(ys, spacing, lattice.shape[0])
            wx = _catmull_rom(xs, spacing, lattice.shape[1])
            acc += amp * (wy @ lattice @ wx.T)
        return np.clip(128.0 + 70.0 * acc, 0.0, 255.0)


def _quantize(values: np.ndarray) -> GrayImage:
    return GrayImage(np.floor(values + 0.5).astype(np.uint8))


@dataclass(frozen=True, eq=False)
class Scene:
    """A synthetic pair with its left-view ground truth.

    ``truth`` is INVALID where the left pixel has no visible correspondence.
    ``occluded`` marks the pixels hidden in the right view by a nearer
    surface (out-of-view border pixels are not included).
    """

    left: GrayImage
    right: GrayImage
    truth: DisparityMap
    occluded: np.ndarray


def _truth_raw(d: float) -> int:
    return int(np.floor(d * SCALE + 0.5))


def shift_scene(d: float, width: int, height: int, seed: int = 0) -> Scene:
    """Fronto-parallel plane at disparity ``d`` (may be fractional)."""
    if d < 0:
        raise ValueError("disparity must be >= 0")
    rng = np.random.default_rng(seed)
    tex = ValueNoise(width + d + 2, height, rng)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    left = _quantize(tex.sample(xs, ys))
    right = _quantize(tex.sample(xs + d, ys))
    truth = np.full((height, width), _truth_raw(d), dtype=np.uint16)
    truth[:, xs < d] = INVALID
    return Scene(left, right, DisparityMap(truth), np.zeros((height, width), dtype=bool))


def two_plane_scene(
    d_back: float, d_front: float, width: int, height: int, seed: int = 0
) -> Scene:
    """Background plane at ``d_back`` with a centred rectangle at ``d_front``.

    The rectangle spans the middle half of the image in both directions. Its
    occlusion shadow is the band of width ``d_front - d_back`` to its left.
    """
    if d_front <= d_back:
        raise ValueError("the front plane needs the larger disparity")
    rng = np.random.default_rng(seed)
    back = ValueNoise(width + d_back + 2, height, rng)
    front = ValueNoise(width + d_front + 2, height, rng)
    fx0, fx1 = width // 4, width - width // 4
    fy0, fy1 = height // 4, height - height // 4
    if fx0 < d_front:
        raise ValueError("image too narrow for the requested front disparity")
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    rows = (ys >= fy0) & (ys < fy1)

    in_front_l = rows[:, None] & ((xs >= fx0) & (xs < fx1))[None, :]
    left = np.where(in_front_l, front.sample(xs, ys), back.sample(xs, ys))

    xr_front = xs + d_front
    in_front_r = rows[:, None] & ((xr_front >= fx0) & (xr_front < fx1))[None, :]
    right = np.where(in_front_r, front.sample(xr_front, ys), back.sample(xs + d_back, ys))

    truth = np.where(in_front_l, _truth_raw(d_front), _truth_raw(d_back)).astype(np.uint16)
    hidden = xs - d_back + d_front
    occluded = (
        ~in_front_l & rows[:, None] & ((hidden >= fx0) & (hidden < fx1))[None, :]
    )
    truth[occluded] = INVALID
    truth[:, xs < d_back] = INVALID
    return Scene(_quantize(left), _quantize(right), DisparityMap(truth), occluded)


def noise_scene(width: int, height: int, seed: int = 0) -> Scene:
    """Two unrelated textures: no pixel has a true match."""
    rng = np.random.default_rng(seed)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    left = _quantize(ValueNoise(width, height, rng).sample(xs, ys))
    right = _quantize(ValueNoise(width, height, rng).sample(xs, ys))
    return Scene(
        left, right, DisparityMap.invalid(height, width), np.zeros((height, width), dtype=bool)
    )


def parse_kind(kind: str) -> tuple[str, tuple[float, ...]]:
    """Parse ``shift:6``, ``two-plane:4,20`` or ``noise``."""
    name, _, args = kind.partition(":")
    name = name.replace("_", "-")
    if name == "twoplane":
        name = "two-plane"
    values = tuple(float(v) for v in args.split(",")) if args else ()
    expected = {"shift": 1, "two-plane": 2, "noise": 0}
    if name not in expected:
        raise ValueError(f"unknown scene kind {kind!r}")
    if len(values) != expected[name]:
        raise ValueError(f"scene kind {name!r} takes {expected[name]} parameter(s)")
    return name, values


def gen_test_scene(kind: str, width: int, height: int, seed: int = 0) -> Scene:
    name, values = parse_kind(kind)
    if name == "shift":
        return shift_scene(values[0], width, height, seed)
    if name == "two-plane":
        return two_plane_scene(values[0], values[1], width, height, seed)
    return noise_scene(width, height, seed)


def synthetic_map(width: int, height: int, seed: int = 0, amplitude: float = 3.0) -> RectificationMap:
    """Smooth random displacement fields for both cameras.

    Each field is a small rotation plus low-frequency value noise of the given
    amplitude (pixels), so neighbouring offsets differ by well under 0.5 px.
    """
    rng = np.random.default_rng(seed)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    cx, cy = (width - 1) / 2, (height - 1) / 2
    fields = []
    for _ in range(2):
        angle = rng.uniform(-0.004, 0.004)
        comps = []
        for axis in range(2):
            lattice = rng.uniform(-1.0, 1.0, (int(np.ceil(height / 64)) + 4, int(np.ceil(width / 64)) + 4))
            wy = _catmull_rom(ys, 64.0, lattice.shape[0])
            wx = _catmull_rom(xs, 64.0, lattice.shape[1])
            smooth = amplitude * (wy @ lattice @ wx.T)
            if axis == 0:
                rot = angle * (ys[:, None] - cy)
            else:
                rot = -angle * (xs[None, :] - cx)
            comps.append(np.clip(smooth + rot, -MAX_OFFSET_PX, MAX_OFFSET_PX))
        fields.append(np.stack(comps, axis=-1))
    return RectificationMap.from_float(fields[0], fields[1])
