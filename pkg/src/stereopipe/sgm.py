"""Census/Hamming matching costs and 4-path semi-global aggregation.

Cost volumes are uint16 arrays of shape (H, W, D) where index ``j`` stands for
disparity ``o_d + j``. Entries whose right-image pixel falls left of the
image (``x - o_d - j < 0``) hold MAX_COST and are never chosen as minima.
All arithmetic saturates at 16 bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from stereopipe._parallel import for_rows, row_bands, run_all
from stereopipe.census import CensusImage

MAX_COST = 0xFFFF
MAX_DISPARITY_LIMIT = 4095

PROFILES = {"base": 16, "pro": 32}


@dataclass(frozen=True)
class MatchConfig:
    """SGM parameters.

    ``parallelism`` is the number of disparities compared per iteration; it
    only enters the disparity-range arithmetic and throughput accounting.
    """

    p1: int = 8
    p2: int = 32
    disparity_offset: int = 0
    iterations: int = 4
    parallelism: int = 32

    def __post_init__(self):
        if not 0 < self.p1 < self.p2:
            raise ValueError(f"penalties must satisfy 0 < P1 < P2, got {self.p1}, {self.p2}")
        if self.disparity_offset < 0:
            raise ValueError("disparity offset must be >= 0")
        if self.iterations < 1 or self.parallelism < 1:
            raise ValueError("iterations and parallelism must be >= 1")
        if self.max_disparity > MAX_DISPARITY_LIMIT:
            raise ValueError(
                f"maximum disparity {self.max_disparity} exceeds {MAX_DISPARITY_LIMIT}"
            )

    @property
    def num_disparities(self) -> int:
        return self.iterations * self.parallelism

    @property
    def max_disparity(self) -> int:
        return self.disparity_offset + self.iterations * self.parallelism - 1


def max_disparity(cfg: MatchConfig) -> int:
    """Largest disparity searched: ``o_d + n_i * p - 1``."""
    return cfg.disparity_offset + cfg.iterations * cfg.parallelism - 1


@dataclass(frozen=True, eq=False)
class CostVolume:
    costs: np.ndarray
    disparity_offset: int = 0

    def __post_init__(self):
        if self.costs.ndim != 3 or self.costs.dtype != np.uint16:
            raise ValueError("cost volume must be a uint16 array of shape (H, W, D)")

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def num_disparities(self) -> int:
        return self.costs.shape[2]

    def valid_mask(self) -> np.ndarray:
        """Boolean (W, D) mask of entries whose right pixel lies inside the image."""
        x = np.arange(self.width)[:, None]
        j = np.arange(self.num_disparities)[None, :]
        return x - self.disparity_offset - j >= 0


@njit(cache=True, nogil=True)
def _popcount32(v):
    v = v - ((v >> 1) & 0x55555555)
    v = (v & 0x33333333) + ((v >> 2) & 0x33333333)
    v = (v + (v >> 4)) & 0x0F0F0F0F
    return (v * 0x01010101 & 0xFFFFFFFF) >> 24


@njit(cache=True, nogil=True)
def _hamming_rows(left, right, out, offset, y0, y1):
    w = left.shape[1]
    nd = out.shape[2]
    for y in range(y0, y1):
        for x in range(w):
            a = np.int64(left[y, x])
            for j in range(nd):
                xr = x - offset - j
                if xr < 0:
                    out[y, x, j] = 0xFFFF
                else:
                    out[y, x, j] = _popcount32(a ^ np.int64(right[y, xr]))


def matching_cost(
    left: CensusImage, right: CensusImage, cfg: MatchConfig, threads: int = 1
) -> CostVolume:
    """Hamming distance between left descriptors and disparity-shifted right ones."""
    if left.shape != right.shape:
        raise ValueError(f"descriptor images differ in size: {left.shape} vs {right.shape}")
    h, w = left.shape
    out = np.empty((h, w, cfg.num_disparities), dtype=np.uint16)
    for_rows(
        lambda y0, y1: _hamming_rows(
            left.data, right.data, out, cfg.disparity_offset, y0, y1
        ),
        h,
        threads,
    )
    return CostVolume(out, cfg.disparity_offset)


@njit(cache=True, nogil=True)
def _step(cost, prev, cur, p1, p2):
    """One SGM recursion step from ``prev`` path costs to ``cur``."""
    nd = cost.shape[0]
    mprev = np.int32(prev[0])
    for k in range(1, nd):
        if prev[k] < mprev:
            mprev = np.int32(prev[k])
    cap = mprev + p2
    for d in range(nd):
        v = np.int32(prev[d])
        if d > 0 and np.int32(prev[d - 1]) + p1 < v:
            v = np.int32(prev[d - 1]) + p1
        if d < nd - 1 and np.int32(prev[d + 1]) + p1 < v:
            v = np.int32(prev[d + 1]) + p1
        if cap < v:
            v = cap
        s = np.int32(cost[d]) + v - mprev
        cur[d] = 0xFFFF if s > 0xFFFF else s


@njit(cache=True, nogil=True)
def _accumulate(out_px, path_px):
    for d in range(out_px.shape[0]):
        s = np.int32(out_px[d]) + np.int32(path_px[d])
        out_px[d] = 0xFFFF if s > 0xFFFF else s


@njit(cache=True, nogil=True)
def _path_horizontal(raw, out, p1, p2, y0, y1):
    """Left-to-right path over rows [y0, y1)."""
    w = raw.shape[1]
    nd = raw.shape[2]
    prev = np.empty(nd, dtype=np.uint16)
    cur = np.empty(nd, dtype=np.uint16)
    for y in range(y0, y1):
        for d in range(nd):
            cur[d] = raw[y, 0, d]
        _accumulate(out[y, 0], cur)
        for x in range(1, w):
            prev, cur = cur, prev
            _step(raw[y, x], prev, cur, p1, p2)
            _accumulate(out[y, x], cur)


@njit(cache=True, nogil=True)
def _path_downward(raw, out, p1, p2, dx, l0, l1):
    """Top-to-bottom path moving ``dx`` columns per row, over lines [l0, l1).

    A line is identified by ``x - dx * y``; lines never share pixels, so bands
    of lines can be processed independently.
    """
    h, w, nd = raw.shape
    prev = np.empty((w, nd), dtype=np.uint16)
    cur = np.empty((w, nd), dtype=np.uint16)
    for y in range(h):
        xa = max(0, l0 + dx * y)
        xb = min(w, l1 + dx * y)
        for x in range(xa, xb):
            xp = x - dx
            if y == 0 or xp < 0 or xp >= w:
                for d in range(nd):
                    cur[x, d] = raw[y, x, d]
            else:
                _step(raw[y, x], prev[xp], cur[x], p1, p2)
            _accumulate(out[y, x], cur[x])
        prev, cur = cur, prev


def aggregate(raw: CostVolume, cfg: MatchConfig, threads: int = 1) -> CostVolume:
    """Saturating sum of the four path costs (L->R, T->B, TL->BR, TR->BL)."""
    costs = np.ascontiguousarray(raw.costs)
    h, w, _ = costs.shape
    out = np.zeros_like(costs)
    p1, p2 = int(cfg.p1), int(cfg.p2)

    # saturating addition of non-negative terms is order-independent, and
    # within one path the bands write disjoint pixels
    def horizontal_band(y0, y1):
        return lambda: _path_horizontal(costs, out, p1, p2, y0, y1)

    def downward_band(dx, l0, l1):
        return lambda: _path_downward(costs, out, p1, p2, dx, l0, l1)

    run_all([horizontal_band(y0, y1) for y0, y1 in row_bands(h, threads)], threads)
    for dx in (0, 1, -1):
        lo = 0 if dx == 0 else min(-dx * (h - 1), 0)
        hi = w if dx == 0 else w + max(-dx * (h - 1), 0)
        bands = [(lo + a, lo + b) for a, b in row_bands(hi - lo, threads)]
        run_all([downward_band(dx, l0, l1) for l0, l1 in bands], threads)
    return CostVolume(out, raw.disparity_offset)
