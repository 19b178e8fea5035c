"""Disparity-map filters: texture, speckle, gap interpolation and 3x3 median.

All filters take and return :class:`DisparityMap`; disparity thresholds in
:class:`FilterConfig` are in pixels and are converted to 1/16 px internally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from stereopipe._parallel import for_rows
from stereopipe.imagecore import SCALE, DisparityMap, GrayImage


@dataclass(frozen=True)
class FilterConfig:
    texture_threshold: int = 500
    texture_window: int = 5
    speckle_window: int = 40
    speckle_max_diff: float = 1.0
    max_gap: int = 3
    gap_similarity: float = 1.0
    median_window: int = 3
    median_min_valid: int = 5

    def __post_init__(self):
        if self.texture_window < 3 or self.texture_window % 2 == 0:
            raise ValueError("texture window must be odd and >= 3")
        if self.gap_similarity <= 0:
            raise ValueError("gap similarity must be > 0")
        if self.median_window != 3:
            raise ValueError("only a 3x3 median window is supported")
        for name in ("texture_threshold", "speckle_window", "max_gap", "median_min_valid"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.speckle_max_diff < 0:
            raise ValueError("speckle_max_diff must be >= 0")


def _to_raw(pixels: float) -> int:
    return int(np.floor(pixels * SCALE + 0.5))


def texture_score(img: GrayImage, window: int = 5) -> np.ndarray:
    """Windowed sum of squared horizontal intensity differences.

    The difference at ``x`` is ``I(x+1) - I(x)`` and exists only for
    ``x < W - 1``; outside the image the difference field is zero.
    """
    r = window // 2
    data = img.data.astype(np.int64)
    grad = np.zeros_like(data)
    grad[:, :-1] = (data[:, 1:] - data[:, :-1]) ** 2
    # summed-area table with one row/column of zero padding
    h, w = grad.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = grad.cumsum(0).cumsum(1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - r, 0, h)[:, None]
    y1 = np.clip(ys + r + 1, 0, h)[:, None]
    x0 = np.clip(xs - r, 0, w)[None, :]
    x1 = np.clip(xs + r + 1, 0, w)[None, :]
    return sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]


def texture_filter(disp: DisparityMap, left: GrayImage, cfg: FilterConfig) -> DisparityMap:
    """Invalidate pixels whose texture score is below ``cfg.texture_threshold``."""
    if disp.shape != left.shape:
        raise ValueError(f"disparity {disp.shape} and image {left.shape} differ in size")
    if cfg.texture_threshold == 0:
        return disp
    weak = texture_score(left, cfg.texture_window) < cfg.texture_threshold
    return DisparityMap(np.where(weak, np.uint16(0xFFFF), disp.data))


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


@njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb


@njit(cache=True)
def _speckle(disp, max_diff, min_size):
    h, w = disp.shape
    n = h * w
    parent = np.arange(n)
    for y in range(h):
        for x in range(w):
            v = np.int32(disp[y, x])
            if v == 0xFFFF:
                continue
            i = y * w + x
            if x > 0:
                u = np.int32(disp[y, x - 1])
                if u != 0xFFFF and abs(v - u) <= max_diff:
                    _union(parent, i, i - 1)
            if y > 0:
                u = np.int32(disp[y - 1, x])
                if u != 0xFFFF and abs(v - u) <= max_diff:
                    _union(parent, i, i - w)
    size = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if disp.flat[i] != 0xFFFF:
            size[_find(parent, i)] += 1
    out = disp.copy()
    for i in range(n):
        if out.flat[i] != 0xFFFF and size[_find(parent, i)] < min_size:
            out.flat[i] = 0xFFFF
    return out


def speckle_filter(disp: DisparityMap, cfg: FilterConfig) -> DisparityMap:
    """Remove 4-connected components of similar disparity smaller than ``speckle_window``.

    Neighbours join a component when their disparities differ by at most
    ``speckle_max_diff`` pixels.
    """
    if cfg.speckle_window == 0:
        return disp
    out = _speckle(np.ascontiguousarray(disp.data), _to_raw(cfg.speckle_max_diff), cfg.speckle_window)
    return DisparityMap(out)


@njit(cache=True, nogil=True)
def _vertical_runs(disp):
    """Length of the vertical INVALID run through each INVALID pixel (0 if valid)."""
    h, w = disp.shape
    runs = np.zeros((h, w), dtype=np.int64)
    for x in range(w):
        y = 0
        while y < h:
            if disp[y, x] != 0xFFFF:
                y += 1
                continue
            start = y
            while y < h and disp[y, x] == 0xFFFF:
                y += 1
            for k in range(start, y):
                runs[k, x] = y - start
    return runs


@njit(cache=True, nogil=True)
def _gap_rows(disp, vruns, max_gap, similarity, out, y0, y1):
    w = disp.shape[1]
    for y in range(y0, y1):
        x = 0
        while x < w:
            if disp[y, x] != 0xFFFF:
                x += 1
                continue
            start = x
            while x < w and disp[y, x] == 0xFFFF:
                x += 1
            # runs touching either border have only one edge
            if start == 0 or x == w:
                continue
            left = np.int64(disp[y, start - 1])
            right = np.int64(disp[y, x])
            if abs(left - right) > similarity:
                continue
            length = x - start
            n = length + 1
            for k in range(1, n):
                xi = start + k - 1
                if min(length, vruns[y, xi]) <= max_gap:
                    out[y, xi] = (2 * (left * (n - k) + right * k) + n) // (2 * n)


def gap_interpolation(disp: DisparityMap, cfg: FilterConfig, threads: int = 1) -> DisparityMap:
    """Fill small horizontal INVALID runs by linear interpolation between their edges.

    A pixel of a run is filled when ``min(run length, its vertical INVALID run)
    <= max_gap`` and the two edge disparities differ by at most
    ``gap_similarity`` pixels.
    """
    if cfg.max_gap == 0:
        return disp
    src = np.ascontiguousarray(disp.data)
    vruns = _vertical_runs(src)
    out = src.copy()
    sim = _to_raw(cfg.gap_similarity)
    for_rows(lambda y0, y1: _gap_rows(src, vruns, cfg.max_gap, sim, out, y0, y1), disp.height, threads)
    return DisparityMap(out)


@njit(cache=True, nogil=True)
def _median_rows(disp, min_valid, out, y0, y1):
    h, w = disp.shape
    buf = np.empty(9, dtype=np.uint16)
    for y in range(y0, y1):
        for x in range(w):
            c = disp[y, x]
            out[y, x] = c
            if c == 0xFFFF:
                continue
            n = 0
            for yy in range(max(0, y - 1), min(h, y + 2)):
                for xx in range(max(0, x - 1), min(w, x + 2)):
                    v = disp[yy, xx]
                    if v != 0xFFFF:
                        # insertion sort into buf[:n]
                        k = n
                        while k > 0 and buf[k - 1] > v:
                            buf[k] = buf[k - 1]
                            k -= 1
                        buf[k] = v
                        n += 1
            if n >= min_valid:
                out[y, x] = buf[(n - 1) // 2]


def noise_filter(disp: DisparityMap, cfg: FilterConfig, threads: int = 1) -> DisparityMap:
    """3x3 median over valid neighbours; INVALID pixels are left untouched.

    A valid pixel is replaced only when at least ``median_min_valid`` pixels
    of its window (centre included) are valid. Even counts take the lower
    middle element.
    """
    src = np.ascontiguousarray(disp.data)
    out = np.empty_like(src)
    for_rows(lambda y0, y1: _median_rows(src, cfg.median_min_valid, out, y0, y1), disp.height, threads)
    return DisparityMap(out)
