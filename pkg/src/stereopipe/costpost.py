"""Cost-volume post-processing: subpixel extraction, uniqueness and consistency.

The right-camera disparity map is not matched a second time; it is read off
the anti-diagonals of the left-to-right cost volume.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from numba import njit

from stereopipe._parallel import for_rows
from stereopipe.imagecore import DisparityMap
from stereopipe.sgm import CostVolume, MatchConfig

NO_MATCH = -1


@dataclass(frozen=True)
class PostConfig:
    """Uniqueness factor ``q >= 1`` and consistency threshold ``t_c`` (pixels).

    ``consistency_threshold=None`` disables the consistency check.
    ``exclude_neighbors`` drops j*-1 and j*+1 from the uniqueness competitors.
    """

    uniqueness_factor: float = 1.05
    consistency_threshold: Optional[int] = 0
    exclude_neighbors: bool = True

    def __post_init__(self):
        if not self.uniqueness_factor >= 1:
            raise ValueError(f"uniqueness factor must be >= 1, got {self.uniqueness_factor}")
        if self.consistency_threshold is not None and self.consistency_threshold < 0:
            raise ValueError("consistency threshold must be >= 0")


def uniqueness_ratio(q) -> tuple[int, int]:
    """``q`` as an exact fraction with a denominator of at most 255."""
    frac = Fraction(str(q)) if isinstance(q, float) else Fraction(q)
    frac = frac.limit_denominator(255)
    if frac < 1:
        raise ValueError(f"uniqueness factor must be >= 1, got {q}")
    return frac.numerator, frac.denominator


@njit(cache=True, nogil=True)
def _best_index(costs, nvalid):
    best = 0
    for j in range(1, nvalid):
        if costs[j] < costs[best]:
            best = j
    return best


@njit(cache=True, nogil=True)
def _extract_rows(costs, offset, out, y0, y1):
    w, nd = costs.shape[1], costs.shape[2]
    for y in range(y0, y1):
        for x in range(w):
            nvalid = min(nd, x - offset + 1)
            if nvalid <= 0:
                out[y, x] = 0xFFFF
                continue
            j = _best_index(costs[y, x], nvalid)
            raw = (offset + j) * 16
            # refine only when both neighbours are real entries
            if 0 < j and j + 1 < nvalid:
                cm = np.int64(costs[y, x, j - 1])
                c0 = np.int64(costs[y, x, j])
                cp = np.int64(costs[y, x, j + 1])
                num = cm - cp
                den = 2 * (cm - 2 * c0 + cp)
                if den > 0:
                    # 16 * delta, clamped to [-8, 8], rounded half up
                    if 2 * num >= den:
                        frac = 8
                    elif -2 * num >= den:
                        frac = -8
                    else:
                        frac = (32 * num + den) // (2 * den)
                    raw += frac
            out[y, x] = raw


def extract_disparity(vol: CostVolume, cfg: MatchConfig = None, threads: int = 1) -> DisparityMap:
    """Winner-take-all with three-point parabola refinement to 1/16 px.

    Ties go to the lowest disparity index. Minima at the ends of the valid
    range, or next to an out-of-image entry, are not refined.
    """
    offset = vol.disparity_offset if cfg is None else cfg.disparity_offset
    costs = np.ascontiguousarray(vol.costs)
    out = np.empty((vol.height, vol.width), dtype=np.uint16)
    for_rows(lambda y0, y1: _extract_rows(costs, offset, out, y0, y1), vol.height, threads)
    return DisparityMap(out)


@njit(cache=True, nogil=True)
def _uniqueness_rows(costs, offset, disp, q_num, q_den, gap, out, y0, y1):
    w, nd = costs.shape[1], costs.shape[2]
    for y in range(y0, y1):
        for x in range(w):
            out[y, x] = disp[y, x]
            if disp[y, x] == 0xFFFF:
                continue
            nvalid = min(nd, x - offset + 1)
            if nvalid <= 0:
                out[y, x] = 0xFFFF
                continue
            best = _best_index(costs[y, x], nvalid)
            m = np.int64(-1)
            for j in range(nvalid):
                if abs(j - best) > gap and (m < 0 or costs[y, x, j] < m):
                    m = np.int64(costs[y, x, j])
            if m >= 0 and not np.int64(costs[y, x, best]) * q_num < m * q_den:
                out[y, x] = 0xFFFF


def uniqueness_check(
    vol: CostVolume,
    disp: DisparityMap,
    q=1.05,
    exclude_neighbors: bool = True,
    threads: int = 1,
) -> DisparityMap:
    """Invalidate pixels whose best cost times ``q`` is not below every competitor.

    Competitors are all in-image disparities other than the best one (and,
    with ``exclude_neighbors``, its two direct neighbours). The comparison is
    done in integers with ``q`` as a fraction.
    """
    q_num, q_den = uniqueness_ratio(q)
    costs = np.ascontiguousarray(vol.costs)
    src = disp.data
    out = np.empty_like(src)
    gap = 1 if exclude_neighbors else 0
    for_rows(
        lambda y0, y1: _uniqueness_rows(
            costs, vol.disparity_offset, src, q_num, q_den, gap, out, y0, y1
        ),
        vol.height,
        threads,
    )
    return DisparityMap(out)


@njit(cache=True, nogil=True)
def _right_rows(costs, offset, out, y0, y1):
    w, nd = costs.shape[1], costs.shape[2]
    for y in range(y0, y1):
        for xr in range(w):
            best = -1
            for j in range(nd):
                x = xr + offset + j
                if x >= w:
                    break
                if best < 0 or costs[y, x, j] < costs[y, xr + offset + best, best]:
                    best = j
            out[y, xr] = -1 if best < 0 else offset + best


def right_disparity(vol: CostVolume, threads: int = 1) -> np.ndarray:
    """Integer right-camera disparities from the volume's anti-diagonals.

    ``d_r(x_r) = o_d + argmin_j cost(x_r + o_d + j, j)``; columns with no
    in-image candidate get ``NO_MATCH`` (-1).
    """
    costs = np.ascontiguousarray(vol.costs)
    out = np.empty((vol.height, vol.width), dtype=np.int32)
    for_rows(lambda y0, y1: _right_rows(costs, vol.disparity_offset, out, y0, y1), vol.height, threads)
    return out


@njit(cache=True, nogil=True)
def _consistency_rows(disp, d_right, t_c, out, y0, y1):
    w = disp.shape[1]
    for y in range(y0, y1):
        for x in range(w):
            raw = disp[y, x]
            out[y, x] = raw
            if raw == 0xFFFF:
                continue
            d_l = (np.int64(raw) + 8) >> 4
            xr = x - d_l
            if xr < 0 or xr >= w or d_right[y, xr] < 0 or abs(d_l - d_right[y, xr]) > t_c:
                out[y, x] = 0xFFFF


def consistency_check(
    vol: CostVolume,
    disp: DisparityMap,
    cfg: MatchConfig = None,
    t_c: Optional[int] = 0,
    threads: int = 1,
) -> DisparityMap:
    """Keep pixels whose rounded disparity agrees with the right map within ``t_c``.

    ``t_c=None`` disables the check.
    """
    if t_c is None:
        return disp
    d_right = right_disparity(vol, threads)
    src = disp.data
    out = np.empty_like(src)
    for_rows(lambda y0, y1: _consistency_rows(src, d_right, int(t_c), out, y0, y1), vol.height, threads)
    return DisparityMap(out)


def refine(
    vol: CostVolume, cfg: MatchConfig, post: PostConfig, threads: int = 1
) -> DisparityMap:
    """Extraction followed by uniqueness and consistency, in that order."""
    disp = extract_disparity(vol, cfg, threads)
    disp = uniqueness_check(vol, disp, post.uniqueness_factor, post.exclude_neighbors, threads)
    return consistency_check(vol, disp, cfg, post.consistency_threshold, threads)

