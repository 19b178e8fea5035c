"""5x5 census transform.

Bit ``k`` of a descriptor is set when the ``k``-th neighbor (raster order over
the 5x5 window, centre skipped) is strictly darker than the centre pixel.
Neighbors outside the image read as intensity 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stereopipe.imagecore import GrayImage

RADIUS = 2
NEIGHBORS = [
    (dy, dx)
    for dy in range(-RADIUS, RADIUS + 1)
    for dx in range(-RADIUS, RADIUS + 1)
    if (dy, dx) != (0, 0)
]


@dataclass(frozen=True, eq=False)
class CensusImage:
    """24-bit descriptors in a uint32 array of shape (H, W)."""

    data: np.ndarray

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def census_transform(img: GrayImage) -> CensusImage:
    if img.width < 5 or img.height < 5:
        raise ValueError(f"census needs at least a 5x5 image, got {img.width}x{img.height}")
    h, w = img.shape
    padded = np.zeros((h + 2 * RADIUS, w + 2 * RADIUS), dtype=np.uint8)
    padded[RADIUS : RADIUS + h, RADIUS : RADIUS + w] = img.data
    centre = img.data
    desc = np.zeros((h, w), dtype=np.uint32)
    for k, (dy, dx) in enumerate(NEIGHBORS):
        nb = padded[RADIUS + dy : RADIUS + dy + h, RADIUS + dx : RADIUS + dx + w]
        desc |= (nb < centre).astype(np.uint32) << np.uint32(k)
    desc.flags.writeable = False
    return CensusImage(desc)
