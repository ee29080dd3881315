"""
Kinetic Atlas Morphology
========================
Flat grey-level and binary operators on 2-D rasters.

Border policy: the structuring element is clamped to the domain. For the
symmetric convex elements used here (squares and disks) that is the same
as replicating edge pixels, which is what mode='nearest' does.
"""

from dataclasses import dataclass
from typing import FrozenSet, Tuple

import numpy as np
from scipy import ndimage
from scipy.signal import windows
from skimage.morphology import reconstruction

from .errors import ParameterError
from .raster import CROSS, require_same_shape

# Leveling alternations stop once successive outputs agree
LEVELING_MAX_ITER = 50


@dataclass(frozen=True)
class StructuringElement:
    """Flat, origin-centred structuring element: square(n) or disk(r)."""
    shape: str
    size: int
    footprint: np.ndarray

    @property
    def offsets(self) -> FrozenSet[Tuple[int, int]]:
        radius = self.footprint.shape[0] // 2
        rows, cols = np.nonzero(self.footprint)
        return frozenset(zip((rows - radius).tolist(), (cols - radius).tolist()))

    def __repr__(self) -> str:
        return f"{self.shape}({self.size})"


def square(n: int) -> StructuringElement:
    """n×n square; n must be odd so the element is centred."""
    if n < 1 or n % 2 == 0:
        raise ParameterError(f"square size must be odd and positive, got {n}")
    footprint = np.ones((n, n), dtype=bool)
    footprint.setflags(write=False)
    return StructuringElement("square", n, footprint)


def disk(r: int) -> StructuringElement:
    """Euclidean disk of radius r: offsets with dy² + dx² ≤ r²."""
    if r < 0:
        raise ParameterError(f"disk radius must be non-negative, got {r}")
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    footprint = (yy * yy + xx * xx) <= r * r
    footprint.setflags(write=False)
    return StructuringElement("disk", r, footprint)


def erode(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    return ndimage.grey_erosion(np.asarray(f, dtype=np.float64), footprint=se.footprint, mode="nearest")


def dilate(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    return ndimage.grey_dilation(np.asarray(f, dtype=np.float64), footprint=se.footprint, mode="nearest")


def opening(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    return dilate(erode(f, se), se)


def binary_erode(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Binary erosion under the same clamp policy as erode."""
    return erode(np.asarray(mask, dtype=np.float64), se) > 0.5


def binary_opening(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return opening(np.asarray(mask, dtype=np.float64), se) > 0.5


def closing_by_reconstruction(f: np.ndarray, se: StructuringElement = None) -> np.ndarray:
    """
    Fill the holes of a binary raster.

    The background is rebuilt by geodesic dilation from its border pixels
    (connectivity given by se, 4-connectivity by default); whatever the
    border cannot reach is a hole and joins the foreground.
    """
    mask = np.asarray(f, dtype=bool)
    structure = CROSS if se is None else se.footprint
    background = ~mask
    seeds = np.zeros_like(background)
    seeds[0, :] = background[0, :]
    seeds[-1, :] = background[-1, :]
    seeds[:, 0] = background[:, 0]
    seeds[:, -1] = background[:, -1]
    reachable = ndimage.binary_propagation(seeds, structure=structure, mask=background)
    return ~reachable


def area_opening(f: np.ndarray, s: int) -> np.ndarray:
    """Drop 4-connected foreground components with fewer than s pixels."""
    if s < 1:
        raise ParameterError(f"minimum area must be at least 1, got {s}")
    mask = np.asarray(f, dtype=bool)
    comps, count = ndimage.label(mask, structure=CROSS)
    if count == 0:
        return mask.copy()
    areas = np.bincount(comps.ravel())
    keep = areas >= s
    keep[0] = False
    return keep[comps]


def leveling(f: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """
    Leveling of f towards ref.

    Where ref lies below f the output is the reconstruction by dilation of
    min(f, ref) under f; where ref lies above f it is the reconstruction by
    erosion of max(f, ref) over f. The pair is alternated until stable.
    """
    f = np.asarray(f, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    require_same_shape(f, ref)
    current = f
    for _ in range(LEVELING_MAX_ITER):
        lower = reconstruction(np.minimum(current, ref), current, method="dilation", footprint=CROSS)
        upper = reconstruction(np.maximum(current, ref), current, method="erosion", footprint=CROSS)
        nxt = np.where(ref < current, lower, np.where(ref > current, upper, current))
        if np.array_equal(nxt, current):
            break
        current = nxt
    return current


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Unit-sum sampled 2-D Gaussian on a size×size window."""
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"gaussian window must be odd and positive, got {size}")
    if sigma <= 0:
        raise ParameterError(f"gaussian sigma must be positive, got {sigma}")
    profile = windows.gaussian(size, std=sigma)
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def gaussian_filter(f: np.ndarray, size: int, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel(size, sigma)
    return ndimage.convolve(np.asarray(f, dtype=np.float64), kernel, mode="nearest")


def parzen_size(sigma: float) -> int:
    """Odd window covering ±4σ."""
    return 2 * int(np.ceil(4.0 * sigma)) + 1
