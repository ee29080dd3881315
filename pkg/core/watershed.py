"""
Kinetic Atlas Watershed
=======================
Marker-controlled flooding and hierarchical selection of minima by volume
extinction.

The relief is first quantized to Relief.LEVELS integer levels. Flooding is
a priority flood with FIFO order inside a level (skimage's heap keeps the
insertion age), 4-connected. Each pixel joins a region; contours are the
pixels having a 4-neighbour with another label.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from skimage.measure import label as label_plateaus
from skimage.segmentation import find_boundaries, watershed

from .errors import EmptyMarkersError, InsufficientMinimaError, ParameterError
from .raster import LabelField


@dataclass(frozen=True)
class Relief:
    """Landscape to flood, quantized to integer levels 0..LEVELS-1."""
    levels: np.ndarray

    LEVELS = 4096

    @classmethod
    def from_raster(cls, raster: np.ndarray, levels: int = None) -> "Relief":
        levels = levels or cls.LEVELS
        if levels < 2:
            raise ParameterError(f"relief needs at least 2 levels, got {levels}")
        raster = np.asarray(raster, dtype=np.float64)
        low, high = float(raster.min()), float(raster.max())
        if high == low:
            quantized = np.zeros(raster.shape, dtype=np.int64)
        else:
            quantized = np.rint((raster - low) / (high - low) * (levels - 1)).astype(np.int64)
        return cls(quantized)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.levels.shape


@dataclass(frozen=True)
class Partition:
    """Label field covering every pixel with regions 0..R-1."""
    field: LabelField

    @property
    def labels(self) -> np.ndarray:
        return self.field.labels

    @property
    def regions(self) -> int:
        return self.field.num_classes


def _marker_array(markers: LabelField) -> Tuple[np.ndarray, np.ndarray]:
    """skimage marker raster (0 = unmarked) and the marker labels in use."""
    labels = markers.labels
    valid = (labels >= 0) & (labels < markers.num_classes)
    if markers.void_id is not None:
        valid &= labels != markers.void_id
    used = np.unique(labels[valid])
    if used.size == 0:
        raise EmptyMarkersError("watershed needs at least one marker")
    lookup = np.zeros(markers.num_classes, dtype=np.int64)
    lookup[used] = np.arange(1, used.size + 1)
    out = np.zeros(labels.shape, dtype=np.int64)
    out[valid] = lookup[labels[valid]]
    return out, used


def marker_watershed(relief: Relief, markers: LabelField) -> Partition:
    """Flood from the markers; region ids follow the order of marker labels."""
    seeds, used = _marker_array(markers)
    flooded = watershed(relief.levels, markers=seeds, connectivity=1)
    return Partition(LabelField(flooded - 1, int(used.size)))


def minima(relief: Relief) -> LabelField:
    """
    Regional minima: 4-connected plateaus with no strictly lower neighbour.

    Minima are numbered by their lowest pixel index; other pixels get the
    void label (the minima count).
    """
    levels = relief.levels
    plateaus = label_plateaus(levels, background=-1, connectivity=1)
    lower = np.zeros(levels.shape, dtype=bool)
    lower[1:, :] |= levels[:-1, :] < levels[1:, :]
    lower[:-1, :] |= levels[1:, :] < levels[:-1, :]
    lower[:, 1:] |= levels[:, :-1] < levels[:, 1:]
    lower[:, :-1] |= levels[:, 1:] < levels[:, :-1]
    spoiled = np.bincount(plateaus.ravel(), weights=lower.ravel(), minlength=plateaus.max() + 1) > 0
    is_min = ~spoiled
    is_min[0] = False
    # skimage numbers plateaus in raster order of their first pixel
    ids = np.full(is_min.shape[0], -1, dtype=np.int64)
    ids[is_min] = np.arange(int(is_min.sum()))
    count = int(is_min.sum())
    out = ids[plateaus]
    out[out < 0] = count
    return LabelField(out, count, void_id=count)


class _Basins:
    """Union-find over pixels carrying area, level sum and owning minimum."""

    def __init__(self, size: int):
        self.parent = np.arange(size)
        self.area = np.zeros(size, dtype=np.int64)
        self.level_sum = np.zeros(size, dtype=np.int64)
        self.minimum = np.full(size, -1, dtype=np.int64)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def volume(self, root: int, level: int) -> int:
        return int(self.area[root]) * level - int(self.level_sum[root])


def volume_extinction(relief: Relief) -> Tuple[LabelField, np.ndarray]:
    """
    Volume extinction value of every minimum.

    Pixels are added level by level. When two basins that own different
    minima meet at level h, the one with the smaller volume at h
    (ties: larger minimum id) dies and records that volume. The last
    survivor gets +inf.
    """
    mins = minima(relief)
    count = mins.num_classes
    levels = relief.levels.ravel()
    height, width = relief.shape
    min_ids = mins.labels.ravel()
    basins = _Basins(levels.size)
    active = np.zeros(levels.size, dtype=bool)
    extinction = np.full(count, np.inf)

    order = np.argsort(levels, kind="stable")
    boundaries = np.flatnonzero(np.diff(levels[order])) + 1
    for group in np.split(order, boundaries):
        h = int(levels[group[0]])
        for p in group:
            active[p] = True
            basins.area[p] = 1
            basins.level_sum[p] = h
            if min_ids[p] < count:
                basins.minimum[p] = min_ids[p]
        for p in group:
            row, col = divmod(int(p), width)
            neighbours = []
            if row > 0:
                neighbours.append(p - width)
            if row < height - 1:
                neighbours.append(p + width)
            if col > 0:
                neighbours.append(p - 1)
            if col < width - 1:
                neighbours.append(p + 1)
            for q in neighbours:
                if not active[q]:
                    continue
                a, b = basins.find(int(p)), basins.find(int(q))
                if a == b:
                    continue
                ma, mb = basins.minimum[a], basins.minimum[b]
                # pieces of one plateau minimum carry the same id
                if ma >= 0 and mb >= 0 and ma != mb:
                    va, vb = basins.volume(a, h), basins.volume(b, h)
                    # survivor: larger volume, then smaller minimum id
                    if (va, -ma) < (vb, -mb):
                        loser, survivor_min = ma, mb
                    else:
                        loser, survivor_min = mb, ma
                    extinction[loser] = min(va, vb)
                    keep = survivor_min
                else:
                    keep = ma if ma >= 0 else mb
                basins.parent[b] = a
                basins.area[a] += basins.area[b]
                basins.level_sum[a] += basins.level_sum[b]
                basins.minimum[a] = keep
    return mins, extinction


def select_minima(extinction: np.ndarray, regions: int) -> np.ndarray:
    """Ids of the `regions` minima with the largest extinction (ties: lower id)."""
    ranking = sorted(range(extinction.shape[0]), key=lambda m: (-extinction[m], m))
    return np.sort(np.asarray(ranking[:regions], dtype=np.int64))


def volume_watershed(relief: Relief, regions: int) -> Partition:
    if regions < 1:
        raise ParameterError(f"region count must be at least 1, got {regions}")
    mins, extinction = volume_extinction(relief)
    if mins.num_classes < regions:
        raise InsufficientMinimaError(f"relief has {mins.num_classes} minima, {regions} regions requested")
    kept = select_minima(extinction, regions)
    lookup = np.full(mins.num_classes + 1, regions, dtype=np.int64)
    lookup[kept] = np.arange(regions)
    markers = LabelField(lookup[mins.labels], regions, void_id=regions)
    logging.info(f"Volume watershed: {regions} of {mins.num_classes} minima kept")
    return marker_watershed(relief, markers)


def contours(partition: Partition) -> np.ndarray:
    """Pixels with a 4-neighbour of another region."""
    return find_boundaries(partition.labels, connectivity=1, mode="thick")


def region_sizes(partition: Partition) -> Dict[int, int]:
    counts = np.bincount(partition.labels.ravel(), minlength=partition.regions)
    return {int(r): int(c) for r, c in enumerate(counts)}


def unconstrained_watershed(relief: Relief) -> Partition:
    """Watershed from every regional minimum."""
    mins = minima(relief)
    return marker_watershed(relief, mins)

