import heapq

import numpy as np
import pytest
from scipy import ndimage

from core.errors import EmptyMarkersError, InsufficientMinimaError, ParameterError
from core.raster import CROSS, LabelField
from core.watershed import (
    Relief,
    contours,
    marker_watershed,
    minima,
    region_sizes,
    select_minima,
    unconstrained_watershed,
    volume_extinction,
    volume_watershed,
)


def _three_basins():
    """A (level 0) | ridge 5 | B (level 2) | ridge 8 | C (level 1), 8 rows × 32 columns."""
    profile = np.array([0] * 10 + [5] + [2] * 10 + [8] + [1] * 10)
    return Relief(np.tile(profile, (8, 1)))


def _point_markers(shape, points, void=None):
    labels = np.full(shape, len(points) if void is None else void)
    for label, (y, x) in enumerate(points):
        labels[y, x] = label
    return LabelField(labels, len(points), void_id=len(points) if void is None else void)


def _assert_partition(partition, count):
    labels = partition.labels
    assert partition.regions == count
    assert set(np.unique(labels).tolist()) == set(range(count))
    for region in range(count):
        _, pieces = ndimage.label(labels == region, structure=CROSS)
        assert pieces == 1


def _minima_oracle(levels):
    out = np.zeros(levels.shape, dtype=bool)
    for value in np.unique(levels):
        comps, count = ndimage.label(levels == value, structure=CROSS)
        for comp in range(1, count + 1):
            member = comps == comp
            grown = ndimage.binary_dilation(member, structure=CROSS) & ~member
            if not np.any(levels[grown] < value):
                out |= member
    return out


def _plateau_and_pit():
    """Wide level-0 plateau | ridge 9 | level-5 shelf with a one-pixel pit at level 3, 4 rows × 12 columns."""
    levels = np.tile(np.array([0] * 6 + [9] + [5] * 5), (4, 1))
    levels[1, 9] = 3
    return Relief(levels)


def _flood_oracle(levels, points):
    """Priority flood from point markers; a pixel takes the label of the first popped neighbour."""
    height, width = levels.shape
    labels = np.full(levels.shape, -1)
    heap = []
    for label, (y, x) in enumerate(points):
        labels[y, x] = label
        heapq.heappush(heap, (levels[y, x], y * width + x))
    while heap:
        _, p = heapq.heappop(heap)
        y, x = divmod(p, width)
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < height and 0 <= nx < width and labels[ny, nx] < 0:
                labels[ny, nx] = labels[y, x]
                heapq.heappush(heap, (levels[ny, nx], ny * width + nx))
    return labels


def _flooding_corpus():
    """50 quantized reliefs of at most 16×4 with distinct levels and point markers."""
    gen = np.random.default_rng(1606)
    corpus = []
    for _ in range(50):
        height, width = int(gen.integers(1, 5)), int(gen.integers(2, 17))
        levels = gen.permutation(height * width).reshape(height, width)
        count = int(gen.integers(1, min(4, height * width) + 1))
        flat = gen.choice(height * width, size=count, replace=False)
        corpus.append((levels, [divmod(int(p), width) for p in flat]))
    return corpus


def _merge_tree_extinction(levels, mins):
    """Extinction from thresholded lakes, for reliefs where every merge joins two lakes."""
    extinction = np.full(mins.num_classes, np.inf)
    for h in np.unique(levels):
        lakes, count = ndimage.label(levels < h, structure=CROSS)
        shores, _ = ndimage.label(levels <= h, structure=CROSS)
        meetings = {}
        for lake in range(1, count + 1):
            inside = lakes == lake
            owned = np.unique(mins.labels[inside & (mins.labels != mins.void_id)])
            alive = [int(m) for m in owned if np.isinf(extinction[m])]
            assert len(alive) == 1
            volume = float(np.sum(h - levels[inside]))
            meetings.setdefault(int(shores[inside][0]), []).append((volume, alive[0]))
        for meeting in meetings.values():
            assert len(meeting) <= 2
            if len(meeting) == 2:
                (va, ma), (vb, mb) = meeting
                loser, volume = (ma, va) if (va, -ma) < (vb, -mb) else (mb, vb)
                extinction[loser] = volume
    return extinction


class TestRelief:
    def test_quantization_preserves_order(self, rng):
        raster = rng.normal(size=(6, 6))
        relief = Relief.from_raster(raster)
        assert relief.levels.min() == 0
        assert relief.levels.max() == Relief.LEVELS - 1
        order = np.argsort(raster, axis=None)
        assert np.all(np.diff(relief.levels.ravel()[order]) >= 0)

    def test_constant_and_bad_levels(self):
        assert np.all(Relief.from_raster(np.full((3, 3), 7.0)).levels == 0)
        with pytest.raises(ParameterError):
            Relief.from_raster(np.zeros((2, 2)), levels=1)


class TestMarkerWatershed:
    def test_single_marker_covers_domain(self, rng):
        relief = Relief.from_raster(rng.uniform(size=(7, 9)))
        partition = marker_watershed(relief, _point_markers((7, 9), [(3, 3)]))
        assert np.all(partition.labels == 0)

    def test_flat_relief_splits_at_midpoint(self):
        relief = Relief(np.zeros((1, 10), dtype=np.int64))
        partition = marker_watershed(relief, _point_markers((1, 10), [(0, 0), (0, 9)]))
        assert partition.labels.tolist() == [[0] * 5 + [1] * 5]

    def test_boundary_on_the_ridge(self):
        profile = np.array([3, 2, 1, 0, 1, 2, 3, 4, 6, 5, 4, 3, 2, 1, 0, 1])
        relief = Relief(np.tile(profile, (4, 1)))
        partition = marker_watershed(relief, _point_markers((4, 16), [(1, 3), (2, 14)]))
        assert np.all(partition.labels[:, :8] == 0)
        assert np.all(partition.labels[:, 9:] == 1)

    def test_partition_axioms_and_marker_containment(self, rng):
        for _ in range(30):
            relief = Relief.from_raster(rng.uniform(size=(10, 12)))
            flat = rng.choice(120, size=4, replace=False)
            points = [divmod(int(p), 12) for p in flat]
            partition = marker_watershed(relief, _point_markers((10, 12), points))
            _assert_partition(partition, 4)
            for label, (y, x) in enumerate(points):
                assert partition.labels[y, x] == label

    def test_marker_label_order_does_not_change_flooding(self, rng):
        relief = Relief(rng.permutation(100).reshape(10, 10))
        points = [(1, 1), (8, 2), (4, 7), (9, 9)]
        base = marker_watershed(relief, _point_markers((10, 10), points))
        perm = np.array([2, 0, 3, 1])
        labels = np.full((10, 10), 4)
        for label, (y, x) in enumerate(points):
            labels[y, x] = perm[label]
        moved = marker_watershed(relief, LabelField(labels, 4, void_id=4))
        assert np.array_equal(moved.labels, perm[base.labels])

    def test_matches_reference_flooding_on_small_corpus(self):
        for levels, points in _flooding_corpus():
            partition = marker_watershed(Relief(levels), _point_markers(levels.shape, points))
            assert np.array_equal(partition.labels, _flood_oracle(levels, points))

    def test_no_markers(self):
        with pytest.raises(EmptyMarkersError):
            marker_watershed(Relief(np.zeros((3, 3), dtype=np.int64)),
                             LabelField(np.full((3, 3), 2), 2, void_id=2))


class TestMinima:
    def test_ramp_and_constant(self):
        ramp = Relief(np.tile(np.arange(6), (4, 1)))
        mins = minima(ramp)
        assert mins.num_classes == 1
        assert np.array_equal(mins.labels == 0, ramp.levels == 0)
        flat = minima(Relief(np.full((3, 4), 2, dtype=np.int64)))
        assert flat.num_classes == 1
        assert np.all(flat.labels == 0)

    def test_matches_plateau_oracle(self, rng):
        for _ in range(20):
            levels = rng.integers(0, 4, size=(6, 7))
            mins = minima(Relief(levels))
            assert np.array_equal(mins.labels != mins.void_id, _minima_oracle(levels))

    def test_minima_are_numbered_in_raster_order(self):
        mins = minima(_three_basins())
        assert mins.num_classes == 3
        assert mins.labels[0, 0] == 0
        assert mins.labels[0, 15] == 1
        assert mins.labels[0, 25] == 2


class TestVolumeWatershed:
    def test_three_basin_extinction(self):
        _, extinction = volume_extinction(_three_basins())
        assert extinction[0] == np.inf
        assert extinction[1] == 240
        assert extinction[2] == 560

    def test_three_basins_keep_the_two_largest(self):
        _, extinction = volume_extinction(_three_basins())
        assert select_minima(extinction, 2).tolist() == [0, 2]
        assert select_minima(extinction, 1).tolist() == [0]
        partition = volume_watershed(_three_basins(), 2)
        _assert_partition(partition, 2)
        assert np.all(partition.labels[:, :21] == 0)
        assert np.all(partition.labels[:, 22:] == 1)

    def test_plateau_minimum_outlives_a_deeper_pit(self):
        relief = _plateau_and_pit()
        mins, extinction = volume_extinction(relief)
        assert mins.num_classes == 2
        assert mins.labels[0, 0] == 0
        assert mins.labels[1, 9] == 1
        assert extinction.tolist() == [np.inf, 82]
        assert select_minima(extinction, 1).tolist() == [0]

    @pytest.mark.parametrize("make", [_three_basins, _plateau_and_pit])
    def test_extinction_matches_merge_tree(self, make):
        relief = make()
        mins, extinction = volume_extinction(relief)
        oracle = _merge_tree_extinction(relief.levels, mins)
        assert np.array_equal(extinction, oracle)
        regions = mins.num_classes - 1
        ranked = sorted(range(mins.num_classes), key=lambda m: (-oracle[m], m))
        assert select_minima(extinction, regions).tolist() == sorted(ranked[:regions])
        partition = volume_watershed(relief, regions)
        for region, m in enumerate(sorted(ranked[:regions])):
            assert np.all(partition.labels[mins.labels == m] == region)

    def test_single_region(self, rng):
        relief = Relief.from_raster(rng.uniform(size=(8, 8)))
        assert np.all(volume_watershed(relief, 1).labels == 0)

    def test_all_minima_equals_unconstrained(self, rng):
        relief = Relief(rng.integers(0, 6, size=(9, 9)))
        count = minima(relief).num_classes
        assert np.array_equal(volume_watershed(relief, count).labels, unconstrained_watershed(relief).labels)

    def test_one_survivor_on_plateau_reliefs(self, rng):
        for _ in range(20):
            _, extinction = volume_extinction(Relief(rng.integers(0, 4, size=(10, 10))))
            assert np.sum(np.isinf(extinction)) == 1
            assert np.all(extinction[np.isfinite(extinction)] > 0)

    def test_selection_is_nested(self, rng):
        _, extinction = volume_extinction(Relief(rng.integers(0, 20, size=(12, 12))))
        for regions in range(2, extinction.shape[0] + 1):
            smaller = set(select_minima(extinction, regions - 1).tolist())
            assert smaller <= set(select_minima(extinction, regions).tolist())

    def test_errors(self):
        relief = Relief(np.zeros((4, 4), dtype=np.int64))
        with pytest.raises(InsufficientMinimaError):
            volume_watershed(relief, 2)
        with pytest.raises(ParameterError):
            volume_watershed(relief, 0)


def test_contours_and_sizes():
    labels = np.zeros((4, 6), dtype=int)
    labels[:, 3:] = 1
    partition = marker_watershed(Relief(np.zeros((4, 6), dtype=np.int64)),
                                 LabelField(labels, 2))
    edge = contours(partition)
    assert np.all(edge[:, 2:4])
    assert not edge[:, [0, 1, 4, 5]].any()
    assert region_sizes(partition) == {0: 12, 1: 12}
