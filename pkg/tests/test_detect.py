import json

import numpy as np
import pytest

from core.detect import (
    BETA_A_CLAMP,
    background_floor,
    confidence_maps,
    detect_regions,
    region_stats,
    render_risk,
    stats_report,
)
from core.errors import DimensionMismatchError
from core.model import ParameterMaps
from core.raster import LabelField
from core.watershed import Partition


def _halves(height=4, width=6):
    labels = np.zeros((height, width), dtype=int)
    labels[:, width // 2:] = 1
    return Partition(LabelField(labels, 2))


def _maps(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return ParameterMaps(a=a, b=b, m=np.zeros_like(a), j1=21)


def test_constant_regions_have_zero_beta():
    seg = _halves()
    a = np.where(seg.labels == 0, 2.0, 3.0)
    b = np.where(seg.labels == 0, 500.0, 900.0)
    stats = region_stats(_maps(a, b), seg)
    assert stats.count.tolist() == [12, 12]
    assert stats.beta_a.tolist() == [0.0, 0.0]
    assert stats.beta_b.tolist() == [0.0, 0.0]
    assert stats.mean_b.tolist() == [500.0, 900.0]


def test_non_positive_mean_gives_infinite_beta():
    seg = _halves()
    a = np.where(seg.labels == 0, 0.0, -1.0)
    stats = region_stats(_maps(a, np.ones(a.shape)), seg)
    assert np.all(np.isinf(stats.beta_a))


def test_population_std(rng):
    seg = _halves()
    a = rng.normal(1.0, 0.2, size=seg.labels.shape)
    stats = region_stats(_maps(a, np.ones(a.shape)), seg)
    left = a[seg.labels == 0]
    assert stats.std_a[0] == pytest.approx(left.std(ddof=0))
    assert stats.beta_a[0] == pytest.approx(left.std(ddof=0) / left.mean())


def test_threshold_is_strict():
    seg = _halves()
    b = np.where(seg.labels == 0, 800.0, 801.0)
    stats = detect_regions(region_stats(_maps(np.ones(b.shape), b), seg), 800.0)
    assert stats.detected.tolist() == [False, True]


def test_negative_slope_is_never_detected():
    seg = _halves()
    stats = detect_regions(region_stats(_maps(np.full((4, 6), -0.5), np.full((4, 6), 2000.0)), seg))
    assert not stats.detected.any()


def test_scaling_b_and_threshold_together(rng):
    seg = Partition(LabelField(rng.integers(0, 5, size=(10, 10)), 5))
    a = rng.normal(0.5, 1.0, size=(10, 10))
    b = rng.uniform(400, 1200, size=(10, 10))
    base = detect_regions(region_stats(_maps(a, b), seg), 800.0)
    scaled = detect_regions(region_stats(_maps(a, 3.0 * b), seg), 2400.0)
    assert np.array_equal(base.detected, scaled.detected)


def test_raising_the_threshold_never_adds_regions(rng):
    seg = Partition(LabelField(rng.integers(0, 8, size=(12, 12)), 8))
    stats = region_stats(_maps(rng.normal(1.0, 1.0, size=(12, 12)), rng.uniform(0, 1600, size=(12, 12))), seg)
    previous = None
    for threshold in np.linspace(0, 1600, 17):
        detected = detect_regions(stats, threshold).detected
        if previous is not None:
            assert np.all(detected <= previous)
        previous = detected
    assert stats.count.sum() == 144


def test_background_floor_suppresses_dark_regions():
    seg = _halves()
    b = np.full((4, 6), 1000.0)
    intensity = np.where(seg.labels == 0, 10.0, 500.0)
    stats = region_stats(_maps(np.ones(b.shape), b), seg, intensity)
    assert detect_regions(stats, 800.0).detected.tolist() == [True, True]
    floor = 100.0
    assert detect_regions(stats, 800.0, floor).detected.tolist() == [False, True]
    assert background_floor(np.arange(101.0), 5.0) == pytest.approx(5.0)


def test_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        region_stats(_maps(np.ones((3, 3)), np.ones((3, 3))), _halves())
    with pytest.raises(DimensionMismatchError):
        region_stats(_maps(np.ones((4, 6)), np.ones((4, 6))), _halves(), np.ones((2, 2)))


def test_confidence_maps_clamp_and_render(rng):
    seg = _halves()
    a = np.where(seg.labels == 0, 1.0, 0.0)
    a[0, 0] = 30.0
    stats = region_stats(_maps(a, np.ones(a.shape)), seg)
    maps = confidence_maps(stats, seg)
    assert maps.beta_a.max() <= BETA_A_CLAMP
    assert np.all(maps.beta_a[seg.labels == 1] == BETA_A_CLAMP)
    assert maps.risk_a.shape == (4, 6, 3)
    assert maps.risk_a.dtype == np.uint8
    blue = render_risk(np.zeros((1, 1)), 1.0)[0, 0]
    assert blue[2] > blue[0]
    red = render_risk(np.ones((1, 1)), 1.0)[0, 0]
    assert red[0] > red[2]


def test_stats_report_is_json_ready():
    seg = _halves()
    stats = detect_regions(region_stats(_maps(np.zeros((4, 6)), np.full((4, 6), 900.0)), seg))
    records = stats_report(stats)
    assert [r["id"] for r in records] == [0, 1]
    assert records[0]["beta_a"] == "inf"
    assert records[0]["area"] == 12
    assert records[0]["detected"] is False
    json.dumps(records)
