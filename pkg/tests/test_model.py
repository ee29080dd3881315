import numpy as np
import pytest

from core.errors import ParameterError
from core.model import ParameterMaps, fit_lines, fit_parameter_maps, rise
from core.raster import HyperImage

CHANNELS = 60


def _series(spectrum, shape=(3, 4)):
    return HyperImage(np.broadcast_to(spectrum, shape + (spectrum.shape[0],)))


def test_exact_line_is_recovered():
    j = np.arange(1, CHANNELS + 1, dtype=float)
    maps = fit_parameter_maps(_series(2 * j + 5), j1=21)
    assert np.allclose(maps.a, 2.0, atol=1e-9)
    assert np.allclose(maps.b, 5.0, atol=1e-9)
    assert np.allclose(maps.m, 38.0, atol=1e-9)


def test_constant_spectrum():
    maps = fit_parameter_maps(_series(np.full(CHANNELS, 7.5)), j1=21)
    assert np.allclose(maps.a, 0.0, atol=1e-12)
    assert np.allclose(maps.b, 7.5)
    assert np.all(maps.m == 0.0)


def test_noisy_line_matches_normal_equations(rng):
    spectra = rng.normal(100.0, 10.0, size=(5, CHANNELS))
    slope, intercept = fit_lines(spectra, 21)
    lam = np.arange(21, CHANNELS + 1, dtype=float)
    design = np.column_stack([lam, np.ones_like(lam)])
    coef = np.linalg.solve(design.T @ design, design.T @ spectra[:, 20:].T)
    assert np.allclose(slope, coef[0], atol=1e-9)
    assert np.allclose(intercept, coef[1], atol=1e-9)
    residual = spectra[:, 20:] - (slope[:, None] * lam + intercept[:, None])
    assert np.allclose(residual.sum(axis=1), 0.0, atol=1e-6)
    assert np.allclose((residual * lam).sum(axis=1), 0.0, atol=1e-6)


def test_scale_and_shift(rng):
    img = HyperImage(rng.uniform(10, 20, size=(4, 4, 30)))
    base = fit_parameter_maps(img, 10)
    scaled = fit_parameter_maps(HyperImage(img.cube * 3.0), 10)
    shifted = fit_parameter_maps(HyperImage(img.cube + 4.0), 10)
    assert np.allclose(scaled.a, 3.0 * base.a)
    assert np.allclose(scaled.b, 3.0 * base.b)
    assert np.allclose(scaled.m, 3.0 * base.m)
    assert np.allclose(shifted.a, base.a)
    assert np.allclose(shifted.b, base.b + 4.0)
    assert np.allclose(shifted.m, base.m)


def test_rise_is_non_negative(rng):
    assert np.all(rise(rng.normal(size=(6, 25)), 21) >= 0)


def test_j1_range():
    img = _series(np.ones(10))
    with pytest.raises(ParameterError):
        fit_parameter_maps(img, 1)
    with pytest.raises(ParameterError):
        fit_parameter_maps(img, 10)
    fit_parameter_maps(img, 9)


def test_parameter_image_round_trip():
    maps = ParameterMaps(a=np.ones((2, 2)), b=np.full((2, 2), 2.0), m=np.zeros((2, 2)), j1=21)
    back = ParameterMaps.from_image(maps.as_image(), 21)
    assert np.array_equal(back.b, maps.b)
    assert maps.shape == (2, 2)
    with pytest.raises(ParameterError):
        ParameterMaps.from_image(HyperImage(np.ones((2, 2, 2))), 21)
