import numpy as np
import pytest

from core.errors import DegenerateMarginError, DimensionMismatchError, ParameterError
from core.gradient import (
    GradientMap,
    ImageMarginals,
    Metric,
    MetricKind,
    metric_for_space,
    morph_gradient,
    normalize01,
    pixel_distance,
    smooth_then_gradient,
    vector_gradient,
)
from core.raster import HyperImage


def _step(height=6, width=10, low=0.0, high=1.0):
    f = np.full((height, width), low)
    f[:, width // 2:] = high
    return f


def _scalar_oracle(f):
    height, width = f.shape
    out = np.zeros_like(f)
    for y in range(height):
        for x in range(width):
            dists = [abs(f[y, x] - f[y + dy, x + dx])
                     for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                     if (dy, dx) != (0, 0) and 0 <= y + dy < height and 0 <= x + dx < width]
            out[y, x] = max(dists) - min(dists)
    return out


class TestPixelDistance:
    def test_identity_and_scalar(self, rng):
        u = rng.uniform(1, 2, size=4)
        stats = ImageMarginals(col_sums=np.ones(4), total=4.0)
        for metric in (MetricKind.euclidean(), MetricKind.chi_squared(),
                       MetricKind.inverse_variance(np.full(4, 2.0)), MetricKind.mahalanobis(np.eye(4))):
            assert pixel_distance(u, u, metric, stats) == 0.0
        assert pixel_distance([3.0], [7.0], MetricKind.euclidean()) == pytest.approx(4.0)

    def test_chi_squared_formula(self):
        img = HyperImage(np.array([[[1.0, 2.0, 3.0], [4.0, 1.0, 5.0]]]))
        stats = ImageMarginals.from_image(img)
        u, v = img.table
        col = u + v
        total = col.sum()
        expected = np.sqrt(np.sum(total / col * (u / u.sum() - v / v.sum()) ** 2))
        assert pixel_distance(u, v, MetricKind.chi_squared(), stats) == pytest.approx(expected, rel=1e-12)

    def test_chi_squared_errors(self):
        stats = ImageMarginals(col_sums=np.ones(2), total=2.0)
        with pytest.raises(DegenerateMarginError):
            pixel_distance([0.0, 0.0], [1.0, 1.0], MetricKind.chi_squared(), stats)
        with pytest.raises(ParameterError):
            pixel_distance([1.0, 0.0], [1.0, 1.0], MetricKind.chi_squared())
        with pytest.raises(DimensionMismatchError):
            pixel_distance([1.0], [1.0, 2.0], MetricKind.euclidean())

    def test_symmetry(self, rng):
        u, v = rng.uniform(1, 5, size=(2, 5))
        cov = np.cov(rng.normal(size=(50, 5)), rowvar=False)
        metric = MetricKind.mahalanobis(cov)
        assert pixel_distance(u, v, metric) == pytest.approx(pixel_distance(v, u, metric))

    def test_inverse_variance_is_diagonal_mahalanobis(self, rng):
        sigma = rng.uniform(0.5, 3.0, size=4)
        u, v = rng.normal(size=(2, 4))
        a = pixel_distance(u, v, MetricKind.inverse_variance(sigma))
        b = pixel_distance(u, v, MetricKind.mahalanobis(np.diag(sigma ** 2)))
        assert a == pytest.approx(b, abs=1e-12)

    def test_metric_preconditions(self):
        with pytest.raises(ParameterError):
            MetricKind.inverse_variance([1.0, 0.0])
        with pytest.raises(ParameterError):
            MetricKind.mahalanobis(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            MetricKind.parse("cosine")
        assert MetricKind.parse("inverse_variance", HyperImage(np.arange(8.0).reshape(2, 2, 2))).kind \
            is Metric.INVERSE_VARIANCE


class TestMorphGradient:
    def test_constant_and_step(self):
        assert np.all(morph_gradient(np.full((5, 5), 2.0)).values == 0.0)
        g = morph_gradient(_step()).values
        assert np.all(g[:, 4:6] == 1.0)
        assert np.all(np.delete(g, [4, 5], axis=1) == 0.0)

    def test_matches_window_oracle(self, rng):
        f = rng.normal(size=(7, 8))
        padded = np.pad(f, 1, mode="edge")
        windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
        oracle = windows.max(axis=(-1, -2)) - windows.min(axis=(-1, -2))
        assert np.allclose(morph_gradient(f).values, oracle)


class TestVectorGradient:
    def test_constant_image(self):
        img = HyperImage(np.full((5, 5, 3), 4.0))
        assert np.all(vector_gradient(img).values == 0.0)

    def test_single_channel_matches_scalar_oracle(self, rng):
        f = rng.normal(size=(5, 6))
        g = vector_gradient(HyperImage(f), MetricKind.euclidean())
        assert np.allclose(g.values, _scalar_oracle(f))

    def test_step_edge_equals_morph_gradient(self):
        f = _step(low=2.0, high=5.0)
        assert np.allclose(vector_gradient(HyperImage(f)).values, morph_gradient(f).values)

    def test_bounded_by_morph_gradient(self, rng):
        f = rng.normal(size=(8, 8))
        assert np.all(vector_gradient(HyperImage(f)).values <= morph_gradient(f).values + 1e-12)

    def test_two_regions_light_up_the_boundary_only(self):
        cube = np.empty((6, 10, 3))
        cube[:, :5] = [1.0, 2.0, 3.0]
        cube[:, 5:] = [3.0, 1.0, 2.0]
        g = vector_gradient(HyperImage(cube), MetricKind.chi_squared()).values
        assert np.all(g[:, 4:6] > 0)
        assert np.all(np.delete(g, [4, 5], axis=1) == 0.0)

    def test_channel_permutation(self, rng):
        cube = rng.uniform(1, 2, size=(6, 6, 4))
        sigma = np.array([0.5, 1.0, 2.0, 4.0])
        perm = np.array([2, 0, 3, 1])
        base = vector_gradient(HyperImage(cube), MetricKind.inverse_variance(sigma)).values
        moved = vector_gradient(HyperImage(cube[:, :, perm]), MetricKind.inverse_variance(sigma[perm])).values
        assert np.allclose(base, moved)
        assert np.allclose(vector_gradient(HyperImage(cube)).values,
                           vector_gradient(HyperImage(cube[:, :, perm])).values)


class TestSmoothing:
    def test_constant_image(self):
        img = HyperImage(np.full((12, 12, 2), 3.0))
        assert np.allclose(smooth_then_gradient(img).values, 0.0)

    def test_leveling_sharpens_noisy_boundary(self, rng):
        clean = _step(height=32, width=32, low=10.0, high=20.0)
        img = HyperImage(clean + rng.normal(0.0, 1.0, size=clean.shape))
        band = np.zeros(clean.shape, dtype=bool)
        band[:, 14:18] = True

        def contrast(g):
            return g[band].mean() / g[~band].mean()

        assert contrast(smooth_then_gradient(img).values) > contrast(vector_gradient(img).values)


class TestNormalize:
    def test_scaling(self, rng):
        g = GradientMap(np.array([[0.0, 2.0], [4.0, 1.0]]))
        out = normalize01(g)
        assert out.normalized
        assert out.values.max() == 1.0
        values = rng.uniform(size=(5, 5))
        assert np.argmax(normalize01(GradientMap(values)).values) == np.argmax(values)

    def test_zero_map(self):
        out = normalize01(GradientMap(np.zeros((3, 3))))
        assert out.normalized
        assert np.all(out.values == 0.0)


def test_metric_for_space():
    img = HyperImage(np.arange(1.0, 13.0).reshape(2, 2, 3))
    assert metric_for_space("factor", img).kind is Metric.EUCLIDEAN
    assert metric_for_space("parameters", img).kind is Metric.INVERSE_VARIANCE
    assert metric_for_space("image", img).kind is Metric.CHI_SQUARED
    with pytest.raises(ParameterError):
        metric_for_space("wavelet", img)
