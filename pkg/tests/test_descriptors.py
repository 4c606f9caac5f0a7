import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import trapezoid
from scipy.stats import norm

from ndphylo.descriptors import (DENSITY_FLOOR, DESCRIPTOR_LENGTH, cosine_distance,
                                 cosine_distance_matrix, feature_bundle, image_descriptor,
                                 kde_density, kde_local_bandwidths, pixel_vector)
from ndphylo.transforms import TransformSpec, apply_transform, procedural_source


def test_pixel_vector():
    assert pixel_vector(np.array([[1, 2], [3, 4]])).tolist() == [1, 2, 3, 4]
    assert np.all(pixel_vector(np.full((4, 4), 7.0)) == 7.0)
    assert len(pixel_vector(np.zeros((40, 40)))) == 1600


def test_descriptor_shape_and_determinism(source):
    d = image_descriptor(source)
    assert d.shape == (DESCRIPTOR_LENGTH,)
    assert np.array_equal(d, image_descriptor(source.copy()))


def test_descriptor_constant_image():
    d = image_descriptor(np.full((64, 64), 100.0))
    hist, hog = d[64:128], d[128:]
    assert np.count_nonzero(hist) == 1
    assert not hog.any()


def test_descriptor_brightness_closer_than_other_source():
    rng = np.random.default_rng(77)
    wins = 0
    for _ in range(100):
        a, b = procedural_source(rng, 64), procedural_source(rng, 64)
        shifted = apply_transform(a, TransformSpec("Brightness", {"a": 1.0, "b": rng.uniform(-30, 30)}))
        wins += cosine_distance(image_descriptor(a), image_descriptor(shifted)) < \
            cosine_distance(image_descriptor(a), image_descriptor(b))
    assert wins >= 90


def test_cosine_examples():
    u = np.array([1.0, 2.0, 3.0])
    assert cosine_distance(u, u) == pytest.approx(0.0, abs=1e-15)
    assert cosine_distance(u, -u) == pytest.approx(1.0)
    assert cosine_distance([1, 0], [0, 1]) == pytest.approx(0.5)
    assert cosine_distance([1, 0], [0, 1], normalized=False) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_distance([0, 0], [1, 0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-1e3, 1e3)).filter(
    lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)))
def test_cosine_properties(pair):
    u, v = pair
    d = cosine_distance(u, v)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(cosine_distance(v, u))
    m = cosine_distance_matrix(pair)
    assert m[0, 1] == pytest.approx(d, abs=1e-12) and m[0, 0] == 0


def test_kde_two_points_hand_value():
    p = kde_local_bandwidths(np.array([0.0, 1.0]))
    expected = (norm.pdf(0) + norm.pdf(1)) / 2
    assert p == pytest.approx([expected, expected])
    assert expected == pytest.approx(0.3205, abs=1e-4)


def test_kde_positive_and_symmetric(rng):
    x = rng.normal(size=(10, 3))
    p = kde_local_bandwidths(x)
    assert np.all(p > 0)
    x[1] = x[0]
    p = kde_local_bandwidths(x)
    assert p[0] == pytest.approx(p[1])


def test_kde_degenerate_cases():
    p = kde_local_bandwidths(np.ones((3, 2)))
    assert np.all(np.isfinite(p)) and np.all(p > 0) and p[0] == p[1] == p[2]
    with pytest.raises(ValueError):
        kde_local_bandwidths(np.ones((1, 2)))
    far = kde_local_bandwidths(np.array([0.0, 1.0, 1e9]))
    assert np.all(far >= DENSITY_FLOOR)


def test_kde_integrates_to_one(rng):
    pts = rng.normal(size=12)
    b = np.mean([abs(a - c) for i, a in enumerate(pts) for c in pts[i + 1:]])
    grid = np.linspace(pts.min() - 12 * b, pts.max() + 12 * b, 20001)
    assert trapezoid(kde_density(pts, grid, b), grid) == pytest.approx(1.0, abs=1e-3)


def test_feature_bundle(source):
    fb = feature_bundle(source)
    assert fb.P.shape == fb.N.shape == (source.size,)
    assert np.linalg.norm(fb.F) > 0 and np.linalg.norm(fb.P) > 0
    assert not np.isnan(fb.N).any()
