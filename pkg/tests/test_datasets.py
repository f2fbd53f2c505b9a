import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linpath import datasets
from linpath.datasets import AugmentSpec


def test_spiral_zero_noise_points():
    pts = datasets.spiral_points(np.array([0.25, 0.25]), np.array([0, 1]))
    np.testing.assert_allclose(pts, [[1.0, 0.0], [-1.0, 0.0]], atol=1e-14)


def test_spiral_default_sizes_and_balance():
    d = datasets.spiral()
    assert d.n_train == 10000 and d.n_test == 5000
    assert d.class_counts("train") == [5000, 5000]
    assert d.class_counts("test") == [2500, 2500]
    assert d.dim == 2


def test_spiral_odd_count_remainder_to_class_zero():
    d = datasets.spiral(11, 5, seed=1)
    assert d.class_counts("train") == [6, 5]
    assert d.class_counts("test") == [3, 2]


def test_spiral_points_lie_on_curve():
    d = datasets.spiral(400, 100, noise=0.0, seed=2)
    x, y = d.features[:, 0], d.features[:, 1]
    r = np.hypot(x, y)
    t = (r / 2.0) ** 2  # invert the radius
    angle = 8.0 * np.sqrt(t) * np.pi + np.pi * d.labels
    np.testing.assert_allclose(x, r * np.cos(angle), atol=1e-12)
    np.testing.assert_allclose(y, r * np.sin(angle), atol=1e-12)
    assert np.all((t >= 0) & (t <= 1 + 1e-12))


def test_generators_deterministic():
    assert np.array_equal(datasets.spiral(seed=3).features, datasets.spiral(seed=3).features)
    assert not np.array_equal(datasets.spiral(seed=3).features, datasets.spiral(seed=4).features)
    a, b = datasets.blobs(100, 50, seed=5), datasets.blobs(100, 50, seed=5)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert np.all(np.isfinite(a.features))


def test_blobs_linear_oracle():
    d = datasets.blobs(separation=8.0, sigma=1.0, seed=0)
    # Bayes rule for equal isotropic Gaussians is the mid-plane x0 = 0
    pred = (d.x_test[:, 0] > 0).astype(int)
    acc = float(np.mean(pred == d.y_test))
    bayes_err = 0.5 * math.erfc(4.0 / math.sqrt(2.0))  # P(N(0,1) > sep / (2 sigma))
    assert bayes_err < 1e-4
    assert acc >= 0.999


def test_blobs_zero_sigma_identical_points():
    d = datasets.blobs(20, 10, sigma=0.0)
    cls0 = d.features[d.labels == 0]
    assert np.all(cls0 == cls0[0])
    means = [d.features[d.labels == c].mean(axis=0) for c in (0, 1)]
    assert np.linalg.norm(means[1] - means[0]) == pytest.approx(8.0)


def test_dataset_split_validation():
    f = np.zeros((4, 2))
    with pytest.raises(ValueError):
        datasets.Dataset(f, np.zeros(4, dtype=int), np.array([0, 1]), np.array([1, 2, 3]))
    with pytest.raises(ValueError):
        datasets.Dataset(f, np.zeros(3, dtype=int), np.array([0]), np.array([1, 2]))


def test_corrupt_zero_is_identity():
    d = datasets.spiral(100, 20)
    assert datasets.corrupt_labels(d, 0.0, 1) is d


def test_corrupt_half_counts():
    d = datasets.spiral(100, 20)
    c = datasets.corrupt_labels(d, 0.5, 1)
    assert np.array_equal(c.features, d.features)
    assert np.array_equal(c.y_test, d.y_test)
    assert int(np.sum(c.y_train != d.y_train)) <= 50
    assert c.provenance["corrupt_fraction"] == 0.5


def test_corrupt_full_agrees_about_half():
    d = datasets.spiral(10000, 20)
    c = datasets.corrupt_labels(d, 1.0, 2)
    agree = float(np.mean(c.y_train == d.y_train))
    assert abs(agree - 0.5) < 0.03


@settings(max_examples=30, deadline=None)
@given(p=st.floats(0, 1), n=st.integers(2, 200), seed=st.integers(0, 1000))
def test_corrupt_changes_at_most_ceil(p, n, seed):
    d = datasets.spiral(n, 4, seed=seed)
    c = datasets.corrupt_labels(d, p, seed)
    assert int(np.sum(c.y_train != d.y_train)) <= math.ceil(round(p * n, 9))
    assert np.array_equal(c.features, d.features)


def test_subset_fraction_one_identity_and_tenth():
    d = datasets.spiral()
    assert datasets.subset(d, 1.0, 0) is d
    s = datasets.subset(d, 0.1, 0)
    assert s.class_counts("train") == [500, 500]
    assert s.n_test == d.n_test
    np.testing.assert_array_equal(s.x_test, d.x_test)


@settings(max_examples=30, deadline=None)
@given(frac=st.floats(0.01, 1.0), n=st.integers(10, 300), seed=st.integers(0, 100))
def test_subset_stratified_within_one(frac, n, seed):
    d = datasets.spiral(n, 4, seed=seed)
    s = datasets.subset(d, frac, seed)
    target = math.ceil(round(frac * n, 9))
    assert s.n_train == target
    for c, count in enumerate(d.class_counts()):
        assert abs(s.class_counts()[c] - count * target / n) <= 1


def test_augment():
    batch = np.ones((5, 2))
    rng = np.random.default_rng(0)
    assert datasets.augment(batch, AugmentSpec(0.0), rng) is batch
    out = datasets.augment(batch, AugmentSpec(0.1), rng)
    assert out.shape == batch.shape and not np.array_equal(out, batch)
    again = datasets.augment(batch, AugmentSpec(0.1), rng)
    assert not np.array_equal(out, again)  # fresh noise each presentation
    with pytest.raises(ValueError):
        AugmentSpec(float("inf"))


def test_csv_roundtrip(tmp_path):
    d = datasets.spiral(30, 10, seed=9)
    f = tmp_path / "d.csv"
    datasets.to_csv(d, f)
    assert f.read_text().splitlines()[0] == "x0,x1,label,split"
    back = datasets.from_csv(f)
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.labels, d.labels)
    np.testing.assert_array_equal(back.train_idx, d.train_idx)
    assert back.n_classes == 2
