import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtcmr.denoise.normalization import FIXED_SCALE, NormStats, compute_norm_stats
from dtcmr.exceptions import NumericalError, ValidationError


def dataset(seed=0, n=3):
    rng = np.random.default_rng(seed)
    images = [rng.normal(1e-3, 5e-4, size=(6, 8, 8)) for _ in range(n)]
    masks = [rng.random((8, 8)) > 0.4 for _ in range(n)]
    return images, masks


def test_zscore_two_pass_loop_oracle():
    images, masks = dataset()
    stats = compute_norm_stats(images, masks)
    for c in range(6):
        vals = [im[c, r, k] for im, m in zip(images, masks) for r in range(8) for k in range(8)
                if m[r, k]]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert stats.mean[c] == pytest.approx(mean, rel=1e-12)
        assert stats.std[c] == pytest.approx(var ** 0.5, rel=1e-12)


def test_standardized_data_gives_identity_stats():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 10, 10))
    x = (x - x.mean(axis=(1, 2), keepdims=True)) / x.std(axis=(1, 2), keepdims=True)
    stats = compute_norm_stats([x], [np.ones((10, 10), bool)])
    assert np.allclose(stats.mean, 0, atol=1e-15) and np.allclose(stats.std, 1, rtol=1e-14)


@given(st.integers(0, 10_000), st.sampled_from(["zscore", "fixed", "max"]))
def test_round_trip(seed, mode):
    images, masks = dataset(seed)
    stats = compute_norm_stats(images, masks, mode, n_channels=6)
    x, m = images[0], masks[0]
    back = stats.denormalize(stats.normalize(x, m), m)
    assert np.max(np.abs(back - x * m)) <= 1e-10 * np.abs(x).max()


def test_fixed_scale():
    stats = compute_norm_stats(*dataset(), mode="fixed")
    x = np.full((6, 2, 2), 500e-6)
    assert np.allclose(stats.normalize(x, np.ones((2, 2))), 1.0, rtol=1e-15)
    assert FIXED_SCALE == 500.0


def test_background_stays_zero():
    images, masks = dataset()
    stats = compute_norm_stats(images, masks)
    z = stats.normalize(images[0], masks[0])
    assert np.all(z[:, ~masks[0]] == 0)


def test_batched_masks():
    images, masks = dataset()
    stats = compute_norm_stats(images, masks)
    batch = stats.normalize(np.stack(images), np.stack(masks))
    assert np.array_equal(batch[1], stats.normalize(images[1], masks[1]))


def test_errors():
    x = np.ones((6, 4, 4))
    with pytest.raises(NumericalError, match="zero-variance"):
        compute_norm_stats([x], [np.ones((4, 4), bool)])
    with pytest.raises(ValidationError):
        compute_norm_stats([], [])
    with pytest.raises(ValidationError):
        compute_norm_stats([x], [np.zeros((4, 4), bool)])
    stats = NormStats("zscore", np.zeros(6), np.ones(6))
    with pytest.raises(ValidationError, match="channels"):
        stats.normalize(np.ones((5, 4, 4)), np.ones((4, 4)))


def test_dict_round_trip():
    stats = compute_norm_stats(*dataset())
    assert NormStats.from_dict(stats.to_dict()).same_as(stats)
