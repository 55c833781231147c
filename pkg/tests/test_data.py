import numpy as np
import pytest

from dtcmr.core import TensorField
from dtcmr.denoise.data import (TensorPair, assemble_t2t_dataset, augment, make_pair,
                                random_crop_origin, rotate_image, rotate_tensor_components,
                                split_subjects, transform_pair)
from dtcmr.exceptions import ValidationError
from dtcmr.maps import compute_maps
from dtcmr.phantom import PhantomConfig, generate_phantom


def test_split_80_10_10():
    ids = [f"s{i:03d}" for i in range(100)]
    split = split_subjects(ids, seed=4)
    assert [len(split[k]) for k in ("train", "val", "test")] == [80, 10, 10]
    assert set(split["train"]) | set(split["val"]) | set(split["test"]) == set(ids)
    assert not set(split["train"]) & set(split["test"])
    assert not set(split["val"]) & set(split["test"])
    assert split == split_subjects(ids, seed=4)


def test_split_ratio_validation():
    with pytest.raises(ValidationError):
        split_subjects(["a"], (0.5, 0.5, 0.5))


def test_pair_counts_multi_scheme(small_cohort):
    _, subjects = small_cohort
    split = {"train": sorted(subjects), "val": [], "test": []}
    multi = assemble_t2t_dataset(subjects, ["1BH"], ["First", "Centre", "Last"], split)
    single = assemble_t2t_dataset(subjects, ["1BH"], ["First"], split)
    assert len(multi["train"]) == 30
    assert len(single["train"]) == 10


def test_validation_uses_first_only(small_cohort):
    _, subjects = small_cohort
    ids = sorted(subjects)
    split = {"train": ids[:8], "val": ids[8:9], "test": ids[9:]}
    ds = assemble_t2t_dataset(subjects, ["1BH"], ["First", "Centre", "Last"], split)
    assert {p.scheme for p in ds["val"] + ds["test"]} == {"First"}
    assert len(ds["train"]) == 24


def test_missing_reference(small_cohort):
    _, subjects = small_cohort
    with pytest.raises(ValidationError, match="missing reference"):
        assemble_t2t_dataset(subjects, ["1BH"], ["First"], {"train": ["nobody"]})


def test_dwi_pairs(small_cohort):
    _, subjects = small_cohort
    p = make_pair(subjects[sorted(subjects)[0]], "1BH", "First", kind="dwi")
    assert p.noisy.shape == (7, 64, 64)  # one b0 and six b600 images
    assert p.target.shape == (6, 64, 64)
    assert np.all(p.noisy[:, ~p.mask] == 0)


def _pair(seed=0, shape=(32, 32)):
    rng = np.random.default_rng(seed)
    mask = np.zeros(shape, bool)
    mask[8:20, 10:24] = True
    noisy = rng.normal(size=(6,) + shape) * mask
    target = rng.normal(size=(6,) + shape) * mask
    return TensorPair("s", "1BH", "First", noisy, target, mask)


def test_zero_rotation_centered_crop_identity():
    p = _pair()
    out = transform_pair(p, 0.0, crop_size=32, origin=(0, 0))
    assert np.array_equal(out.noisy, p.noisy) and np.array_equal(out.mask, p.mask)


def test_full_turn_identity():
    p = _pair()
    out = transform_pair(p, 360.0)
    assert np.max(np.abs(out.noisy - p.noisy)) < 1e-6


def test_quarter_turn_matches_rot90():
    img = np.random.default_rng(0).normal(size=(2, 16, 16))
    assert np.allclose(rotate_image(img, 90.0), np.rot90(img, 1, axes=(1, 2)), atol=1e-12)
    p = _pair()
    out = transform_pair(p, 90.0)
    assert out.mask.sum() == p.mask.sum()
    assert np.array_equal(out.mask, np.rot90(p.mask))


def test_tensor_rotation_preserves_cardiac_angles():
    cfg = PhantomConfig(image_size=(48, 48), lv_center=(23.5, 23.5), endo_radius=8,
                        epi_radius=14)
    truth, mask, geo = generate_phantom(cfg)
    comp = rotate_tensor_components(rotate_image(truth.components, 90.0), 90.0)
    rmask = np.rot90(mask)
    rotated = compute_maps(TensorField(comp, rmask), lv_center=geo.center)
    assert np.max(np.abs(rotated.ha - np.rot90(geo.ha))[rmask]) < 1e-9
    assert np.max(np.abs(rotated.e2a - np.rot90(geo.e2a))[rmask]) < 1e-9


def test_tensor_rotation_preserves_eigenvalues():
    rng = np.random.default_rng(1)
    comp = rng.normal(size=(6, 3, 3))
    out = rotate_tensor_components(comp, 37.0)
    from dtcmr.core import unpack_tensor

    a = np.linalg.eigvalsh(unpack_tensor(np.moveaxis(comp, 0, -1)))
    b = np.linalg.eigvalsh(unpack_tensor(np.moveaxis(out, 0, -1)))
    assert np.allclose(a, b, atol=1e-12)


def test_augment_is_seeded_and_keeps_mask_inside():
    p = _pair()
    a = augment(p, (1, 2, 3), crop_size=24)
    b = augment(p, (1, 2, 3), crop_size=24)
    assert np.array_equal(a.noisy, b.noisy)
    assert a.noisy.shape == (6, 24, 24)
    assert np.all(a.noisy[:, ~a.mask] == 0)


def test_crop_bounds():
    p = _pair()
    with pytest.raises(ValidationError):
        transform_pair(p, 0.0, crop_size=40)
    with pytest.raises(ValidationError):
        transform_pair(p, 0.0, crop_size=16, origin=(20, 20))
    origin = random_crop_origin(p.mask, 16, np.random.default_rng(0))
    r0, c0 = origin
    assert p.mask[r0:r0 + 16, c0:c0 + 16].sum() == p.mask.sum()
