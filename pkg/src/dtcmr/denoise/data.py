"""Paired training data for tensor de-noising, subject splits and augmentation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from ..core import DwiStack, TensorField, in_plane_rotation, pack_tensor, unpack_tensor
from ..exceptions import ValidationError
from ..fitting import (BreathHoldBudget, SamplingScheme, average_repetitions, lls_fit,
                       select_repetitions)


@dataclass(frozen=True, eq=False)
class TensorPair:
    """One noisy input and its all-repetition reference.

    ``noisy`` holds 6 tensor channels (``kind="tensor"``) or repetition-averaged
    DWI channels (``kind="dwi"``); ``target`` always holds 6 tensor channels
    in mm^2/s.
    """

    subject: str
    budget: str
    scheme: str
    noisy: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    kind: str = "tensor"


@dataclass(eq=False)
class SubjectData:
    subject: str
    stack: DwiStack  # registered, all repetitions
    reference: TensorField
    lv_center: Optional[tuple] = None
    _cache: Dict[tuple, object] = field(default_factory=dict, repr=False)

    def reduced(self, budget: str, scheme: str, seed: int = 0):
        """``(tensor field, averaged DWI)`` for a breath-hold budget and scheme."""
        key = (budget, scheme, seed)
        if key not in self._cache:
            sub = select_repetitions(self.stack, SamplingScheme(scheme, seed=seed),
                                     BreathHoldBudget.named(budget))
            averaged = average_repetitions(sub)
            self._cache[key] = (lls_fit(averaged), averaged)
        return self._cache[key]


def split_subjects(subjects: Sequence[str], ratios=(0.8, 0.1, 0.1), seed=0):
    """Random subject-level split into train / val / test lists."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError("split ratios must be three non-negative numbers summing to 1")
    ids = sorted(subjects)
    order = np.random.default_rng(np.random.SeedSequence(int(seed))).permutation(len(ids))
    n_train = int(round(ratios[0] * len(ids)))
    n_val = int(round(ratios[1] * len(ids)))
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }


def make_pair(subject: SubjectData, budget: str, scheme: str, kind="tensor") -> TensorPair:
    fitted, averaged = subject.reduced(budget, scheme)
    mask = subject.reference.mask & fitted.mask
    if kind == "tensor":
        noisy = fitted.components
    elif kind == "dwi":
        noisy = averaged.images * subject.reference.mask
    else:
        raise ValidationError(f"unknown input kind {kind!r}")
    return TensorPair(subject.subject, budget, scheme, np.array(noisy) * mask,
                      np.array(subject.reference.components) * mask, mask, kind)


def assemble_t2t_dataset(subjects: Dict[str, SubjectData], budgets: Sequence[str],
                         schemes: Sequence[str], split: Dict[str, List[str]],
                         kind="tensor") -> Dict[str, List[TensorPair]]:
    """Noisy/reference pairs for every (subject, budget, scheme).

    Training subjects contribute one pair per scheme; validation and test
    subjects use the First scheme only.
    """
    for sid in sum(split.values(), []):
        if sid not in subjects:
            raise ValidationError(f"missing reference for subject {sid}")
    out = {}
    for part, ids in split.items():
        part_schemes = schemes if part == "train" else ["First"]
        out[part] = [make_pair(subjects[sid], b, s, kind)
                     for sid in ids for b in budgets for s in part_schemes]
    return out


# ---------------------------------------------------------------------------
# augmentation

def rotate_image(channels, angle_deg, order=1):
    """Rotate ``(C, H, W)`` images counter-clockwise about the image centre."""
    channels = np.asarray(channels, dtype=float)
    h, w = channels.shape[-2:]
    rot = in_plane_rotation(angle_deg)[:2, :2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.indices((h, w), dtype=float)
    x_out, y_out = cols - cx, cy - rows
    # inverse map: source = R^T p'
    x_src = rot[0, 0] * x_out + rot[1, 0] * y_out
    y_src = rot[0, 1] * x_out + rot[1, 1] * y_out
    coords = np.stack([cy - y_src, cx + x_src])
    return np.stack([map_coordinates(c, coords, order=order, mode="constant", cval=0.0)
                     for c in channels])


def rotate_tensor_components(components, angle_deg):
    """Apply ``R D R^T`` to every packed tensor of a ``(6, H, W)`` image."""
    rot = in_plane_rotation(angle_deg)
    full = unpack_tensor(np.moveaxis(components, 0, -1))
    rotated = np.einsum("ij,...jk,lk->...il", rot, full, rot)
    return np.moveaxis(pack_tensor(rotated), -1, 0)


def random_crop_origin(mask, crop, rng):
    h, w = mask.shape
    if crop > h or crop > w:
        raise ValidationError(f"crop {crop} exceeds image size {mask.shape}")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        lo, hi = (0, 0), (h - crop, w - crop)
    else:
        # keep the whole mask inside the crop when it fits
        lo = (max(0, rows.max() - crop + 1), max(0, cols.max() - crop + 1))
        hi = (min(rows.min(), h - crop), min(cols.min(), w - crop))
    origin = []
    for a, b, n in zip(lo, hi, (h, w)):
        if a > b:
            a = b = min(max((a + b) // 2, 0), n - crop)
        origin.append(int(rng.integers(a, b + 1)))
    return tuple(origin)


def augment(pair: TensorPair, seed, crop_size=None, max_rotation=180.0, rotate=True):
    """Random rotation and crop applied identically to input, target and mask.

    Tensor channels are spatially resampled (bilinear) and their components
    rotated with the image, so the fibre geometry relative to the LV is
    unchanged. DWI inputs are only cropped: rotating them would break the
    link with the fixed gradient directions.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed) if np.ndim(seed) == 0
                                else np.random.SeedSequence(list(seed)))
    angle = float(rng.uniform(-max_rotation, max_rotation)) if rotate and pair.kind == "tensor" else 0.0
    return transform_pair(pair, angle, crop_size, rng)


def transform_pair(pair: TensorPair, angle, crop_size=None, rng=None, origin=None):
    noisy, target, mask = pair.noisy, pair.target, pair.mask
    if angle % 360.0 != 0.0:
        mask = rotate_image(mask[None].astype(float), angle, order=0)[0] > 0.5
        noisy = rotate_tensor_components(rotate_image(noisy, angle), angle) if pair.kind == "tensor" \
            else rotate_image(noisy, angle)
        target = rotate_tensor_components(rotate_image(target, angle), angle)
        noisy = noisy * mask
        target = target * mask
    if crop_size is not None:
        if origin is None:
            origin = random_crop_origin(mask, crop_size, rng or np.random.default_rng(0))
        r0, c0 = origin
        if r0 < 0 or c0 < 0 or r0 + crop_size > mask.shape[0] or c0 + crop_size > mask.shape[1]:
            raise ValidationError("crop exceeds image bounds")
        sl = (slice(r0, r0 + crop_size), slice(c0, c0 + crop_size))
        noisy, target, mask = noisy[(slice(None),) + sl], target[(slice(None),) + sl], mask[sl]
    return TensorPair(pair.subject, pair.budget, pair.scheme, noisy, target, mask, pair.kind)
