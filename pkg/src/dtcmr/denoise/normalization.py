"""Per-channel normalisation of tensor and DWI images.

Background voxels are held at zero in both directions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import NumericalError, ValidationError

FIXED_SCALE = 500.0
# tensors are divided by the fixed scale after conversion to 1e-6 mm^2/s
FIXED_UNIT = 1e-6


@dataclass(frozen=True, eq=False)
class NormStats:
    mode: str
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        std = np.asarray(self.std, dtype=float).reshape(-1)
        if mean.shape != std.shape:
            raise ValidationError("mean and std differ in length")
        if np.any(~(std > 0)):
            raise NumericalError("zero-variance channel in normalisation statistics")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def n_channels(self):
        return len(self.mean)

    def normalize(self, x, mask):
        """``x``: ``(C, H, W)`` or ``(N, C, H, W)``; ``mask`` broadcastable ``(.., H, W)``."""
        x = np.asarray(x, dtype=float)
        mean, std = self._broadcast(x)
        m = self._mask(x, mask)
        if self.mode == "fixed":
            return x / FIXED_UNIT / FIXED_SCALE * m
        return (x - mean) / std * m

    def denormalize(self, z, mask):
        z = np.asarray(z, dtype=float)
        mean, std = self._broadcast(z)
        m = self._mask(z, mask)
        if self.mode == "fixed":
            return z * FIXED_SCALE * FIXED_UNIT * m
        return (z * std + mean) * m

    def _broadcast(self, x):
        if x.shape[-3] != self.n_channels:
            raise ValidationError(
                f"expected {self.n_channels} channels, got {x.shape[-3]}")
        return self.mean[:, None, None], self.std[:, None, None]

    @staticmethod
    def _mask(x, mask):
        m = np.asarray(mask, dtype=float)
        return m[..., None, :, :] if m.ndim == x.ndim - 1 else m

    def same_as(self, other: "NormStats") -> bool:
        return (self.mode == other.mode and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std))

    def to_dict(self):
        return {"mode": self.mode, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], np.asarray(d["mean"]), np.asarray(d["std"]))


def compute_norm_stats(images, masks, mode="zscore", n_channels=None) -> NormStats:
    """Normalisation statistics over the masked voxels of a dataset.

    Parameters
    ----------
    images : sequence of ``(C, H, W)`` arrays
    masks : sequence of ``(H, W)`` boolean arrays
    mode : {"zscore", "fixed", "max"}
        ``zscore``: channel-wise mean and standard deviation. ``fixed``: the
        constant scale of 500 (in 1e-6 mm^2/s). ``max``: every channel divided
        by the dataset maximum, as used for DWI inputs.
    """
    images = [np.asarray(im, dtype=float) for im in images]
    if not images:
        raise ValidationError("empty dataset")
    c = images[0].shape[0] if n_channels is None else n_channels
    if mode == "fixed":
        return NormStats("fixed", np.zeros(c), np.full(c, FIXED_SCALE * FIXED_UNIT))
    values = np.concatenate(
        [im[:, np.asarray(m, dtype=bool)] for im, m in zip(images, masks)], axis=1)
    if values.shape[1] == 0:
        raise ValidationError("no masked voxels in dataset")
    if mode == "zscore":
        return NormStats("zscore", values.mean(axis=1), values.std(axis=1))
    if mode == "max":
        peak = float(values.max())
        return NormStats("max", np.zeros(c), np.full(c, peak))
    raise ValidationError(f"unknown normalisation mode {mode!r}")
