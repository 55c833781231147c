"""Synthetic left-ventricle tensor phantoms and noisy DWI simulation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from .core import AcquisitionProtocol, DwiStack, TensorField, tensor_from_eigen
from .exceptions import ValidationError
from .registration import apply_shift


@dataclass(frozen=True)
class PhantomConfig:
    image_size: Tuple[int, int] = (128, 128)
    lv_center: Optional[Tuple[float, float]] = None  # (row, col); image centre if None
    endo_radius: float = 10.0
    epi_radius: float = 18.0
    ha_endo: float = 60.0
    ha_epi: float = -60.0
    e2a_mean: float = 30.0
    e2a_transmural: float = 0.0  # epi minus endo, degrees
    eigenvalue_profile: Tuple[float, float, float] = (1.6e-3, 1.0e-3, 0.6e-3)
    s0_level: float = 100.0

    def __post_init__(self):
        if not 0 < self.endo_radius < self.epi_radius:
            raise ValidationError("need 0 < endo_radius < epi_radius")
        lam = self.eigenvalue_profile
        if len(lam) != 3 or min(lam) <= 0 or not (lam[0] >= lam[1] >= lam[2]):
            raise ValidationError("eigenvalue_profile must be positive and descending")
        if self.s0_level <= 0:
            raise ValidationError("s0_level must be positive")
        rows, cols = self.image_size
        cy, cx = self.center
        if (cy - self.epi_radius < 0 or cx - self.epi_radius < 0
                or cy + self.epi_radius > rows - 1 or cx + self.epi_radius > cols - 1):
            raise ValidationError("epicardial radius exceeds the image bounds")

    @property
    def center(self) -> Tuple[float, float]:
        if self.lv_center is None:
            return self.image_size[0] / 2.0, self.image_size[1] / 2.0
        return float(self.lv_center[0]), float(self.lv_center[1])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        kw = dict(data)
        for key in ("image_size", "lv_center", "eigenvalue_profile"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class NoiseProfile:
    snr: float = 20.0  # S0 / sigma; math.inf disables noise
    first_rep_degradation: float = 1.0
    motion_shift_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValidationError("snr must be positive")
        if self.first_rep_degradation < 1:
            raise ValidationError("first_rep_degradation must be >= 1")
        if self.motion_shift_sigma < 0:
            raise ValidationError("motion_shift_sigma must be non-negative")

    def to_dict(self):
        d = asdict(self)
        if math.isinf(self.snr):
            d["snr"] = "inf"
        return d

    @classmethod
    def from_dict(cls, data):
        kw = dict(data)
        kw["snr"] = float(kw.get("snr", 20.0))
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class PhantomGeometry:
    """Per-voxel ground truth geometry; vectors are ``(rows, cols, 3)``."""

    center: Tuple[float, float]
    radial: np.ndarray
    circumferential: np.ndarray
    longitudinal: np.ndarray
    depth: np.ndarray  # 0 at endocardium, 1 at epicardium, nan outside
    ha: np.ndarray
    e2a: np.ndarray


def lab_offsets(shape, center):
    """In-plane lab coordinates ``(x, y)`` of every pixel relative to ``center``."""
    rows, cols = np.indices(shape, dtype=float)
    return cols - center[1], center[0] - rows


def generate_phantom(config: PhantomConfig = PhantomConfig()):
    """Annular LV phantom with a transmural helix-angle ramp.

    Returns ``(truth, mask, geometry)``. The primary eigenvector of every
    voxel lies in the wall tangent plane at helix angle
    ``ha_endo + depth * (ha_epi - ha_endo)``; the second eigenvector lies in
    the cross-fibre plane at angle ``e2a`` from the in-wall cross-fibre
    direction, tilted toward radial.
    """
    shape = tuple(config.image_size)
    x, y = lab_offsets(shape, config.center)
    r = np.hypot(x, y)
    mask = (r >= config.endo_radius) & (r <= config.epi_radius)

    depth = np.full(shape, np.nan)
    depth[mask] = (r[mask] - config.endo_radius) / (config.epi_radius - config.endo_radius)
    ha = np.full(shape, np.nan)
    ha[mask] = config.ha_endo + depth[mask] * (config.ha_epi - config.ha_endo)
    e2a = np.full(shape, np.nan)
    e2a[mask] = config.e2a_mean + (depth[mask] - 0.5) * config.e2a_transmural

    safe_r = np.where(r > 0, r, 1.0)
    radial = np.stack([x / safe_r, y / safe_r, np.zeros(shape)], axis=-1)
    longitudinal = np.broadcast_to(np.array([0.0, 0.0, 1.0]), shape + (3,)).copy()
    circumferential = np.cross(longitudinal, radial)

    h = np.deg2rad(ha[mask])[:, None]
    t = np.deg2rad(e2a[mask])[:, None]
    rad, circ, lon = radial[mask], circumferential[mask], longitudinal[mask]
    e1 = np.cos(h) * circ + np.sin(h) * lon
    cross = np.cross(rad, e1)
    e2 = np.cos(t) * cross + np.sin(t) * rad
    e3 = np.cross(e1, e2)
    vecs = np.stack([e1, e2, e3], axis=2)
    packed = tensor_from_eigen(np.asarray(config.eigenvalue_profile), vecs)

    components = np.zeros((6,) + shape)
    components[:, mask] = packed.T
    truth = TensorField(components, mask, {"source": "phantom", "config": config.to_dict()})
    geometry = PhantomGeometry(config.center, radial, circumferential, longitudinal,
                               depth, ha, e2a)
    return truth, mask, geometry


def _frame_rng(seed, stream, index):
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, int(index)))
    return np.random.Generator(np.random.Philox(ss))


_NOISE_STREAM, _MOTION_STREAM = 1, 2


def simulate_dwi(truth: TensorField, protocol: AcquisitionProtocol = AcquisitionProtocol(),
                 noise: NoiseProfile = NoiseProfile(), s0_level=None) -> DwiStack:
    """Simulate magnitude DWI frames ``S0 exp(-b g^T D g)`` with Rician noise.

    Repetition 0 is the positional reference and is never moved; every other
    repetition is translated by a per-repetition rigid shift drawn from
    ``N(0, motion_shift_sigma^2)``. Noise scale is ``S0 / snr``, multiplied
    by ``first_rep_degradation`` for repetition 0. Each frame draws from its
    own counter-based stream keyed by ``(seed, frame index)``.
    """
    if truth.shape != tuple(protocol.image_size):
        raise ValidationError("phantom size differs from protocol image_size")
    if not truth.mask.any():
        raise ValidationError("truth mask is empty")
    if s0_level is None:
        s0_level = truth.meta.get("config", {}).get("s0_level", 100.0)
    s0 = float(s0_level)
    mask = truth.mask
    d = truth.components[:, mask]  # (6, n_vox)
    sigma = 0.0 if math.isinf(noise.snr) else s0 / noise.snr

    n_reps = max(protocol.reps_per_weighting.values(), default=0)
    shifts = np.zeros((n_reps, 2))
    if noise.motion_shift_sigma > 0:
        for rep in range(1, n_reps):
            shifts[rep] = _frame_rng(noise.seed, _MOTION_STREAM, rep).normal(
                0.0, noise.motion_shift_sigma, 2)

    keys = list(protocol.frame_keys())
    frames = np.zeros((len(keys),) + truth.shape)
    for i, (b, di, rep) in enumerate(keys):
        g = protocol.gradient(b, di)
        gx, gy, gz = g
        adc = (gx * gx * d[0] + gy * gy * d[1] + gz * gz * d[2]
               + 2 * gx * gy * d[3] + 2 * gx * gz * d[4] + 2 * gy * gz * d[5])
        img = np.zeros(truth.shape)
        img[mask] = s0 * np.exp(-b * adc)
        if np.any(shifts[rep]):
            img = apply_shift(img, shifts[rep])
        if sigma > 0:
            scale = sigma * (noise.first_rep_degradation if rep == 0 else 1.0)
            rng = _frame_rng(noise.seed, _NOISE_STREAM, i)
            re = img + rng.normal(0.0, scale, img.shape)
            im = rng.normal(0.0, scale, img.shape)
            img = np.hypot(re, im)
        else:
            np.maximum(img, 0.0, out=img)
        frames[i] = img

    keys = np.array(keys, dtype=float).reshape(-1, 3)
    return DwiStack(frames, keys[:, 0], keys[:, 1].astype(int), keys[:, 2].astype(int),
                    mask, protocol,
                    {"s0_level": s0, "sigma": sigma, "noise": noise.to_dict(),
                     "motion_shifts": shifts.tolist()})
