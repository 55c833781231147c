"""DT-CMR maps (MD, FA, HA, E2A) in a per-voxel cardiac coordinate system."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import MapSet, TensorField, eig_sym3_batch, lv_centroid
from .exceptions import ValidationError

NEAR_DEGENERATE = 1e-9


@dataclass(frozen=True, eq=False)
class LocalBasis:
    """Per-voxel radial / circumferential / longitudinal unit vectors.

    Each vector field has shape ``(rows, cols, 3)``; ``valid`` marks voxels
    where the basis is defined (inside the mask and away from the centre).
    """

    radial: np.ndarray
    circumferential: np.ndarray
    longitudinal: np.ndarray
    valid: np.ndarray
    center: Tuple[float, float]


def local_basis(mask, lv_center: Optional[Tuple[float, float]] = None) -> LocalBasis:
    mask = np.asarray(mask, dtype=bool)
    if lv_center is None:
        lv_center = lv_centroid(mask)
    cy, cx = float(lv_center[0]), float(lv_center[1])
    rows, cols = np.indices(mask.shape, dtype=float)
    x, y = cols - cx, cy - rows
    r = np.hypot(x, y)
    valid = mask & (r > 0)
    safe = np.where(r > 0, r, 1.0)
    radial = np.stack([x / safe, y / safe, np.zeros(mask.shape)], axis=-1)
    radial[~valid] = 0.0
    longitudinal = np.zeros(mask.shape + (3,))
    longitudinal[valid, 2] = 1.0
    circumferential = np.cross(longitudinal, radial)
    return LocalBasis(radial, circumferential, longitudinal, valid, (cy, cx))


def _fold_angle(along, across):
    """Angle of ``(along, across)`` in degrees, folded into [-90, 90]."""
    sign = np.where(along < 0, -1.0, 1.0)
    return np.degrees(np.arctan2(sign * across, sign * along))


def fractional_anisotropy(evals):
    evals = np.asarray(evals, dtype=float)
    mean = evals.mean(axis=-1, keepdims=True)
    num = np.sqrt(np.sum((evals - mean) ** 2, axis=-1))
    den = np.sqrt(np.sum(evals ** 2, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.sqrt(1.5) * num / den
    return np.where(den > 0, fa, 0.0)


def angles_from_vectors(e1, e2, radial, circumferential, longitudinal):
    """Helix angle and E2 angle (degrees) for row-stacked vectors.

    HA is the angle of E1, projected onto the wall tangent plane, from the
    circumferential direction, positive toward longitudinal. E2A is the angle
    of E2, projected onto the plane spanned by radial and the in-wall
    cross-fibre direction ``radial x E1_proj``, from that cross-fibre
    direction, positive toward radial. E1_proj is oriented to have a
    non-negative circumferential component, so both angles are invariant to
    eigenvector sign.
    """
    along = np.einsum("ni,ni->n", e1, circumferential)
    across = np.einsum("ni,ni->n", e1, longitudinal)
    ha = _fold_angle(along, across)

    proj = along[:, None] * circumferential + across[:, None] * longitudinal
    flip = np.where((along < 0) | ((along == 0) & (across < 0)), -1.0, 1.0)
    proj = proj * flip[:, None]
    norm = np.linalg.norm(proj, axis=1, keepdims=True)
    proj = np.divide(proj, norm, out=np.zeros_like(proj), where=norm > 0)
    cross = np.cross(radial, proj)
    e2a = _fold_angle(np.einsum("ni,ni->n", e2, cross), np.einsum("ni,ni->n", e2, radial))
    return ha, e2a


def compute_maps(tensors: TensorField, basis: Optional[LocalBasis] = None, mask=None,
                 lv_center=None) -> MapSet:
    """MD, FA, HA and E2A for every masked voxel of ``tensors``.

    Zero tensors and voxels without a defined basis are dropped from the
    output mask. ``flags`` records voxels with repeated leading eigenvalues
    (``near_degenerate``), isotropic tensors (``undefined_angles``) and
    negative smallest eigenvalue (``negative_eigenvalue``).
    """
    mask = tensors.mask if mask is None else np.asarray(mask, dtype=bool) & tensors.mask
    if basis is None:
        basis = local_basis(mask, lv_center)
    elif basis.valid.shape != mask.shape:
        raise ValidationError("basis shape differs from tensor field")

    comp = tensors.components
    nonzero = np.any(comp != 0, axis=0)
    out_mask = mask & basis.valid & nonzero
    shape = mask.shape
    md, fa, ha, e2a = (np.zeros(shape) for _ in range(4))
    flags = {k: np.zeros(shape, dtype=bool)
             for k in ("near_degenerate", "undefined_angles", "negative_eigenvalue", "zero_tensor")}
    flags["zero_tensor"] = mask & ~nonzero

    if out_mask.any():
        evals, evecs = eig_sym3_batch(comp[:, out_mask].T)
        scale = np.maximum(np.abs(evals).max(axis=1), np.finfo(float).tiny)
        md[out_mask] = evals.mean(axis=1)
        # negative eigenvalues can push the formula past 1; flagged below
        fa[out_mask] = np.minimum(fractional_anisotropy(evals), 1.0)
        h, e = angles_from_vectors(
            evecs[:, :, 0], evecs[:, :, 1], basis.radial[out_mask],
            basis.circumferential[out_mask], basis.longitudinal[out_mask])
        ha[out_mask] = h
        e2a[out_mask] = e
        flags["near_degenerate"][out_mask] = (evals[:, 0] - evals[:, 1]) <= NEAR_DEGENERATE * scale
        flags["undefined_angles"][out_mask] = (evals[:, 0] - evals[:, 2]) <= NEAR_DEGENERATE * scale
        flags["negative_eigenvalue"][out_mask] = evals[:, 2] < 0

    return MapSet(md=md, fa=fa, ha=ha, e2a=e2a, mask=out_mask, flags=flags)
