"""Domain types shared by every stage and the 3x3 symmetric eigensolver.

Lab frame convention used throughout the package: ``x`` points along
increasing image columns, ``y`` points up (decreasing rows) and ``z`` is the
slice normal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from .exceptions import NumericalError, ValidationError

COMPONENTS = ("Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz")

# (row, col) of each packed component in the full symmetric matrix
_PACK_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))

_DEFAULT_DIRECTIONS = np.array(
    [
        [1.0, 0.0, 1.0],
        [-1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, -1.0],
        [1.0, 1.0, 0.0],
        [-1.0, 1.0, 0.0],
    ]
) / np.sqrt(2.0)


def dyadic_rows(directions):
    """Rows ``(gx^2, gy^2, gz^2, 2gxgy, 2gxgz, 2gygz)`` for unit gradients."""
    g = np.atleast_2d(np.asarray(directions, dtype=float))
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    return np.stack([gx * gx, gy * gy, gz * gz, 2 * gx * gy, 2 * gx * gz, 2 * gy * gz], axis=1)


@dataclass(frozen=True, eq=False)
class AcquisitionProtocol:
    """Diffusion weightings, gradient directions and repetition counts.

    A weighting with ``b == 0`` is acquired once per repetition without a
    gradient direction; every other weighting is acquired along all
    ``directions``.
    """

    b_values: Tuple[float, ...] = (0.0, 150.0, 600.0)
    directions: np.ndarray = field(default_factory=lambda: _DEFAULT_DIRECTIONS.copy())
    reps_per_weighting: Dict[float, int] = field(
        default_factory=lambda: {0.0: 8, 150.0: 2, 600.0: 8}
    )
    image_size: Tuple[int, int] = (128, 128)
    pixel_spacing: Tuple[float, float] = (2.8, 2.8)

    def __post_init__(self):
        b = tuple(float(v) for v in self.b_values)
        g = np.array(self.directions, dtype=float).reshape(-1, 3)
        reps = {float(k): int(v) for k, v in self.reps_per_weighting.items()}
        object.__setattr__(self, "b_values", b)
        object.__setattr__(self, "directions", g)
        object.__setattr__(self, "reps_per_weighting", reps)
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "pixel_spacing", tuple(float(v) for v in self.pixel_spacing))
        g.setflags(write=False)

        if any(v < 0 for v in b):
            raise ValidationError("b-values must be non-negative")
        if len(set(b)) != len(b):
            raise ValidationError("duplicate b-values")
        norms = np.linalg.norm(g, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValidationError("gradient directions must have unit norm")
        if np.linalg.matrix_rank(dyadic_rows(g)) < 6:
            raise ValidationError("need at least 6 non-collinear gradient directions")
        missing = [v for v in b if v not in reps]
        if missing:
            raise ValidationError(f"no repetition count for b-values {missing}")
        if any(n < 0 for n in reps.values()):
            raise ValidationError("repetition counts must be non-negative")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ValidationError("image_size must be (rows, cols)")

    def n_directions(self, b: float) -> int:
        return 1 if b == 0 else len(self.directions)

    def gradient(self, b: float, direction: int) -> np.ndarray:
        if b == 0:
            return np.zeros(3)
        return self.directions[direction]

    def frame_keys(self) -> Iterator[Tuple[float, int, int]]:
        """All ``(b, direction, repetition)`` keys in acquisition order."""
        for b in self.b_values:
            for rep in range(self.reps_per_weighting[b]):
                for d in range(self.n_directions(b)):
                    yield b, d, rep

    def to_dict(self) -> dict:
        return {
            "b_values": list(self.b_values),
            "directions": self.directions.tolist(),
            "reps_per_weighting": {repr(k): v for k, v in self.reps_per_weighting.items()},
            "image_size": list(self.image_size),
            "pixel_spacing": list(self.pixel_spacing),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AcquisitionProtocol":
        kwargs = dict(data)
        if "reps_per_weighting" in kwargs:
            kwargs["reps_per_weighting"] = {
                float(k): int(v) for k, v in kwargs["reps_per_weighting"].items()
            }
        if "directions" in kwargs:
            g = np.asarray(kwargs["directions"], dtype=float)
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            # stored unit vectors round-trip exactly; only rescale loose input
            if np.any(np.abs(norms - 1.0) > 1e-12):
                g = g / norms
            kwargs["directions"] = g
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class DwiStack:
    """Magnitude diffusion-weighted frames with their acquisition keys.

    ``frames`` has shape ``(n_frames, rows, cols)``; ``bvals``, ``dirs`` and
    ``reps`` label each frame.
    """

    frames: np.ndarray
    bvals: np.ndarray
    dirs: np.ndarray
    reps: np.ndarray
    mask: np.ndarray
    protocol: AcquisitionProtocol
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 3:
            raise ValidationError("frames must be (n_frames, rows, cols)")
        n = frames.shape[0]
        bvals = np.asarray(self.bvals, dtype=float).reshape(-1)
        dirs = np.asarray(self.dirs, dtype=int).reshape(-1)
        reps = np.asarray(self.reps, dtype=int).reshape(-1)
        if not (len(bvals) == len(dirs) == len(reps) == n):
            raise ValidationError("frame keys do not match the number of frames")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != frames.shape[1:]:
            raise ValidationError("mask shape differs from frame shape")
        if np.any(frames < 0):
            raise ValidationError("magnitude frames must be non-negative")
        for name, arr in (("frames", frames), ("bvals", bvals), ("dirs", dirs),
                          ("reps", reps), ("mask", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames.shape[1:]

    def keys(self):
        return list(zip(self.bvals.tolist(), self.dirs.tolist(), self.reps.tolist()))

    def gradients(self) -> np.ndarray:
        return np.array([self.protocol.gradient(b, d) for b, d in zip(self.bvals, self.dirs)])

    def subset(self, index, **meta) -> "DwiStack":
        index = np.asarray(index)
        return DwiStack(
            frames=self.frames[index],
            bvals=self.bvals[index],
            dirs=self.dirs[index],
            reps=self.reps[index],
            mask=self.mask,
            protocol=self.protocol,
            meta={**self.meta, **meta},
        )

    def replace_frames(self, frames, **meta) -> "DwiStack":
        return DwiStack(frames, self.bvals, self.dirs, self.reps, self.mask,
                        self.protocol, {**self.meta, **meta})


@dataclass(frozen=True, eq=False)
class TensorField:
    """Six-channel tensor image ``(Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)`` in mm^2/s."""

    components: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        comp = np.array(self.components, dtype=float)
        if comp.ndim != 3 or comp.shape[0] != 6:
            raise ValidationError("components must have shape (6, rows, cols)")
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != comp.shape[1:]:
            raise ValidationError("mask shape differs from component shape")
        comp[:, ~mask] = 0.0
        comp.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.components.shape[1:]

    def matrices(self) -> np.ndarray:
        """Full ``(rows, cols, 3, 3)`` symmetric matrices."""
        return unpack_tensor(np.moveaxis(self.components, 0, -1))


@dataclass(frozen=True, eq=False)
class MapSet:
    """MD (mm^2/s), FA, HA (deg) and E2A (deg) maps over an LV mask."""

    md: np.ndarray
    fa: np.ndarray
    ha: np.ndarray
    e2a: np.ndarray
    mask: np.ndarray
    flags: dict = field(default_factory=dict)

    NAMES = ("ha", "e2a", "md", "fa")

    def __getitem__(self, name):
        if name not in self.NAMES:
            raise KeyError(name)
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, matching eigenvalue order


def pack_tensor(matrix):
    """Full symmetric ``(..., 3, 3)`` -> packed ``(..., 6)``."""
    m = np.asarray(matrix, dtype=float)
    return np.stack([m[..., i, j] for i, j in _PACK_INDEX], axis=-1)


def unpack_tensor(packed):
    """Packed ``(..., 6)`` -> full symmetric ``(..., 3, 3)``."""
    p = np.asarray(packed, dtype=float)
    if p.shape[-1] != 6:
        raise ValidationError("packed tensors need 6 components")
    out = np.empty(p.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_PACK_INDEX):
        out[..., i, j] = p[..., k]
        out[..., j, i] = p[..., k]
    return out


# ---------------------------------------------------------------------------
# eigensolver

_DEGENERATE_SPREAD = 1e-12


def _fix_signs(vecs):
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(vecs), axis=-2)
    picked = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    sign = np.where(picked < 0, -1.0, 1.0)
    return vecs * sign


def _jacobi_sym3(a, sweeps=50):
    a = np.array(a, dtype=float)
    v = np.eye(3)
    for _ in range(sweeps):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        if off <= 1e-300:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if a[p, q] == 0.0:
                continue
            diff = a[q, q] - a[p, p]
            if abs(a[p, q]) < 1e-150 * abs(diff):
                t = a[p, q] / diff
            else:
                theta = diff / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def _null_vector(m):
    """Unit vector spanning the null space of rank-2 symmetric ``m`` (batched)."""
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(cands, axis=-1)
    best = np.argmax(norms, axis=1)
    rows = np.arange(len(m))
    v = cands[rows, best]
    return v / norms[rows, best][:, None]


def _any_orthogonal(v):
    # cross with the axis least aligned with v
    axis = np.zeros_like(v)
    axis[np.arange(len(v)), np.argmin(np.abs(v), axis=1)] = 1.0
    u = np.cross(v, axis)
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def eig_sym3_batch(packed):
    """Eigen-decomposition of many symmetric 3x3 tensors.

    Parameters
    ----------
    packed : array_like, shape (..., 6)
        Components in ``(Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)`` order.

    Returns
    -------
    evals : ndarray, shape (..., 3)
        Eigenvalues sorted in descending order.
    evecs : ndarray, shape (..., 3, 3)
        Orthonormal eigenvectors stored as columns, each with its
        largest-magnitude entry positive.

    Notes
    -----
    Eigenvalues come from the trigonometric solution of the characteristic
    cubic. The eigenvector of the best separated eigenvalue is the null vector
    of ``A - lambda I`` (with one Rayleigh-quotient refinement); the other two
    are solved exactly as a 2x2 problem in its orthogonal complement. Tensors
    whose eigenvalue spread is below ``1e-12`` of their scale go through a
    cyclic Jacobi fallback.
    """
    p6 = np.asarray(packed, dtype=float)
    if p6.shape[-1] != 6:
        raise ValidationError("packed tensors need 6 components")
    if not np.all(np.isfinite(p6)):
        raise NumericalError("invalid tensor")
    lead = p6.shape[:-1]
    a = unpack_tensor(p6.reshape(-1, 6))
    # exact power-of-two rescaling keeps tiny or huge tensors away from
    # under/overflow in the cross products
    _, expo = np.frexp(np.max(np.abs(a), axis=(1, 2)))
    pow2 = np.ldexp(1.0, expo)
    a = a / pow2[:, None, None]
    n = len(a)
    evals = np.empty((n, 3))
    evecs = np.empty((n, 3, 3))
    if n == 0:
        return evals.reshape(lead + (3,)), evecs.reshape(lead + (3, 3))

    eye = np.eye(3)
    q = np.trace(a, axis1=1, axis2=2) / 3.0
    b = a - q[:, None, None] * eye
    p = np.sqrt(np.einsum("nij,nij->n", b, b) / 6.0)
    scale = np.max(np.abs(a), axis=(1, 2))
    degenerate = p <= _DEGENERATE_SPREAD * np.maximum(scale, np.finfo(float).tiny)

    ok = ~degenerate
    if np.any(ok):
        aa, qq, pp = a[ok], q[ok], p[ok]
        r = np.linalg.det(b[ok] / pp[:, None, None]) / 2.0
        phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
        l1 = qq + 2.0 * pp * np.cos(phi)
        l3 = qq + 2.0 * pp * np.cos(phi + 2.0 * np.pi / 3.0)
        l2 = 3.0 * qq - l1 - l3

        top_isolated = (l1 - l2) >= (l2 - l3)
        lam = np.where(top_isolated, l1, l3)
        v = _null_vector(aa - lam[:, None, None] * eye)
        lam = np.einsum("ni,nij,nj->n", v, aa, v)
        v = _null_vector(aa - lam[:, None, None] * eye)

        u = _any_orthogonal(v)
        w = np.cross(v, u)
        a11 = np.einsum("ni,nij,nj->n", u, aa, u)
        a12 = np.einsum("ni,nij,nj->n", u, aa, w)
        a22 = np.einsum("ni,nij,nj->n", w, aa, w)
        theta = 0.5 * np.arctan2(2.0 * a12, a11 - a22)
        c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
        e_hi = c * u + s * w
        e_lo = -s * u + c * w
        mid = 0.5 * (a11 + a22)
        rad = np.hypot(0.5 * (a11 - a22), a12)
        lam_hi, lam_lo = mid + rad, mid - rad

        t = top_isolated[:, None]
        vals = np.where(t, np.stack([lam, lam_hi, lam_lo], 1), np.stack([lam_hi, lam_lo, lam], 1))
        vecs = np.where(
            t[:, :, None],
            np.stack([v, e_hi, e_lo], axis=2),
            np.stack([e_hi, e_lo, v], axis=2),
        )
        evals[ok] = vals
        evecs[ok] = vecs

    for i in np.flatnonzero(degenerate):
        evals[i], evecs[i] = _jacobi_sym3(a[i])

    evals = evals * pow2[:, None]
    evecs = _fix_signs(evecs)
    return evals.reshape(lead + (3,)), evecs.reshape(lead + (3, 3))


def eig_sym3(tensor: Sequence[float]) -> EigenSystem:
    """Eigen-decomposition of one packed symmetric tensor."""
    vals, vecs = eig_sym3_batch(np.asarray(tensor, dtype=float).reshape(6))
    return EigenSystem(eigenvalues=vals, eigenvectors=vecs)


def tensor_from_eigen(evals, evecs) -> np.ndarray:
    """Packed tensor ``sum_i lambda_i v_i v_i^T``; ``evecs`` holds columns."""
    evals = np.asarray(evals, dtype=float)
    evecs = np.asarray(evecs, dtype=float)
    full = np.einsum("...ik,...k,...jk->...ij", evecs, evals, evecs)
    return pack_tensor(full)


def in_plane_rotation(angle_deg: float) -> np.ndarray:
    """Rotation about the slice normal by ``angle_deg`` (counter-clockwise)."""
    a = float(angle_deg) % 360.0
    if a % 90.0 == 0.0:
        c, s = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}[a]
    else:
        t = np.deg2rad(a)
        c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def lv_centroid(mask) -> Tuple[float, float]:
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        raise ValidationError("empty mask")
    return float(rows.mean()), float(cols.mean())


def check_image_pair(a, b, name="images"):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"{name} differ in shape: {a.shape} vs {b.shape}")
    return a, b


def ensure_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape):
        raise ValidationError(f"mask shape {m.shape} does not match {tuple(shape)}")
    return m

