"""Repetition sampling, breath-hold budgets, averaging and the LLS tensor fit."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import AcquisitionProtocol, DwiStack, TensorField, dyadic_rows, unpack_tensor
from .exceptions import ValidationError

VARIANTS = ("First", "Centre", "Last", "Random", "FirstPlus1")
SCHEME_CODES = {"F": "First", "C": "Centre", "L": "Last", "R": "Random", "F1": "FirstPlus1"}


@dataclass(frozen=True)
class SamplingScheme:
    """Rule for choosing ``m`` repetitions out of ``n`` available ones.

    ``m`` is only used when no breath-hold budget supplies per-weighting
    counts.
    """

    variant: str = "First"
    m: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        variant = SCHEME_CODES.get(self.variant, self.variant)
        if variant not in VARIANTS:
            raise ValidationError(f"unknown sampling scheme {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        if self.m is not None and self.m < 1:
            raise ValidationError("m must be >= 1")

    @property
    def code(self):
        return {v: k for k, v in SCHEME_CODES.items()}[self.variant]

    def indices(self, n: int, m: int, key: int = 0) -> np.ndarray:
        """Repetition indices kept out of ``range(n)``; ``key`` decorrelates Random draws."""
        if m < 1:
            return np.zeros(0, dtype=int)
        need = m + 1 if self.variant == "FirstPlus1" else m
        if need > n:
            raise ValidationError(f"{self.variant} needs {need} repetitions, only {n} available")
        if self.variant == "First":
            return np.arange(m)
        if self.variant == "FirstPlus1":
            return np.arange(1, m + 1)
        if self.variant == "Last":
            return np.arange(n - m, n)
        if self.variant == "Centre":
            start = (n - m) // 2
            return np.arange(start, start + m)
        rng = np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=(int(key),)))
        return np.sort(rng.choice(n, size=m, replace=False))


@dataclass(frozen=True)
class BreathHoldBudget:
    name: str
    reps: Dict[float, int] = field(default_factory=dict)

    @classmethod
    def named(cls, name: str, low=0.0, mid=150.0, high=600.0) -> "BreathHoldBudget":
        table = {
            "5BH": {low: 4, high: 4, mid: 1},
            "3BH": {low: 2, high: 2, mid: 1},
            "1BH": {low: 1, high: 1, mid: 0},
        }
        if name not in table:
            raise ValidationError(f"unknown breath-hold budget {name!r}")
        return cls(name, {float(k): v for k, v in table[name].items()})


def select_repetitions(stack: DwiStack, scheme: SamplingScheme,
                       budget: Optional[BreathHoldBudget] = None) -> DwiStack:
    """Keep the repetitions chosen by ``scheme`` for each b-value.

    With a ``budget`` the kept count per b-value comes from the budget
    (zero drops that weighting); otherwise ``scheme.m`` applies to every
    b-value. Repetition labels are preserved.
    """
    if budget is not None:
        counts = budget.reps
    elif scheme.m is not None:
        counts = {float(b): scheme.m for b in np.unique(stack.bvals)}
    else:
        raise ValidationError("need a breath-hold budget or scheme.m")

    keep = []
    chosen = {}
    for b in np.unique(stack.bvals):
        m = int(counts.get(float(b), 0))
        if m == 0:
            continue
        frames_b = np.flatnonzero(stack.bvals == b)
        available = np.unique(stack.reps[frames_b])
        try:
            picks = scheme.indices(len(available), m, key=int(round(b)))
        except ValidationError as exc:
            raise ValidationError(f"b={b:g}: {exc}") from None
        reps = available[picks]
        chosen[float(b)] = reps.tolist()
        keep.extend(frames_b[np.isin(stack.reps[frames_b], reps)].tolist())
    missing = [b for b, m in counts.items() if m > 0 and b not in chosen]
    if missing:
        raise ValidationError(f"b={missing[0]:g}: no repetitions available")
    keep = np.array(sorted(keep), dtype=int)
    return stack.subset(keep, selected_reps=chosen, scheme=scheme.variant,
                        budget=None if budget is None else budget.name)


@dataclass(frozen=True, eq=False)
class AveragedDwi:
    """Repetition-averaged images keyed by ``(b, direction)``."""

    images: np.ndarray
    bvals: np.ndarray
    dirs: np.ndarray
    counts: np.ndarray
    mask: np.ndarray
    protocol: AcquisitionProtocol

    def gradients(self):
        return np.array([self.protocol.gradient(b, d) for b, d in zip(self.bvals, self.dirs)])

    def keys(self):
        return list(zip(self.bvals.tolist(), self.dirs.tolist()))


def average_repetitions(stack: DwiStack) -> AveragedDwi:
    keys = sorted(set(zip(stack.bvals.tolist(), stack.dirs.tolist())))
    images = np.empty((len(keys),) + stack.shape)
    counts = np.empty(len(keys), dtype=int)
    for k, (b, d) in enumerate(keys):
        sel = (stack.bvals == b) & (stack.dirs == d)
        images[k] = stack.frames[sel].mean(axis=0)
        counts[k] = sel.sum()
    bvals = np.array([b for b, _ in keys], dtype=float)
    dirs = np.array([d for _, d in keys], dtype=int)
    return AveragedDwi(images, bvals, dirs, counts, stack.mask, stack.protocol)


def design_matrix(bvals, gradients) -> np.ndarray:
    """Rows ``(1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz)``."""
    b = np.asarray(bvals, dtype=float)[:, None]
    return np.hstack([np.ones((len(b), 1)), -b * dyadic_rows(gradients)])


class LinearTensorSolver:
    """QR factorisation of the design matrix, shared by all voxels."""

    def __init__(self, bvals, gradients, rcond=1e-10):
        self.design = design_matrix(bvals, gradients)
        if self.design.shape[0] < 7:
            raise ValidationError("need at least 7 measurements for a tensor fit")
        q, r = np.linalg.qr(self.design)
        diag = np.abs(np.diag(r))
        if diag.min() <= rcond * diag.max():
            raise ValidationError("rank-deficient diffusion design")
        self.q, self.r = q, r

    def solve(self, log_signal):
        """Least-squares solution for ``log_signal`` of shape ``(n_meas, n_vox)``."""
        return solve_triangular(self.r, self.q.T @ log_signal)


def lls_fit(averaged: AveragedDwi, mask=None) -> TensorField:
    """Linear least-squares fit of ``ln S`` to the rank-2 tensor model.

    Voxels with any non-positive signal are dropped from the mask; their
    count is reported as ``meta["n_excluded"]``. The fitted ``ln S0`` map and
    the number of non positive-semidefinite tensors are kept in ``meta``.
    """
    solver = LinearTensorSolver(averaged.bvals, averaged.gradients())
    mask = averaged.mask if mask is None else np.asarray(mask, dtype=bool)
    signals = averaged.images[:, mask]
    positive = np.all(signals > 0, axis=0)
    fit_mask = mask.copy()
    fit_mask[mask] = positive

    x = solver.solve(np.log(signals[:, positive]))
    components = np.zeros((6,) + mask.shape)
    components[:, fit_mask] = x[1:]
    ln_s0 = np.zeros(mask.shape)
    ln_s0[fit_mask] = x[0]

    residual = solver.design @ x - np.log(signals[:, positive])
    min_eig = np.linalg.eigvalsh(unpack_tensor(x[1:].T))[:, 0] if x.shape[1] else np.zeros(0)
    return TensorField(components, fit_mask, {
        "ln_s0": ln_s0,
        "n_excluded": int(np.count_nonzero(~positive)),
        "n_not_psd": int(np.count_nonzero(min_eig < 0)),
        "max_abs_residual": float(np.abs(residual).max()) if residual.size else 0.0,
    })


def fit_stack(stack: DwiStack, mask=None) -> TensorField:
    """Average repetitions then run :func:`lls_fit`."""
    return lls_fit(average_repetitions(stack), mask)
