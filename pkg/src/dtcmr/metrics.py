"""Map comparison errors and the non-parametric statistics used in the studies."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .exceptions import NumericalError, ValidationError

ALPHA = 0.05

# tables report MD errors x1e5 and FA errors x1e2
REPORT_SCALE = {"ha": 1.0, "e2a": 1.0, "md": 1e5, "fa": 1e2}
REPORT_UNITS = {"ha": "deg", "e2a": "deg", "md": "mm^2/s", "fa": "1"}


def _masked_pair(x, y, mask):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError("maps differ in shape")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValidationError("mask shape differs from maps")
    if not mask.any():
        raise ValidationError("empty mask")
    return x[mask], y[mask]


def angle_distance(x, y):
    """Per-voxel angular distance with 180-degree periodicity, in [0, 90]."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.where(d < 90.0, d, 180.0 - d)


def maae(x, y, mask=None) -> float:
    """Mean angle absolute error (degrees) over ``mask``."""
    a, b = _masked_pair(x, y, mask)
    return float(np.mean(angle_distance(a, b)))


def mae(x, y, mask=None) -> float:
    a, b = _masked_pair(x, y, mask)
    return float(np.mean(np.abs(a - b)))


def map_errors(pred, ref, mask=None) -> dict:
    """HA/E2A MAAE and MD/FA MAE between two MapSets, in native units."""
    if mask is None:
        mask = pred.mask & ref.mask
    return {
        "ha": maae(pred.ha, ref.ha, mask),
        "e2a": maae(pred.e2a, ref.e2a, mask),
        "md": mae(pred.md, ref.md, mask),
        "fa": mae(pred.fa, ref.fa, mask),
    }


# ---------------------------------------------------------------------------
# two-sample Kolmogorov-Smirnov

EXACT_KS_LIMIT = 10_000


def _kolmogorov_sf(lam):
    if lam < 1e-3:
        return 1.0
    total = 0.0
    for k in range(1, 101):
        term = (-1) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-16:
            break
    return min(max(2.0 * total, 0.0), 1.0)


def _ks_exact_sf(n, m, d_int):
    """P(D >= d) under H0, counting monotone lattice paths that stay strictly
    inside ``|i m - j n| < d_int``."""
    # probabilities instead of raw counts keep the recursion in float range
    prev = np.zeros(m + 1)
    for i in range(n + 1):
        cur = np.zeros(m + 1)
        for j in range(m + 1):
            if abs(i * m - j * n) >= d_int:
                continue
            if i == 0 and j == 0:
                cur[j] = 1.0
                continue
            up = prev[j] * (i / (i + j)) if i > 0 else 0.0
            left = cur[j - 1] * (j / (i + j)) if j > 0 else 0.0
            cur[j] = up + left
        prev = cur
    return float(min(max(1.0 - prev[m], 0.0), 1.0))


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_two_sample(a, b):
    """Two-sided two-sample Kolmogorov-Smirnov test.

    Returns ``(D, p)``. For ``n * m <= 10000`` the p-value is exact (lattice
    path count); larger samples use the Kolmogorov limit with the effective
    sample size correction ``(sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("empty sample")
    n, m = a.size, b.size
    d = ks_statistic(a, b)
    if d == 0.0:
        return 0.0, 1.0
    if n * m <= EXACT_KS_LIMIT:
        d_int = int(round(d * n * m))
        return d, _ks_exact_sf(n, m, d_int)
    ne = n * m / (n + m)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return d, _kolmogorov_sf(lam)


def ks_asymptotic_p(d, n, m) -> float:
    ne = n * m / (n + m)
    return _kolmogorov_sf((math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank

EXACT_WILCOXON_LIMIT = 12


def _signed_rank_distribution(doubled_ranks):
    """Distribution of twice W+ under random signs, over integer support."""
    total = int(sum(doubled_ranks))
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[:-r] if r else dist
        dist = 0.5 * (dist + shifted)
    return dist


def wilcoxon_signed_rank(differences):
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped and tied magnitudes receive average ranks.
    Returns ``(W+, p)``: exact p for up to 12 non-zero differences, otherwise
    the normal approximation with tie and continuity corrections.
    """
    d = np.asarray(differences, dtype=float).ravel()
    d = d[d != 0]
    if d.size == 0:
        raise NumericalError("degenerate: all differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    n = d.size
    if n <= EXACT_WILCOXON_LIMIT:
        doubled = np.rint(2 * ranks).astype(int)
        dist = _signed_rank_distribution(doubled)
        w2 = int(round(2 * w_plus))
        lower = dist[: w2 + 1].sum()
        upper = dist[w2:].sum()
        return w_plus, float(min(1.0, 2.0 * min(lower, upper)))
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    if var <= 0:
        raise NumericalError("degenerate: zero variance")
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return w_plus, float(min(1.0, 2.0 * (1.0 - ndtr(z))))


def median_iqr(sample):
    """``(median, q75 - q25)`` with linear quantile interpolation."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("empty sample")
    q25, q50, q75 = np.percentile(x, [25, 50, 75])
    return float(q50), float(q75 - q25)
