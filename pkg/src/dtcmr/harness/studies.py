"""The repetition-sampling study and the de-noising ladder study."""
from __future__ import annotations

import logging
import re
import time
import zlib
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core import MapSet, TensorField
from ..denoise.data import SubjectData, assemble_t2t_dataset, make_pair, split_subjects
from ..denoise.gradcheck import run_gradient_gate
from ..denoise.training import TrainConfig, ensemble_predict, fit_norm_stats, train
from ..exceptions import NumericalError, ValidationError
from ..fitting import SamplingScheme
from ..maps import compute_maps
from ..metrics import (ALPHA, REPORT_SCALE, ks_two_sample, map_errors, median_iqr,
                       wilcoxon_signed_rank)

log = logging.getLogger(__name__)

MAPS = ("ha", "e2a", "md", "fa")
LEAST_SQUARES = "Least-squares"

# desk-scale training profile used by the ladder study
DESK_TRAINING = TrainConfig(learning_rate=2e-3, epochs=20, crop_size=48)


def subject_seed(seed: int, subject: str) -> int:
    """Per-subject seed for Random repetition draws."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(subject.encode())])
               .generate_state(1)[0])


def reference_maps(subject: SubjectData) -> MapSet:
    key = ("reference_maps",)
    if key not in subject._cache:
        subject._cache[key] = compute_maps(subject.reference, lv_center=subject.lv_center)
    return subject._cache[key]


def evaluate_tensors(subject: SubjectData, components, mask) -> Dict[str, float]:
    """Map errors of a tensor image against the subject's all-repetition reference."""
    maps = compute_maps(TensorField(np.asarray(components), np.asarray(mask, dtype=bool)),
                        lv_center=subject.lv_center)
    ref = reference_maps(subject)
    common = maps.mask & ref.mask
    if not common.any():
        raise NumericalError(f"{subject.subject}: no valid voxels to compare")
    return map_errors(maps, ref, common)


def _scheme_seed(scheme, seed, subject):
    return subject_seed(seed, subject) if SamplingScheme(scheme).variant == "Random" else 0


def least_squares_errors(subject: SubjectData, budget: str, scheme: str, seed=0):
    fitted, _ = subject.reduced(budget, SamplingScheme(scheme).variant,
                                _scheme_seed(scheme, seed, subject.subject))
    mask = subject.reference.mask & fitted.mask
    return evaluate_tensors(subject, fitted.components, mask)


def summarize(errors: Sequence[float], name: str):
    """Median and IQR in reporting units."""
    return median_iqr(np.asarray(errors) * REPORT_SCALE[name])


# ---------------------------------------------------------------------------
# repetition study

@dataclass
class RepetitionResult:
    budgets: List[str]
    schemes: List[str]
    subjects: List[str]
    errors: Dict[tuple, Dict[str, np.ndarray]]  # (budget, scheme) -> map -> per subject
    ks: List[dict]

    def median(self, budget, scheme, name="ha"):
        return float(np.median(self.errors[(budget, scheme)][name]))


def repetition_study(subjects: Dict[str, SubjectData], budgets: Sequence[str],
                     schemes: Sequence[str], seed: int = 0) -> RepetitionResult:
    """Error of every (budget, scheme) reduced fit against the all-repetition
    reference, plus pairwise KS tests between schemes per budget and map."""
    if not subjects:
        raise ValidationError("no subjects")
    schemes = [SamplingScheme(s).code for s in schemes]
    ids = sorted(subjects)
    errors = {}
    for budget in budgets:
        for scheme in schemes:
            per = {name: [] for name in MAPS}
            for sid in ids:
                e = least_squares_errors(subjects[sid], budget, scheme, seed)
                for name in MAPS:
                    per[name].append(e[name])
            errors[(budget, scheme)] = {k: np.asarray(v) for k, v in per.items()}
    ks = []
    for budget in budgets:
        for name in MAPS:
            for a, b in combinations(schemes, 2):
                d, p = ks_two_sample(errors[(budget, a)][name], errors[(budget, b)][name])
                ks.append({"budget": budget, "map": name, "scheme_a": a, "scheme_b": b,
                           "D": d, "p": p, "significant": p < ALPHA})
    return RepetitionResult(list(budgets), schemes, ids, errors, ks)


# ---------------------------------------------------------------------------
# de-noising ladder

@dataclass(frozen=True)
class LadderRow:
    name: str
    kind: str  # "tensor" or "dwi" input
    normalization: str  # "fixed" or "zscore"
    schemes: tuple
    objective: str
    residual: bool
    members: int = 1


_BASE_ROWS = {
    "BL": LadderRow("BL", "dwi", "fixed", ("First",), "l1_only", False),
    "BL+CN": LadderRow("BL+CN", "dwi", "zscore", ("First",), "l1_only", False),
    "BL+T2T": LadderRow("BL+T2T", "tensor", "fixed", ("First",), "l1_only", True),
    "BL+CN+T2T": LadderRow("BL+CN+T2T", "tensor", "zscore", ("First",), "l1_only", True),
    "BL+CN+multiT2T": LadderRow("BL+CN+multiT2T", "tensor", "zscore",
                                ("First", "Centre", "Last"), "l1_only", True),
    "WGUF": LadderRow("WGUF", "tensor", "zscore", ("First", "Centre", "Last"), "wgan", True),
}


def parse_ladder(names: Sequence[str]) -> List[LadderRow]:
    """Ladder rows by name; ``WGUFx<k>`` is a bagged ensemble of ``k`` WGUF models."""
    rows = []
    for name in names:
        name = name.strip()
        if name in _BASE_ROWS:
            rows.append(_BASE_ROWS[name])
            continue
        m = re.fullmatch(r"WGUFx(\d+)", name)
        if m and int(m.group(1)) >= 1:
            rows.append(replace(_BASE_ROWS["WGUF"], name=name, members=int(m.group(1))))
            continue
        raise ValidationError(f"unknown ladder entry {name!r}")
    if len({r.name for r in rows}) != len(rows):
        raise ValidationError("duplicate ladder entries")
    return rows


@dataclass(eq=False)
class RowResult:
    row: LadderRow
    errors: Dict[str, np.ndarray]  # map -> per test subject
    n_train_pairs: int
    n_val_pairs: int
    seconds: float
    models: list = field(default_factory=list)
    member_errors: List[Dict[str, np.ndarray]] = field(default_factory=list)
    config_hashes: List[str] = field(default_factory=list)
    best_epochs: List[int] = field(default_factory=list)


@dataclass(eq=False)
class DenoiseResult:
    budget: str
    split: Dict[str, List[str]]
    baseline: Dict[str, np.ndarray]
    rows: List[RowResult]
    train_config: TrainConfig
    gradient_gate_max_error: float

    def row(self, name) -> RowResult:
        for r in self.rows:
            if r.row.name == name:
                return r
        raise KeyError(name)


def bootstrap_subjects(ids: Sequence[str], member: int, seed: int) -> List[str]:
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(99, member)))
    ids = sorted(ids)
    return [ids[i] for i in rng.integers(0, len(ids), len(ids))]


def _predict_errors(models, pairs, subjects):
    out = {name: [] for name in MAPS}
    for p in pairs:
        pred = ensemble_predict(models, p.noisy[None], p.mask[None])[0]
        e = evaluate_tensors(subjects[p.subject], pred, p.mask)
        for name in MAPS:
            out[name].append(e[name])
    return {k: np.asarray(v) for k, v in out.items()}


def _fit_crop(config: TrainConfig, shape):
    if config.crop_size is None:
        return config
    return replace(config, crop_size=min(config.crop_size, *shape))


def train_row(row: LadderRow, subjects: Dict[str, SubjectData], split, budget: str,
              config: TrainConfig) -> RowResult:
    started = time.perf_counter()
    ds = assemble_t2t_dataset(subjects, [budget], list(row.schemes), split, kind=row.kind)
    if not ds["train"]:
        raise ValidationError("no training subjects in split")
    shape = ds["train"][0].mask.shape
    config = _fit_crop(config, shape)
    norm = fit_norm_stats(ds["train"], row.normalization)
    results = []
    if row.members == 1:
        results.append(train(config, ds["train"], ds["val"], row.objective,
                             row.normalization, row.residual, norm_stats=norm))
    else:
        for k in range(row.members):
            ids = bootstrap_subjects(split["train"], k, config.seed)
            pairs = [make_pair(subjects[sid], budget, s, row.kind)
                     for sid in ids for s in row.schemes]
            results.append(train(replace(config, seed=config.seed + k), pairs, ds["val"],
                                 row.objective, row.normalization, row.residual,
                                 norm_stats=norm))
    models = [r.model for r in results]
    errors = _predict_errors(models, ds["test"], subjects)
    member_errors = ([_predict_errors([m], ds["test"], subjects) for m in models]
                     if len(models) > 1 else [errors])
    return RowResult(row, errors, len(ds["train"]), len(ds["val"]),
                     time.perf_counter() - started, models, member_errors,
                     [m.config_hash for m in models], [r.best_epoch for r in results])


def denoise_study(subjects: Dict[str, SubjectData], ladder: Sequence[str], budget="1BH",
                  config: TrainConfig = DESK_TRAINING, split_seed: Optional[int] = None,
                  ) -> DenoiseResult:
    """Train every ladder row on the same subject split and score the test split.

    The finite-difference gradient gate runs first; a failure aborts the study.
    """
    rows = parse_ladder(ladder)
    gate = run_gradient_gate(raise_on_failure=True)
    split = split_subjects(list(subjects), config.split,
                           config.seed if split_seed is None else split_seed)
    if not split["test"]:
        raise ValidationError("test split is empty; the cohort is too small")
    baseline = {name: [] for name in MAPS}
    for sid in split["test"]:
        e = least_squares_errors(subjects[sid], budget, "First")
        for name in MAPS:
            baseline[name].append(e[name])
    baseline = {k: np.asarray(v) for k, v in baseline.items()}
    results = []
    for row in rows:
        log.info("training ladder row %s", row.name)
        results.append(train_row(row, subjects, split, budget, config))
    return DenoiseResult(budget, split, baseline, results, config,
                         max(r.rel_error for r in gate))


def wilcoxon_vs_baseline(errors, baseline):
    try:
        return wilcoxon_signed_rank(np.asarray(errors) - np.asarray(baseline))[1]
    except NumericalError:
        return None
