"""CSV/JSON tables and SVG map figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..core import MapSet
from ..metrics import REPORT_SCALE, REPORT_UNITS
from .studies import LEAST_SQUARES, MAPS, DenoiseResult, RepetitionResult, summarize, \
    wilcoxon_vs_baseline

SCALE_LABEL = {"ha": "1", "e2a": "1", "md": "1e5", "fa": "1e2"}


def _num(x, digits=4):
    return "NA" if x is None else f"{x:.{digits}f}"


def _p(x):
    return "NA" if x is None else f"{x:.6f}"


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)  # RFC 4180 line endings
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _map_cells(name, errors):
    med, iqr = summarize(errors, name)
    return [name, REPORT_UNITS[name], SCALE_LABEL[name], len(errors), _num(med), _num(iqr),
            f"{med:.2f} [{iqr:.2f}]"]


def repetition_rows(result: RepetitionResult):
    rows = []
    for budget in result.budgets:
        for scheme in result.schemes:
            for name in MAPS:
                rows.append([budget, scheme] + _map_cells(name, result.errors[(budget, scheme)][name]))
    return rows


REPETITION_HEADER = ["budget", "scheme", "map", "unit", "scale", "n_subjects", "median", "iqr",
                     "median_iqr"]
KS_HEADER = ["budget", "map", "scheme_a", "scheme_b", "ks_d", "p_value", "significant"]


def write_repetition_tables(result: RepetitionResult, out):
    """``out`` CSV, ``<stem>_ks.csv`` significance grid and ``<stem>.json``."""
    out = Path(out)
    _write_csv(out, REPETITION_HEADER, repetition_rows(result))
    ks_rows = [[k["budget"], k["map"], k["scheme_a"], k["scheme_b"], _num(k["D"]), _p(k["p"]),
                int(k["significant"])] for k in result.ks]
    ks_path = _write_csv(out.with_name(out.stem + "_ks.csv"), KS_HEADER, ks_rows)
    json_path = _write_json(out.with_suffix(".json"), {
        "budgets": result.budgets,
        "schemes": result.schemes,
        "subjects": result.subjects,
        "units": REPORT_UNITS,
        "report_scale": REPORT_SCALE,
        "summary": [dict(zip(REPETITION_HEADER, r)) for r in repetition_rows(result)],
        "ks": [dict(zip(KS_HEADER, r)) for r in ks_rows],
        "per_subject": {f"{b}/{s}": {k: v.tolist() for k, v in e.items()}
                        for (b, s), e in result.errors.items()},
    })
    return out, ks_path, json_path


DENOISE_HEADER = ["budget", "model", "map", "unit", "scale", "n_subjects", "median", "iqr",
                  "median_iqr", "wilcoxon_p_vs_least_squares", "n_train_pairs"]


def denoise_rows(result: DenoiseResult):
    rows = []
    for name in MAPS:
        rows.append([result.budget, LEAST_SQUARES] + _map_cells(name, result.baseline[name])
                    + ["NA", 0])
    for r in result.rows:
        for name in MAPS:
            p = wilcoxon_vs_baseline(r.errors[name], result.baseline[name])
            rows.append([result.budget, r.row.name] + _map_cells(name, r.errors[name])
                        + [_p(p), r.n_train_pairs])
    return rows


def write_denoise_tables(result: DenoiseResult, out):
    out = Path(out)
    rows = denoise_rows(result)
    _write_csv(out, DENOISE_HEADER, rows)
    manifest = {
        "budget": result.budget,
        "split": result.split,
        "train_config": result.train_config.to_dict(),
        "gradient_gate_max_rel_error": result.gradient_gate_max_error,
        "units": REPORT_UNITS,
        "report_scale": REPORT_SCALE,
        "summary": [dict(zip(DENOISE_HEADER, r)) for r in rows],
        "least_squares_per_subject": {k: v.tolist() for k, v in result.baseline.items()},
        "rows": [{
            "model": r.row.name,
            "input": r.row.kind,
            "normalization": r.row.normalization,
            "schemes": list(r.row.schemes),
            "objective": r.row.objective,
            "residual": r.row.residual,
            "members": r.row.members,
            "n_train_pairs": r.n_train_pairs,
            "n_val_pairs": r.n_val_pairs,
            "config_hashes": r.config_hashes,
            "best_epochs": r.best_epochs,
            "training_seconds": round(r.seconds, 3),
            "per_subject": {k: v.tolist() for k, v in r.errors.items()},
            "member_per_subject_ha": [m["ha"].tolist() for m in r.member_errors],
        } for r in result.rows],
    }
    json_path = _write_json(out.with_suffix(".json"), manifest)
    return out, json_path


# ---------------------------------------------------------------------------
# figures

PANELS = (
    ("ha", "HA (deg)", "twilight", -90.0, 90.0, 1.0),
    ("e2a", "E2A (deg)", "twilight", -90.0, 90.0, 1.0),
    ("md", "MD (1e-3 mm^2/s)", "viridis", 0.0, 2.5, 1e3),
    ("fa", "FA", "magma", 0.0, 1.0, 1.0),
)


def render_maps(maps: MapSet, out, provenance: str = ""):
    """Four-panel SVG with fixed colour scales and a provenance footer."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dtcmr"
    fig, axes = plt.subplots(1, 4, figsize=(14, 4))
    for ax, (name, title, cmap, lo, hi, scale) in zip(axes, PANELS):
        img = np.where(maps.mask, np.asarray(maps[name], dtype=float) * scale, np.nan)
        im = ax.imshow(img, cmap=cmap, vmin=lo, vmax=hi, interpolation="nearest")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if provenance:
        fig.text(0.01, 0.01, provenance, fontsize=7, family="monospace")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
