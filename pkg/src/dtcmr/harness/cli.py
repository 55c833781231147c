"""Command line entry point: ``dtcmr <group> <command> [options]``.

Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..exceptions import NumericalError, TrainingDiverged, ValidationError

log = logging.getLogger("dtcmr")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _csv_list(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma separated list")
    return items


def cmd_phantom_generate(args):
    from .cohort import CohortConfig, generate_cohort

    config = CohortConfig.load(args.config) if args.config else CohortConfig()
    out = generate_cohort(config, args.out, args.n, args.seed)
    print(f"wrote {args.n} subjects to {out}")


def _load_subjects(path):
    from .cohort import load_cohort, preprocess_cohort

    return preprocess_cohort(load_cohort(path))


def cmd_study_repetitions(args):
    from .report import write_repetition_tables
    from .studies import repetition_study

    result = repetition_study(_load_subjects(args.cohort), args.budgets, args.schemes, args.seed)
    for path in write_repetition_tables(result, args.out):
        print(f"wrote {path}")


def _train_config(args):
    from .studies import DESK_TRAINING

    config = DESK_TRAINING
    if args.train_config:
        try:
            data = json.loads(Path(args.train_config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read training config: {exc}") from None
        if "split" in data:
            data["split"] = tuple(data["split"])
        try:
            config = replace(config, **data)
        except TypeError as exc:
            raise ValidationError(f"invalid training config: {exc}") from None
    overrides = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.learning_rate),
                                   ("seed", args.seed)) if v is not None}
    return replace(config, **overrides)


def cmd_study_denoise(args):
    from ..denoise.checkpoint import save_model
    from .report import write_denoise_tables
    from .studies import denoise_study

    config = _train_config(args)
    result = denoise_study(_load_subjects(args.cohort), args.ladder, args.budget, config)
    for path in write_denoise_tables(result, args.out):
        print(f"wrote {path}")
    if args.save_models:
        root = Path(args.save_models)
        root.mkdir(parents=True, exist_ok=True)
        for r in result.rows:
            for k, model in enumerate(r.models):
                save_model(model, root / f"{r.row.name.replace('+', '_')}_{k}.dtdn",
                           {"ladder_row": r.row.name, "member": k, "budget": result.budget,
                            "split": result.split})
        print(f"wrote checkpoints to {root}")


def _maps_for(path: Path):
    from ..fitting import fit_stack
    from ..io import KIND_MAPS, KIND_TENSOR, load_dwi_stack, load_map_set, load_tensor_field, \
        read_planes
    from ..maps import compute_maps
    from ..registration import register_stack

    center = None
    if path.is_dir():
        manifest = path / "manifest.json"
        if manifest.exists():
            center = json.loads(manifest.read_text()).get("lv_center")
        for name in ("maps.dtcf", "dwi.dtcf", "truth.dtcf"):
            if (path / name).exists():
                path = path / name
                break
        else:
            raise ValidationError(f"{path}: no maps, DWI or tensor container found")
    if not path.exists():
        raise ValidationError(f"{path}: not found")
    center = tuple(center) if center else None
    if path.name == "dwi.dtcf":
        tensors = fit_stack(register_stack(load_dwi_stack(path)))
        return compute_maps(tensors, lv_center=center), "all-repetition LLS fit"
    kind, _ = read_planes(path)
    if kind == KIND_MAPS:
        return load_map_set(path), "stored maps"
    if kind == KIND_TENSOR:
        return compute_maps(load_tensor_field(path), lv_center=center), "tensor field"
    raise ValidationError(f"{path}: unsupported container for rendering")


def cmd_report_render(args):
    from .. import __version__
    from .report import render_maps

    source = Path(args.maps)
    maps, what = _maps_for(source)
    footer = f"dtcmr {__version__} | source: {source.as_posix()} ({what})"
    out = render_maps(maps, args.out, footer)
    print(f"wrote {out}")


def cmd_check_gradients(args):
    from ..denoise.gradcheck import TOLERANCE, gradient_gate

    results = gradient_gate(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<40} n={r.n_checked:<5} "
              f"rel_err={r.rel_error:.3e}")
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericalError(f"{len(failed)} gradient checks exceed {TOLERANCE:g}")


def build_parser():
    parser = argparse.ArgumentParser(prog="dtcmr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", required=True)

    phantom = groups.add_parser("phantom").add_subparsers(dest="command", required=True)
    p = phantom.add_parser("generate", help="write a synthetic cohort")
    p.add_argument("--config", help="JSON phantom/noise/protocol/jitter configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom_generate)

    study = groups.add_parser("study").add_subparsers(dest="command", required=True)
    p = study.add_parser("repetitions", help="repetition sampling scheme comparison")
    p.add_argument("--cohort", required=True)
    p.add_argument("--budgets", type=_csv_list, default=["1BH", "3BH", "5BH"])
    p.add_argument("--schemes", type=_csv_list, default=["F", "C", "L", "R", "F1"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study_repetitions)

    p = study.add_parser("denoise", help="train and score the de-noising ladder")
    p.add_argument("--cohort", required=True)
    p.add_argument("--ladder", type=_csv_list, required=True)
    p.add_argument("--budget", default="1BH")
    p.add_argument("--out", required=True)
    p.add_argument("--train-config", help="JSON file overriding training settings")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--save-models", help="directory for model checkpoints")
    p.set_defaults(func=cmd_study_denoise)

    report = groups.add_parser("report").add_subparsers(dest="command", required=True)
    p = report.add_parser("render", help="render HA/E2A/MD/FA maps to SVG")
    p.add_argument("--maps", required=True, help="subject directory or .dtcf container")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report_render)

    check = groups.add_parser("check").add_subparsers(dest="command", required=True)
    p = check.add_parser("gradients", help="finite-difference gradient gate")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_gradients)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingDiverged as exc:
        print(f"error: {exc}; diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
