"""Phantom cohorts on disk: generation, loading and preprocessing."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..core import AcquisitionProtocol, DwiStack, TensorField
from ..denoise.data import SubjectData
from ..exceptions import ValidationError
from ..fitting import fit_stack
from ..io import dump_json, load_dwi_stack, load_tensor_field, save_dwi_stack, save_tensor_field
from ..phantom import NoiseProfile, PhantomConfig, generate_phantom, simulate_dwi
from ..registration import register_stack

COHORT_FILE = "cohort.json"


@dataclass(frozen=True)
class Jitter:
    """Half-widths of the uniform per-subject perturbations."""

    center: float = 4.0  # pixels, each axis
    endo_radius: float = 1.5
    wall: float = 1.5  # epi - endo thickness
    ha: float = 8.0  # degrees, endo and epi independently
    e2a: float = 10.0
    snr: float = 0.1  # relative


@dataclass(frozen=True)
class CohortConfig:
    phantom: PhantomConfig = PhantomConfig()
    noise: NoiseProfile = NoiseProfile(snr=10.0, motion_shift_sigma=0.5)
    protocol: AcquisitionProtocol = AcquisitionProtocol()
    jitter: Jitter = Jitter()

    @classmethod
    def from_dict(cls, data: dict) -> "CohortConfig":
        data = dict(data or {})
        phantom_keys = {f.name for f in fields(PhantomConfig)}
        known = {"phantom", "noise", "protocol", "jitter"}
        unknown = set(data) - known - phantom_keys
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        flat = {k: v for k, v in data.items() if k in phantom_keys}
        phantom = PhantomConfig.from_dict({**data.get("phantom", {}), **flat})
        noise = cls.noise
        if "noise" in data:
            noise = NoiseProfile.from_dict({**noise.to_dict(), **data["noise"]})
        protocol = cls.protocol
        if "protocol" in data:
            protocol = AcquisitionProtocol.from_dict({**protocol.to_dict(), **data["protocol"]})
        jitter = Jitter(**data.get("jitter", {}))
        return cls(phantom, noise, protocol, jitter)

    @classmethod
    def load(cls, path) -> "CohortConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON in {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self):
        return {"phantom": self.phantom.to_dict(), "noise": self.noise.to_dict(),
                "protocol": self.protocol.to_dict(), "jitter": asdict(self.jitter)}


def subject_id(index: int) -> str:
    return f"sub-{index:03d}"


def subject_variant(config: CohortConfig, index: int, seed: int):
    """Jittered phantom and noise profile for one subject."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, index)))
    j, p = config.jitter, config.phantom
    u = lambda half: float(rng.uniform(-half, half)) if half > 0 else 0.0  # noqa: E731
    cy, cx = p.center
    endo = p.endo_radius + u(j.endo_radius)
    epi = endo + (p.epi_radius - p.endo_radius) + u(j.wall)
    phantom = replace(p, lv_center=(cy + u(j.center), cx + u(j.center)),
                      endo_radius=endo, epi_radius=epi,
                      ha_endo=p.ha_endo + u(j.ha), ha_epi=p.ha_epi + u(j.ha),
                      e2a_mean=p.e2a_mean + u(j.e2a))
    snr = config.noise.snr
    if not math.isinf(snr):
        snr = snr * (1.0 + u(j.snr))
    noise_seed = int(np.random.SeedSequence(int(seed), spawn_key=(1, index)).generate_state(1)[0])
    noise = replace(config.noise, snr=snr, seed=noise_seed)
    return phantom, noise


def generate_cohort(config: CohortConfig, out, n: int, seed: int = 0) -> Path:
    """Write ``n`` subject directories plus ``cohort.json`` under ``out``."""
    if n < 1:
        raise ValidationError("cohort size must be positive")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        sid = subject_id(i)
        phantom, noise = subject_variant(config, i, seed)
        truth, _, geometry = generate_phantom(phantom)
        stack = simulate_dwi(truth, config.protocol, noise, phantom.s0_level)
        sdir = out / sid
        sdir.mkdir(exist_ok=True)
        save_dwi_stack(sdir / "dwi.dtcf", stack)
        save_tensor_field(sdir / "truth.dtcf", truth)
        manifest = {"subject": sid, "index": i, "cohort_seed": seed,
                    "lv_center": list(geometry.center),
                    "phantom": phantom.to_dict(), "noise": noise.to_dict(),
                    "n_frames": len(stack), "n_mask_voxels": int(truth.mask.sum())}
        dump_json(sdir / "manifest.json", manifest)
        entries.append(sid)
    dump_json(out / COHORT_FILE, {"n": n, "seed": seed, "subjects": entries,
                                  "config": config.to_dict()})
    return out


@dataclass(eq=False)
class SubjectRecord:
    subject: str
    stack: DwiStack
    truth: TensorField
    manifest: dict

    @property
    def lv_center(self):
        return tuple(self.manifest["lv_center"])


def load_cohort(path) -> List[SubjectRecord]:
    path = Path(path)
    index = path / COHORT_FILE
    if not index.exists():
        raise ValidationError(f"missing cohort: {index} not found")
    info = json.loads(index.read_text())
    records = []
    for sid in info["subjects"]:
        sdir = path / sid
        try:
            manifest = json.loads((sdir / "manifest.json").read_text())
        except FileNotFoundError:
            raise ValidationError(f"missing manifest for subject {sid}") from None
        records.append(SubjectRecord(sid, load_dwi_stack(sdir / "dwi.dtcf"),
                                     load_tensor_field(sdir / "truth.dtcf"), manifest))
    if not records:
        raise ValidationError("cohort has no subjects")
    return records


def preprocess(record: SubjectRecord) -> SubjectData:
    """Register all repetitions and fit the all-repetition reference tensors."""
    registered = register_stack(record.stack)
    reference = fit_stack(registered)
    return SubjectData(record.subject, registered, reference, record.lv_center)


def preprocess_cohort(records: List[SubjectRecord]) -> Dict[str, SubjectData]:
    return {r.subject: preprocess(r) for r in records}
