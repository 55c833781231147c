"""Training and inference for tensor de-noisers."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from ..exceptions import TrainingDiverged, ValidationError
from .data import TensorPair, augment
from .networks import PatchCritic, UNet
from .normalization import NormStats, compute_norm_stats

log = logging.getLogger(__name__)

OBJECTIVES = ("l1_only", "wgan")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    batch_size: int = 8
    epochs: int = 40
    critic_steps: int = 5
    clip_value: float = 0.01
    adversarial_weight: float = 0.01
    seed: int = 0
    split: tuple = (0.8, 0.1, 0.1)
    depth: int = 3
    width: int = 16
    critic_width: int = 16
    negative_slope: float = 0.2
    crop_size: Optional[int] = 64
    max_rotation: float = 180.0
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValidationError("split ratios must sum to 1")
        if self.critic_steps < 1 or self.clip_value <= 0:
            raise ValidationError("critic_steps and clip_value must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")

    def to_dict(self):
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def digest(self, **extra) -> str:
        blob = json.dumps({**self.to_dict(), **extra}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(eq=False)
class DenoiserModel:
    """Trained generator plus the normalisation it was trained with."""

    net: UNet
    input_stats: NormStats
    target_stats: NormStats
    input_kind: str = "tensor"
    seed: int = 0
    config_hash: str = ""
    provenance: dict = field(default_factory=dict)

    @property
    def residual(self):
        return self.net.residual

    def normalize_inputs(self, noisy, mask):
        return self.input_stats.normalize(noisy, mask)

    def predict_normalized(self, noisy, mask):
        """De-noised output in normalised target space, background zeroed."""
        z = forward(self, self.normalize_inputs(noisy, mask))
        return z * _mask4(mask, z)

    def predict(self, noisy, mask):
        """De-noised tensors in mm^2/s for ``(N, C, H, W)`` physical inputs."""
        return self.target_stats.denormalize(self.predict_normalized(noisy, mask), mask)


def _mask4(mask, like):
    m = np.asarray(mask, dtype=float)
    return m[:, None] if m.ndim == like.ndim - 1 else m


def _pad_to_multiple(x, multiple):
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]), (h, w)


def forward(model: DenoiserModel, noisy) -> np.ndarray:
    """Run the generator on normalised input ``(N, C, H, W)`` or ``(C, H, W)``.

    Computation happens in the network's parameter dtype; the result is a
    float64 numpy array of the input's shape with 6 channels.
    """
    x = np.asarray(noisy, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != model.net.in_channels:
        raise ValidationError(f"shape mismatch: expected (N, {model.net.in_channels}, H, W)")
    x, (h, w) = _pad_to_multiple(x, model.net.multiple)
    dtype = next(model.net.parameters()).dtype
    model.net.eval()
    with torch.no_grad():
        out = model.net(torch.as_tensor(x, dtype=dtype)).double().numpy()[..., :h, :w]
    return out[0] if single else out


def loss_l1(pred, target, mask):
    """Mean absolute difference over masked voxels and all channels.

    Works on numpy arrays or torch tensors shaped ``(N, C, H, W)`` (mask
    ``(N, H, W)``) or ``(C, H, W)`` (mask ``(H, W)``).
    """
    if isinstance(pred, torch.Tensor):
        m = mask.unsqueeze(-3).to(pred.dtype)
        denom = m.sum() * pred.shape[-3]
        if float(denom) == 0:
            raise ValidationError("empty mask")
        return ((pred - target).abs() * m).sum() / denom
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    m = np.asarray(mask, dtype=float)[..., None, :, :]
    denom = m.sum() * pred.shape[-3]
    if denom == 0:
        raise ValidationError("empty mask")
    return float((np.abs(pred - target) * m).sum() / denom)


def critic_loss(critic, real, fake):
    """Negated Wasserstein estimate: ``mean C(fake) - mean C(real)``."""
    return critic(fake).mean() - critic(real).mean()


# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TrainResult:
    model: DenoiserModel
    critic: Optional[PatchCritic]
    history: List[dict]
    best_epoch: int
    n_train_pairs: int
    seconds: float


def _stack_pairs(pairs: Sequence[TensorPair], in_stats, out_stats):
    x = np.stack([in_stats.normalize(p.noisy, p.mask) for p in pairs])
    y = np.stack([out_stats.normalize(p.target, p.mask) for p in pairs])
    m = np.stack([p.mask for p in pairs]).astype(float)
    return x, y, m


def fit_norm_stats(pairs: Sequence[TensorPair], normalization: str):
    """``(input_stats, target_stats)`` for a list of training pairs.

    Tensor inputs share the target statistics so residual learning adds
    like to like; DWI inputs are scaled by the dataset maximum.
    """
    target = compute_norm_stats([p.target for p in pairs], [p.mask for p in pairs],
                                normalization, n_channels=6)
    if pairs[0].kind == "tensor":
        return target, target
    inputs = compute_norm_stats([p.noisy for p in pairs], [p.mask for p in pairs], "max")
    return inputs, target


def train(config: TrainConfig, train_pairs: Sequence[TensorPair],
          val_pairs: Sequence[TensorPair] = (), objective="l1_only",
          normalization="zscore", residual=True, norm_stats=None,
          gradient_gate=False, critic_hook=None) -> TrainResult:
    """Train a generator on paired data and return the best-validation model.

    Parameters
    ----------
    objective : {"l1_only", "wgan"}
        ``wgan`` alternates ``config.critic_steps`` critic updates (Adam on
        ``mean C(fake) - mean C(real)``, then weight clipping) with one
        generator update on ``L1 + adversarial_weight * (-mean C(fake))``.
    normalization : {"zscore", "fixed"}
        Target normalisation (and input normalisation for tensor inputs).
    norm_stats : (NormStats, NormStats), optional
        Pre-computed ``(input, target)`` statistics, e.g. shared by the
        members of an ensemble.
    gradient_gate : bool
        Run the finite-difference gradient check on a tiny copy of the
        architecture before training.
    critic_hook : callable, optional
        Called with the critic after every clipped critic update.
    """
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}")
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs)
    if not train_pairs:
        raise ValidationError("empty training dataset")
    kind = train_pairs[0].kind
    if any(p.kind != kind for p in train_pairs + val_pairs):
        raise ValidationError("mixed input kinds in dataset")
    if kind == "dwi":
        residual = False
    if gradient_gate:
        from .gradcheck import run_gradient_gate

        run_gradient_gate(raise_on_failure=True)

    prev_deterministic = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        # fork so seeding here leaves the caller's global RNG untouched
        with torch.random.fork_rng(devices=[]):
            return _fit(config, train_pairs, val_pairs, objective, normalization, residual,
                        norm_stats, critic_hook, kind)
    finally:
        torch.use_deterministic_algorithms(prev_deterministic)


def _fit(config, train_pairs, val_pairs, objective, normalization, residual, norm_stats,
         critic_hook, kind):
    started = time.perf_counter()
    in_stats, out_stats = norm_stats if norm_stats is not None else fit_norm_stats(
        train_pairs, normalization)
    n_in = train_pairs[0].noisy.shape[0]

    torch.manual_seed(config.seed)
    net = UNet(n_in, 6, config.depth, config.width, residual, config.negative_slope)
    opt_g = torch.optim.AdamW(net.parameters(), lr=config.learning_rate,
                              betas=(config.beta1, config.beta2),
                              weight_decay=config.weight_decay)
    critic = opt_c = None
    if objective == "wgan":
        critic = PatchCritic(6, config.critic_width, config.clip_value, config.negative_slope)
        opt_c = torch.optim.Adam(critic.parameters(), lr=config.learning_rate,
                                 betas=(config.beta1, config.beta2))

    if val_pairs:
        xv, yv, mv = _stack_pairs(val_pairs, in_stats, out_stats)
        xv, _ = _pad_to_multiple(xv, net.multiple)
        yv, _ = _pad_to_multiple(yv, net.multiple)
        mv, _ = _pad_to_multiple(mv, net.multiple)
        xv, yv, mv = (torch.as_tensor(a, dtype=torch.float32) for a in (xv, yv, mv))

    history = []
    best = (np.inf, -1, None)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    n = len(train_pairs)
    for epoch in range(config.epochs):
        net.train()
        order = rng.permutation(n)
        g_losses, c_losses = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [augment(train_pairs[i], (config.seed, epoch, int(i)), config.crop_size,
                             config.max_rotation, rotate=config.augment)
                     if (config.augment or config.crop_size) else train_pairs[i]
                     for i in idx]
            x, y, m = (torch.as_tensor(a, dtype=torch.float32)
                       for a in _stack_pairs(batch, in_stats, out_stats))
            x, y, m = _pad_batch(x, y, m, net.multiple)

            if critic is not None:
                with torch.no_grad():
                    fake = net(x) * m.unsqueeze(1)
                for _ in range(config.critic_steps):
                    opt_c.zero_grad()
                    lc = critic_loss(critic, y, fake)
                    lc.backward()
                    opt_c.step()
                    critic.clip_()
                    c_losses.append(lc.item())
                    if critic_hook is not None:
                        critic_hook(critic)

            opt_g.zero_grad()
            pred = net(x)
            loss = loss_l1(pred, y, m)
            if critic is not None:
                loss = loss - config.adversarial_weight * critic(pred * m.unsqueeze(1)).mean()
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}",
                    {"epoch": epoch, "batch_start": start, "recent_losses": g_losses[-5:]})
            loss.backward()
            opt_g.step()
            g_losses.append(loss.item())

        record = {"epoch": epoch, "train_loss": float(np.mean(g_losses))}
        if c_losses:
            record["critic_loss"] = float(np.mean(c_losses))
        if val_pairs:
            net.eval()
            with torch.no_grad():
                record["val_loss"] = float(loss_l1(net(xv), yv, mv))
            score = record["val_loss"]
        else:
            score = record["train_loss"]
        if score < best[0]:
            best = (score, epoch, copy.deepcopy(net.state_dict()))
        history.append(record)
        log.debug("epoch %d %s", epoch, record)

    net.load_state_dict(best[2])
    net.double().eval()
    if critic is not None:
        critic.double().eval()
    cfg_hash = config.digest(objective=objective, normalization=normalization,
                             residual=residual, kind=kind)
    model = DenoiserModel(net, in_stats, out_stats, kind, config.seed, cfg_hash, {
        "objective": objective,
        "normalization": normalization,
        "best_epoch": best[1],
        "n_train_pairs": n,
        "n_val_pairs": len(val_pairs),
        "config": config.to_dict(),
    })
    return TrainResult(model, critic, history, best[1], n, time.perf_counter() - started)


def _pad_batch(x, y, m, multiple):
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        pad = (0, pw, 0, ph)
        x = torch.nn.functional.pad(x, pad)
        y = torch.nn.functional.pad(y, pad)
        m = torch.nn.functional.pad(m, pad)
    return x, y, m


def ensemble_predict(models: Sequence[DenoiserModel], noisy, mask) -> np.ndarray:
    """Average member outputs in normalised space, then denormalise once."""
    models = list(models)
    if not models:
        raise ValidationError("empty ensemble")
    ref = models[0]
    for mdl in models[1:]:
        if not (mdl.target_stats.same_as(ref.target_stats)
                and mdl.input_stats.same_as(ref.input_stats)):
            raise ValidationError("ensemble members use different normalisation statistics")
    if len(models) == 1:
        return ref.predict(noisy, mask)
    z = np.mean([mdl.predict_normalized(noisy, mask) for mdl in models], axis=0)
    return ref.target_stats.denormalize(z, mask)
