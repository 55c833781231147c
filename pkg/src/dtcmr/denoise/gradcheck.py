"""Finite-difference check of the analytic gradients of every layer type.

Run before any training experiment; :func:`run_gradient_gate` raises
:class:`~dtcmr.exceptions.NumericalError` when a check fails.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
import torch
from torch import nn

from ..exceptions import NumericalError
from .networks import PatchCritic, UNet

TOLERANCE = 1e-4
STEP = 1e-6


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    n_checked: int
    rel_error: float

    @property
    def passed(self):
        return self.rel_error < TOLERANCE


def _rel_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_module(name, module: nn.Module, x: torch.Tensor, seed=0, eps=STEP,
                 max_entries=None) -> List[GradCheckResult]:
    """Compare autograd gradients of ``sum(w * module(x))`` with central
    differences, for the input and for every parameter tensor."""
    module = module.double()
    x = x.double().clone().requires_grad_(True)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        weights = torch.randn(module(x).shape, generator=gen, dtype=torch.float64)

    def objective():
        return float((module(x) * weights).sum())

    module.zero_grad()
    (module(x) * weights).sum().backward()
    targets = [("input", x, x.grad.detach().clone())]
    targets += [(pname, p, p.grad.detach().clone()) for pname, p in module.named_parameters()]

    rng = np.random.default_rng(seed)
    results = []
    with torch.no_grad():
        for pname, tensor, grad in targets:
            flat = tensor.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and idx.size > max_entries:
                idx = np.sort(rng.choice(idx, max_entries, replace=False))
            numeric = np.empty(idx.size)
            for k, i in enumerate(idx):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = objective()
                flat[i] = orig - eps
                down = objective()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * eps)
            analytic = grad.view(-1).numpy()[idx]
            results.append(GradCheckResult(f"{name}.{pname}", int(idx.size),
                                           _rel_error(analytic, numeric)))
    return results


def _randomize(module, seed):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(0.3 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


def gradient_gate(seed=0, max_entries=None) -> List[GradCheckResult]:
    """Checks on each layer type in isolation and on the tiny composite
    networks (2-level, width-4 generator on 16x16 input; patch critic)."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)

    def rand(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float64)

    layers = [
        ("conv3x3", nn.Conv2d(3, 4, 3, padding=1), rand(2, 3, 8, 8)),
        ("conv_transpose", nn.ConvTranspose2d(4, 3, 2, stride=2), rand(2, 4, 4, 4)),
        ("conv_strided", nn.Conv2d(3, 4, 4, stride=2, padding=1), rand(2, 3, 8, 8)),
        ("leaky_relu", nn.LeakyReLU(0.2), rand(2, 3, 8, 8)),
        ("max_pool", nn.MaxPool2d(2), rand(2, 3, 8, 8)),
    ]
    results = []
    for name, layer, x in layers:
        results += check_module(name, layer, x, seed, max_entries=max_entries)

    tiny = _randomize(UNet(6, 6, depth=2, width=4, residual=True), seed)
    results += check_module("unet", tiny, rand(1, 6, 16, 16), seed, max_entries=max_entries)
    critic = _randomize(PatchCritic(6, width=4, clip_value=1.0), seed)
    results += check_module("critic", critic, rand(1, 6, 16, 16), seed, max_entries=max_entries)
    return results


def run_gradient_gate(raise_on_failure=True, **kwargs) -> List[GradCheckResult]:
    results = gradient_gate(**kwargs)
    failed = [r for r in results if not r.passed]
    if failed and raise_on_failure:
        worst = max(failed, key=lambda r: r.rel_error)
        raise NumericalError(
            f"gradient check failed for {len(failed)} tensors; worst {worst.name} "
            f"relative error {worst.rel_error:.3e}")
    return results
