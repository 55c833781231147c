"""Generator (U-Net shaped encoder-decoder) and patch critic."""
from __future__ import annotations

import torch
from torch import nn

from ..exceptions import ValidationError


class ConvBlock(nn.Sequential):
    """Two 3x3 convolutions, each followed by a leaky ReLU."""

    def __init__(self, in_ch, out_ch, negative_slope=0.2):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.LeakyReLU(negative_slope),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.LeakyReLU(negative_slope),
        )


class UNet(nn.Module):
    """Encoder-decoder with skip connections.

    ``depth`` counts resolution levels; level ``i`` has ``width * 2**i``
    channels. With ``residual=True`` the output is ``input + head(features)``
    and the 1x1 head is zero-initialised, so an untrained network is the
    identity map.
    """

    def __init__(self, in_channels=6, out_channels=6, depth=3, width=16,
                 residual=True, negative_slope=0.2):
        super().__init__()
        if depth < 1 or width < 1:
            raise ValidationError("depth and width must be positive")
        if residual and in_channels != out_channels:
            raise ValidationError("residual output needs equal input/output channels")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depth = depth
        self.width = width
        self.residual = residual
        self.negative_slope = negative_slope

        chans = [width * 2 ** i for i in range(depth)]
        self.encoders = nn.ModuleList()
        prev = in_channels
        for c in chans:
            self.encoders.append(ConvBlock(prev, c, negative_slope))
            prev = c
        self.pool = nn.MaxPool2d(2)
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for c_skip, c_deep in zip(reversed(chans[:-1]), reversed(chans[1:])):
            self.upsamplers.append(nn.ConvTranspose2d(c_deep, c_skip, 2, stride=2))
            self.decoders.append(ConvBlock(2 * c_skip, c_skip, negative_slope))
        self.head = nn.Conv2d(chans[0], out_channels, 1)
        if residual:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    @property
    def multiple(self):
        return 2 ** (self.depth - 1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValidationError(
                f"expected (N, {self.in_channels}, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % self.multiple or x.shape[3] % self.multiple:
            raise ValidationError(f"spatial size must be a multiple of {self.multiple}")
        skips = []
        h = x
        for i, enc in enumerate(self.encoders):
            h = enc(h)
            if i < self.depth - 1:
                skips.append(h)
                h = self.pool(h)
        for up, dec in zip(self.upsamplers, self.decoders):
            h = dec(torch.cat([up(h), skips.pop()], dim=1))
        out = self.head(h)
        return x + out if self.residual else out

    def descriptor(self):
        return {
            "type": "UNet",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "depth": self.depth,
            "width": self.width,
            "residual": self.residual,
            "negative_slope": self.negative_slope,
        }


class PatchCritic(nn.Module):
    """Strided convolutional critic scoring overlapping patches.

    No normalisation layers and a linear output, as required for a
    Wasserstein critic. Weights are kept in ``[-clip_value, clip_value]`` by
    :meth:`clip_`.
    """

    def __init__(self, in_channels=6, width=16, clip_value=0.01, negative_slope=0.2):
        super().__init__()
        self.clip_value = float(clip_value)
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 4, stride=2, padding=1),
            nn.LeakyReLU(negative_slope),
            nn.Conv2d(width, 2 * width, 4, stride=2, padding=1),
            nn.LeakyReLU(negative_slope),
            nn.Conv2d(2 * width, 1, 3, padding=1),
        )
        self.clip_()

    def forward(self, x):
        return self.net(x)

    @torch.no_grad()
    def clip_(self):
        for p in self.parameters():
            p.clamp_(-self.clip_value, self.clip_value)

    def max_abs_weight(self):
        return max(float(p.detach().abs().max()) for p in self.parameters())
