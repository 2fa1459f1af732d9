"""Network building blocks for the face-swap model.

Everything is channel-first internally. Widths follow a base profile scaled
by a channel multiplier; the profiles below are written for 64x64 and gain or
lose one stride-2 stage per octave of resolution (bottleneck is always 4x4,
encoder output is always 8x8).

Block vocabulary:
  * conv_block:   3x3 conv -> InstanceNorm -> ReLU (stride 1 or 2)
  * UpscaleBlock: 3x3 conv to 4k channels -> LeakyReLU(0.1) -> PixelShuffle,
    doubling resolution into k channels
  * ResidualBlock: two 3x3 conv+IN with a skip connection
  * SelfAttention: 1x1-conv query/key/value attention over all positions with
    a zero-initialized output gain, so it starts as the identity
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError


def scaled(base: int, channel_scale: float) -> int:
    return max(1, round(base * channel_scale))


def conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.InstanceNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SelfAttention(nn.Module):
    """Position-wise attention with a learned gain starting at zero."""

    def __init__(self, channels: int):
        super().__init__()
        inner = max(1, channels // 8)
        self.query = nn.Conv2d(channels, inner, 1)
        self.key = nn.Conv2d(channels, inner, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        b, c, h, w = x.shape
        q = self.query(x).flatten(2)                      # [B, c', HW]
        k = self.key(x).flatten(2)                        # [B, c', HW]
        v = self.value(x).flatten(2)                      # [B, c,  HW]
        attn = torch.softmax(q.transpose(1, 2) @ k, dim=-1)  # [B, HW, HW]
        out = (v @ attn.transpose(1, 2)).view(b, c, h, w)
        return self.gamma * out + x


class UpscaleBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout * 4, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(F.leaky_relu(self.conv(x), 0.1))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


def _down_widths(resolution: int) -> list[int]:
    n = resolution.bit_length() - 3  # stride-2 stages down to a 4x4 bottleneck
    return [min(1024, 128 * 2 ** i) for i in range(n)]


class Encoder(nn.Module):
    """Shared encoder: image -> dense bottleneck -> 8x8 feature map."""

    def __init__(self, resolution: int, channel_scale: float = 1.0, attention: bool = True):
        super().__init__()
        bases = _down_widths(resolution)
        w = lambda b: scaled(b, channel_scale)
        layers: list[nn.Module] = [conv_block(3, w(64))]
        cin = w(64)
        for base in bases:
            layers.append(conv_block(cin, w(base), stride=2))
            cin = w(base)
            if attention and base in (256, 512):
                layers.append(SelfAttention(cin))
        self.down = nn.Sequential(*layers)
        self.bottleneck_channels = cin
        flat = cin * 4 * 4
        self.latent = nn.Linear(flat, w(1024))
        self.expand = nn.Linear(w(1024), flat)
        self.out_channels = w(bases[-1] // 2)
        self.up = UpscaleBlock(cin, self.out_channels)

    def forward(self, x):
        h = self.down(x)                                   # [B, c, 4, 4]
        b = h.shape[0]
        h = self.expand(self.latent(h.flatten(1)))
        h = h.view(b, self.bottleneck_channels, 4, 4)
        return self.up(h)                                  # [B, out, 8, 8]


class Decoder(nn.Module):
    """Per-identity decoder: 8x8 feature map -> image in (0, 1)."""

    def __init__(self, resolution: int, channel_scale: float = 1.0, attention: bool = True):
        super().__init__()
        bases = _down_widths(resolution)
        w = lambda b: scaled(b, channel_scale)
        cin = w(bases[-1] // 2)
        n_up = resolution.bit_length() - 4  # 8x8 up to full resolution
        out_bases = [max(64, (bases[-1] // 2) >> (i + 1)) for i in range(n_up)]
        layers: list[nn.Module] = []
        for base in out_bases:
            layers.append(UpscaleBlock(cin, w(base)))
            cin = w(base)
            if attention and base == 128:
                layers.append(SelfAttention(cin))
        layers.append(ResidualBlock(cin))
        if attention:
            layers.append(SelfAttention(cin))
        layers.append(nn.Conv2d(cin, 3, 5, padding=2))
        self.body = nn.Sequential(*layers)

    def forward(self, z):
        return torch.sigmoid(self.body(z))


class PatchDiscriminator(nn.Module):
    """Three stride-2 stages then a 5x5 head: [B, 3, H, W] -> [B, 1, H/8, W/8].

    Fully convolutional, so it accepts any input size divisible by 8 and
    emits one probability per 8x8 patch.
    """

    def __init__(self, channel_scale: float = 1.0, attention: bool = True):
        super().__init__()
        w = lambda b: scaled(b, channel_scale)
        layers: list[nn.Module] = [conv_block(3, w(64), stride=2),
                                   conv_block(w(64), w(128), stride=2)]
        if attention:
            layers.append(SelfAttention(w(128)))
        layers.append(conv_block(w(128), w(256), stride=2))
        if attention:
            layers.append(SelfAttention(w(256)))
        layers.append(nn.Conv2d(w(256), 1, 5, padding=2))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return torch.sigmoid(self.body(x))


class FeatureNet(nn.Module):
    """Small frozen conv stack whose activations define the perceptual loss.

    Widths are fixed (independent of the model's channel multiplier) so the
    perceptual distance means the same thing across model sizes.
    """

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, 64, 3, stride=2, padding=1)

    def forward(self, x) -> list[torch.Tensor]:
        f1 = F.relu(self.conv1(x))
        f2 = F.relu(self.conv2(f1))
        f3 = self.conv3(f2)
        return [f1, f2, f3]


def init_parameters(module: nn.Module, rng: np.random.Generator, std: float = 0.02) -> nn.Module:
    """Deterministically initialize all parameters from a numpy generator.

    Weights are N(0, std), biases and attention gains zero. Parameters are
    filled in sorted name order so the result does not depend on registration
    order.
    """
    with torch.no_grad():
        for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if name.endswith("gamma") or "bias" in name.split(".")[-1]:
                p.zero_()
            else:
                vals = rng.normal(0.0, std, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))
    return module


def validate_resolution(resolution: int) -> int:
    if resolution not in (32, 64, 128):
        raise ConfigurationError(f"resolution must be one of 32, 64, 128, got {resolution}")
    return resolution
