"""Network architectures: a small conv classifier, a residual-18 variant,
and an encoder-decoder segmenter with skip connections."""

from __future__ import annotations

import torch
import torch.nn as nn


class SmallCnn(nn.Module):
    """Four conv blocks + global average pooling -> single logit."""

    def __init__(self, base_channels: int = 16):
        super().__init__()
        chs = [base_channels * 2**i for i in range(4)]
        blocks = []
        in_ch = 3
        for ch in chs:
            blocks += [
                nn.Conv2d(in_ch, ch, 3, padding=1),
                nn.BatchNorm2d(ch),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            in_ch = ch
        self.features = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(chs[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.features(x)).flatten(1)
        return self.head(x).squeeze(1)


def make_classifier_net(architecture: str) -> nn.Module:
    if architecture == "small_cnn":
        return SmallCnn()
    if architecture == "residual_18":
        from torchvision.models import resnet18

        return _SqueezeLogit(resnet18(weights=None, num_classes=1))
    raise ValueError(f"unknown classifier architecture {architecture!r}")


class _SqueezeLogit(nn.Module):
    def __init__(self, net: nn.Module):
        super().__init__()
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(1)


def _double_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class EncoderDecoder(nn.Module):
    """Symmetric encoder-decoder with skip connections; logit map output.

    Fully convolutional: accepts any input whose sides are divisible by
    2**depth.
    """

    def __init__(self, depth: int = 4, base_channels: int = 16):
        super().__init__()
        self.depth = depth
        chs = [base_channels * 2**i for i in range(depth + 1)]
        self.downs = nn.ModuleList(
            [_double_conv(3 if i == 0 else chs[i - 1], chs[i]) for i in range(depth)])
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(chs[depth - 1], chs[depth])
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(chs[i + 1], chs[i], 2, stride=2) for i in reversed(range(depth))])
        self.decoders = nn.ModuleList(
            [_double_conv(chs[i] * 2, chs[i]) for i in reversed(range(depth))])
        self.head = nn.Conv2d(chs[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % 2**self.depth or x.shape[-2] % 2**self.depth:
            raise ValueError(
                f"input sides must be divisible by {2**self.depth}, got {tuple(x.shape[-2:])}")
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = dec(torch.cat([skip, up(x)], dim=1))
        return self.head(x).squeeze(1)


def tiles_to_tensor(tiles) -> torch.Tensor:
    """uint8 HxWx3 tiles -> float NCHW in [0, 1]."""
    import numpy as np

    arr = np.stack([np.asarray(t) for t in tiles]).astype("float32") / 255.0
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
