"""Shared feature extractor: plain conv stem plus multi-scale units.

The stem is C(1,64,3)-C(64,64,3)-MP-C(64,128,3)-C(128,128,3)-MP-C(128,128,3)
with ReLU after every conv and 2x2 stride-2 max pooling, so the spatial
resolution drops by 4 overall (ceil division). The tail is a configurable
number of identical inception-style units with four parallel branches
(1x1; 1x1-3x3; 1x1-1x7-7x1; avgpool-1x1) concatenated to 256 channels.

All channel widths scale with ``width_mult`` so the same topology runs at
desk scale; weights are drawn i.i.d. N(0, init_std^2) with zero biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class BackboneConfig:
    init_std: float = 0.01
    unit_count: int = 2
    width_mult: float = 1.0

    def __post_init__(self):
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        if self.unit_count < 1:
            raise ValueError("unit_count must be >= 1")
        if self.width_mult <= 0:
            raise ValueError("width_mult must be positive")

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_mult)))


def conv_relu(cin: int, cout: int, kernel) -> nn.Sequential:
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    pad = (kernel[0] // 2, kernel[1] // 2)
    return nn.Sequential(nn.Conv2d(cin, cout, kernel, padding=pad), nn.ReLU(inplace=True))


class MultiScaleUnit(nn.Module):
    """Four parallel paths over the incoming map, concatenated channelwise."""

    def __init__(self, cin: int, cfg: BackboneConfig):
        super().__init__()
        w64, w48, w56 = cfg.scaled(64), cfg.scaled(48), cfg.scaled(56)
        self.branch1 = conv_relu(cin, w64, 1)
        self.branch2 = nn.Sequential(conv_relu(cin, w48, 1), conv_relu(w48, w64, 3))
        self.branch3 = nn.Sequential(
            conv_relu(cin, w48, 1),
            conv_relu(w48, w56, (1, 7)),
            conv_relu(w56, w64, (7, 1)),
        )
        self.branch4 = nn.Sequential(
            nn.AvgPool2d(3, stride=1, padding=1),
            conv_relu(cin, w64, 1),
        )
        self.out_channels = 4 * w64

    def forward(self, x):
        return torch.cat(
            [self.branch1(x), self.branch2(x), self.branch3(x), self.branch4(x)], dim=1
        )


class Backbone(nn.Module):
    """Image (N,1,H,W) in [0,1] -> features (N,256*m,ceil(H/4),ceil(W/4))."""

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        cfg = cfg or BackboneConfig()
        self.cfg = cfg
        w64, w128 = cfg.scaled(64), cfg.scaled(128)
        self.stem = nn.Sequential(
            conv_relu(1, w64, 3),
            conv_relu(w64, w64, 3),
            nn.MaxPool2d(2, stride=2, ceil_mode=True),
            conv_relu(w64, w128, 3),
            conv_relu(w128, w128, 3),
            nn.MaxPool2d(2, stride=2, ceil_mode=True),
            conv_relu(w128, w128, 3),
        )
        units = []
        cin = w128
        for _ in range(cfg.unit_count):
            unit = MultiScaleUnit(cin, cfg)
            units.append(unit)
            cin = unit.out_channels
        self.units = nn.Sequential(*units)
        self.out_channels = cin

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"backbone expects (N,1,H,W) input, got {tuple(x.shape)}")
        return self.units(self.stem(x))


def init_weights(net: nn.Module, std: float, generator: torch.Generator) -> None:
    """Draw every conv weight i.i.d. N(0, std^2) and zero the biases."""
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


def build_backbone(cfg: BackboneConfig | None = None, seed: int = 0) -> Backbone:
    """Construct and deterministically initialise a backbone."""
    cfg = cfg or BackboneConfig()
    net = Backbone(cfg)
    gen = torch.Generator().manual_seed(seed)
    init_weights(net, cfg.init_std, gen)
    return net
