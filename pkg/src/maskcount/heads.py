"""Prediction heads and the mask/density fusion primitives.

The mask branch and the density branch share the same two-conv shape
(C(F,F,3)-C(F,1,1)); the mask posterior is the sigmoid of the branch
output. Fusion happens either by elementwise gating of the raw density
(with the ground-truth mask, the posterior, or a hard-thresholded
posterior routed through a straight-through estimator) or by embedding
the one-channel gate into F feature channels and regressing density from
the concatenation with the image features.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .backbone import conv_relu


class MaskBranch(nn.Module):
    """C(F,F,3)-ReLU-C(F,1,1); emits logits, no activation on the output."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = conv_relu(in_channels, in_channels, 3)
        self.conv2 = nn.Conv2d(in_channels, 1, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} feature channels, got {features.shape[1]}"
            )
        return self.conv2(self.conv1(features))


class DensityBranch(MaskBranch):
    """Same architecture as the mask branch; emits raw density values."""


class MaskEmbed(nn.Module):
    """Lift a one-channel gate map to F feature channels: C(1,64,3)-C(64,F,3)."""

    def __init__(self, out_channels: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(conv_relu(1, hidden, 3), conv_relu(hidden, out_channels, 3))

    def forward(self, gate: torch.Tensor) -> torch.Tensor:
        return self.net(gate)


class FusionRegressor(nn.Module):
    """Concat image and mask features, regress density: C(2F,F,3)-C(F,F,3)-C(F,1,1)."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            conv_relu(2 * in_channels, in_channels, 3),
            conv_relu(in_channels, in_channels, 3),
            nn.Conv2d(in_channels, 1, 1),
        )

    def forward(self, img_feats: torch.Tensor, mask_feats: torch.Tensor) -> torch.Tensor:
        if img_feats.shape[-2:] != mask_feats.shape[-2:]:
            raise ValueError(
                f"spatial shapes differ: {tuple(img_feats.shape)} vs {tuple(mask_feats.shape)}"
            )
        return self.net(torch.cat([img_feats, mask_feats], dim=1))


def mask_posterior(logits: torch.Tensor) -> torch.Tensor:
    """Per-pixel foreground probability, strictly inside (0, 1)."""
    return torch.sigmoid(logits)


def hard_mask(posterior: torch.Tensor) -> torch.Tensor:
    """Binarise a posterior at 0.5; strictly greater-than, no gradient."""
    return (posterior > 0.5).to(posterior.dtype)


class _HardThresholdSTE(torch.autograd.Function):
    # forward: 0.5 hard threshold; backward: identity (d out / d posterior = 1)

    @staticmethod
    def forward(ctx, posterior):
        return (posterior > 0.5).to(posterior.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output


def ste_mask(posterior: torch.Tensor) -> torch.Tensor:
    """Hard 0.5 threshold whose gradient is passed straight through."""
    return _HardThresholdSTE.apply(posterior)


def fuse_elementwise(raw: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """Gate the raw density map elementwise; the gate must lie in [0, 1]."""
    if raw.shape != gate.shape:
        raise ValueError(f"shape mismatch: raw {tuple(raw.shape)} vs gate {tuple(gate.shape)}")
    with torch.no_grad():
        if gate.numel() and (gate.min() < 0 or gate.max() > 1):
            raise ValueError("gate values must lie in [0, 1]")
    return raw * gate


def fuse_ste(raw: torch.Tensor, posterior: torch.Tensor) -> torch.Tensor:
    """Gate by the hard-thresholded posterior; backward treats the threshold
    as the identity, so the posterior still receives density gradients."""
    if raw.shape != posterior.shape:
        raise ValueError(
            f"shape mismatch: raw {tuple(raw.shape)} vs posterior {tuple(posterior.shape)}"
        )
    return raw * ste_mask(posterior)
