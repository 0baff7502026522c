"""Variant wiring: the five mask-aware regressors plus the three baselines.

Variant map (gate = what modulates or feeds the density path):

  B1  backbone + density branch, no auxiliary head
  B2  S5 topology, auxiliary head carries no loss (depth-matched baseline)
  B3  S5 topology, auxiliary head regresses density instead of the mask
  S1  density branch gated elementwise; ground-truth mask at train time,
      hard-thresholded posterior at test time
  S2  density branch gated elementwise by the posterior in both phases
  S3  density branch gated by the hard-thresholded posterior with a
      straight-through gradient
  S4  posterior embedded and fused by convolution; ground-truth mask at
      train time, hard-thresholded posterior at test time
  S5  posterior embedded and fused by convolution in both phases

Checkpoints are .npz archives mapping parameter names to float32 payloads
plus a JSON manifest entry recording variant, config, epoch and seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from enum import Enum
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .backbone import Backbone, BackboneConfig, init_weights
from .exceptions import DataError
from .heads import (
    DensityBranch,
    FusionRegressor,
    MaskBranch,
    MaskEmbed,
    fuse_elementwise,
    fuse_ste,
    hard_mask,
    mask_posterior,
)

CHECKPOINT_FORMAT = 1


class FusionVariant(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    B1 = "B1"
    B2 = "B2"
    B3 = "B3"

    @property
    def has_aux_head(self) -> bool:
        return self is not FusionVariant.B1

    @property
    def uses_fusion_head(self) -> bool:
        return self in (FusionVariant.S4, FusionVariant.S5, FusionVariant.B2, FusionVariant.B3)

    @property
    def gt_gated_in_training(self) -> bool:
        return self in (FusionVariant.S1, FusionVariant.S4)

    @property
    def aux_objective(self) -> str | None:
        """'focal' for the mask-supervised variants, 'mse' for the
        density-feedback baseline, None when the head has no own loss."""
        if self in (FusionVariant.B1, FusionVariant.B2):
            return None
        if self is FusionVariant.B3:
            return "mse"
        return "focal"


class ModelOutput(NamedTuple):
    density: torch.Tensor
    aux: torch.Tensor | None  # mask logits (S1-S5, B2), density feedback (B3)


class MaskAwareNet(nn.Module):
    """End-to-end counting network for one fusion variant."""

    def __init__(self, variant: FusionVariant, cfg: BackboneConfig | None = None):
        super().__init__()
        self.variant = FusionVariant(variant)
        self.cfg = cfg or BackboneConfig()
        self.backbone = Backbone(self.cfg)
        feat = self.backbone.out_channels
        if self.variant.has_aux_head:
            self.mask_branch = MaskBranch(feat)
        if self.variant.uses_fusion_head:
            self.mask_embed = MaskEmbed(feat, hidden=self.cfg.scaled(64))
            self.regressor = FusionRegressor(feat)
        else:
            self.density_branch = DensityBranch(feat)

    def mask_parameters(self):
        """Parameters of the auxiliary (mask) head, empty for B1."""
        if not self.variant.has_aux_head:
            return iter(())
        return self.mask_branch.parameters()

    def _gate_channel(self, aux: torch.Tensor, gt_mask: torch.Tensor | None) -> torch.Tensor:
        v = self.variant
        if v.gt_gated_in_training and self.training:
            if gt_mask is None:
                raise ValueError(f"{v.value} needs the ground-truth mask during training")
            return gt_mask
        if v is FusionVariant.B3:
            return aux  # density feedback, no squashing
        posterior = mask_posterior(aux)
        if v in (FusionVariant.S1, FusionVariant.S4):
            return hard_mask(posterior)
        return posterior

    def forward(self, image: torch.Tensor, gt_mask: torch.Tensor | None = None) -> ModelOutput:
        feats = self.backbone(image)
        aux = self.mask_branch(feats) if self.variant.has_aux_head else None
        v = self.variant
        if v is FusionVariant.B1:
            return ModelOutput(self.density_branch(feats), None)
        if v in (FusionVariant.S1, FusionVariant.S2, FusionVariant.S3):
            raw = self.density_branch(feats)
            if v is FusionVariant.S3:
                density = fuse_ste(raw, mask_posterior(aux))
            else:
                density = fuse_elementwise(raw, self._gate_channel(aux, gt_mask))
            return ModelOutput(density, aux)
        gate = self._gate_channel(aux, gt_mask)
        density = self.regressor(feats, self.mask_embed(gate))
        return ModelOutput(density, aux)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def assemble_model(
    variant: FusionVariant | str, cfg: BackboneConfig | None = None, seed: int = 0
) -> MaskAwareNet:
    """Build a variant and deterministically initialise all of its weights."""
    try:
        variant = FusionVariant(variant)
    except ValueError as exc:
        raise ValueError(f"unknown fusion variant {variant!r}") from exc
    model = MaskAwareNet(variant, cfg)
    gen = torch.Generator().manual_seed(seed)
    init_weights(model, model.cfg.init_std, gen)
    return model


# ---------------------------------------------------------------------------
# inference helpers


def predict_maps(model: MaskAwareNet, image: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Run one grayscale [0,1] image; returns (density map, posterior or None)."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None, None]
            out = model(x)
            density = out.density[0, 0].numpy().astype(np.float64)
            posterior = None
            if out.aux is not None and model.variant is not FusionVariant.B3:
                posterior = torch.sigmoid(out.aux)[0, 0].numpy().astype(np.float64)
    finally:
        model.train(was_training)
    return density, posterior


def collect_activations(model: MaskAwareNet, image: np.ndarray) -> dict[str, np.ndarray]:
    """Debug helper: run one image and capture each submodule's output map."""
    captured: dict[str, np.ndarray] = {}
    hooks = []
    for name, module in model.named_children():
        def make_hook(key):
            def hook(_module, _inputs, output):
                captured[key] = output.detach()[0].numpy().astype(np.float32)

            return hook

        hooks.append(module.register_forward_hook(make_hook(name)))
    try:
        density, posterior = predict_maps(model, image)
    finally:
        for handle in hooks:
            handle.remove()
    captured["density"] = density.astype(np.float32)
    if posterior is not None:
        captured["posterior"] = posterior.astype(np.float32)
    return captured


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: MaskAwareNet, epoch: int = 0, seed: int = 0, extra: dict | None = None) -> None:
    """Write weights as name->float32 arrays plus a JSON manifest entry."""
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "variant": model.variant.value,
        "config": asdict(model.cfg),
        "epoch": epoch,
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    payload = {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.state_dict().items()
    }
    np.savez(path, __manifest__=json.dumps(manifest), **payload)


def read_manifest(path) -> dict:
    try:
        with np.load(path) as archive:
            return json.loads(str(archive["__manifest__"]))
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read checkpoint manifest from {path}: {exc}") from exc


def load_checkpoint(path, expected_variant: FusionVariant | str | None = None) -> tuple[MaskAwareNet, dict]:
    """Rebuild the model recorded in a checkpoint and load its weights.

    Passing ``expected_variant`` turns a variant mismatch into a hard error.
    """
    manifest = read_manifest(path)
    variant = FusionVariant(manifest["variant"])
    if expected_variant is not None and FusionVariant(expected_variant) is not variant:
        raise DataError(
            f"checkpoint {path} holds variant {variant.value}, "
            f"expected {FusionVariant(expected_variant).value}"
        )
    model = MaskAwareNet(variant, BackboneConfig(**manifest["config"]))
    with np.load(path) as archive:
        state = {}
        for name, tensor in model.state_dict().items():
            if name not in archive:
                raise DataError(f"checkpoint {path} is missing parameter {name}")
            arr = archive[name]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise DataError(
                    f"checkpoint parameter {name} has shape {arr.shape}, "
                    f"model expects {tuple(tensor.shape)}"
                )
            state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, manifest
