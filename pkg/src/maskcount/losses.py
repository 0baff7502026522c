"""Training objectives: focal mask loss, density MSE, and their combination.

The density loss is a per-image sum of squared errors averaged over the
batch; the mask loss is a per-pixel mean, so the trade-off weight alpha
rebalances the two scales. The focal term is computed from logits in
log-sum-exp form and never touches saturated posteriors; gamma=0 reduces
it to plain binary cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .model import FusionVariant, ModelOutput


@dataclass
class LossConfig:
    alpha: float = 1.0  # density-term weight in the joint objective
    gamma: float = 2.0  # focal exponent; 0 = plain BCE

    def __post_init__(self):
        # alpha == 0 is the degenerate mask-only objective, kept legal for
        # debugging; training configs should use alpha > 0
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def focal_loss(logits: torch.Tensor, gt_mask: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Mean over pixels of -(1 - p_t)^gamma * log(p_t).

    p_t is the predicted probability of the true class; stable for large
    |logits| because both factors are evaluated from the logits directly.
    """
    if logits.shape != gt_mask.shape:
        raise ValueError(
            f"shape mismatch: logits {tuple(logits.shape)} vs mask {tuple(gt_mask.shape)}"
        )
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    signed = logits * (2.0 * gt_mask - 1.0)  # logit of the true class
    ce = F.softplus(-signed)  # -log p_t
    if gamma == 0:
        return ce.mean()
    return (torch.sigmoid(-signed) ** gamma * ce).mean()


def mse_density_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Sum of squared errors over pixels, averaged over the batch dimension.

    Unbatched (H, W) inputs are treated as a single image.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    sq = (pred - gt) ** 2
    if sq.ndim <= 2:
        return sq.sum()
    return sq.reshape(sq.shape[0], -1).sum(dim=1).mean()


def combined_loss(
    mask_logits: torch.Tensor,
    gt_mask: torch.Tensor,
    pred_density: torch.Tensor,
    gt_density: torch.Tensor,
    cfg: LossConfig | None = None,
) -> torch.Tensor:
    """Joint objective: focal mask term plus alpha-weighted density MSE."""
    cfg = cfg or LossConfig()
    return focal_loss(mask_logits, gt_mask, cfg.gamma) + cfg.alpha * mse_density_loss(
        pred_density, gt_density
    )


def variant_loss(
    variant: FusionVariant,
    output: ModelOutput,
    gt_mask: torch.Tensor,
    gt_density: torch.Tensor,
    cfg: LossConfig | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Route the auxiliary term by variant; returns (total, aux term, density term).

    B1/B2 train on the density term alone; B3 supervises its auxiliary head
    with the density target; S1-S5 use the focal mask objective.
    """
    cfg = cfg or LossConfig()
    density_term = mse_density_loss(output.density, gt_density)
    objective = variant.aux_objective
    if objective is None:
        aux_term = torch.zeros((), dtype=density_term.dtype, device=density_term.device)
    elif objective == "mse":
        aux_term = mse_density_loss(output.aux, gt_density)
    else:
        aux_term = focal_loss(output.aux, gt_mask, cfg.gamma)
    return aux_term + cfg.alpha * density_term, aux_term, density_term
