"""Training objective and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .heads import entropy


@dataclass
class LossBreakdown:
    l_seg: torch.Tensor
    l_qua: torch.Tensor
    l_unc: torch.Tensor
    total: torch.Tensor
    weights: tuple[float, float, float]

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_seg", "l_qua", "l_unc", "total")}


def soft_dice(pred, target, smooth: float = 1.0):
    """(2 sum(y p) + s) / (sum(y^2) + sum(p^2) + s) over the trailing two axes.

    Works on numpy arrays or tensors; leading axes are treated as a batch.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if smooth < 0:
        raise ValueError("smooth must be non-negative")
    dims = (-2, -1)
    if isinstance(pred, torch.Tensor):
        target = target.to(pred.dtype)
        inter = (pred * target).sum(dims)
        denom = (target * target).sum(dims) + (pred * pred).sum(dims)
    else:
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        inter = (pred * target).sum(axis=dims)
        denom = (target * target).sum(axis=dims) + (pred * pred).sum(axis=dims)
    return (2.0 * inter + smooth) / (denom + smooth)


def quant_l1(pred, target):
    """Sum over the four indices of |target - pred|; batched over leading axes."""
    if isinstance(pred, torch.Tensor):
        if not (torch.isfinite(pred).all() and torch.isfinite(target).all()):
            raise FloatingPointError("non-finite quantification values")
        return (target - pred).abs().sum(-1)
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (np.isfinite(pred).all() and np.isfinite(target).all()):
        raise FloatingPointError("non-finite quantification values")
    return np.abs(target - pred).sum(-1)


def joint_loss(logits: torch.Tensor, quant_pred: torch.Tensor, mask: torch.Tensor,
               quant_target: torch.Tensor, weights=(1.0, 1.0, 0.1),
               use_uncertainty: bool = True, smooth: float = 1.0,
               ce_weight: torch.Tensor | None = None) -> LossBreakdown:
    """Multi-task objective on a batch.

    logits (B, K, H, W), mask (B, H, W) integer labels, quant tensors (B, 4)
    normalized. Per-pixel cross-entropy is weighted by 1 + entropy, with the
    weight detached. ``use_uncertainty=False`` fixes the weight at 1 and
    drops the entropy term. ``ce_weight`` (B, H, W) replaces the computed
    pixel weight, which lets callers evaluate the objective with the weight
    held at a fixed value.
    """
    lam_seg, lam_qua, lam_unc = weights
    if min(weights) < 0:
        raise ValueError(f"loss weights must be non-negative, got {weights}")
    probs = torch.softmax(logits, dim=1)
    ent = entropy(probs, dim=1)
    ce = F.cross_entropy(logits, mask.long(), reduction="none")
    if ce_weight is not None:
        ce = ce_weight * ce
    elif use_uncertainty:
        ce = (1.0 + ent.detach()) * ce
    if use_uncertainty:
        l_unc = ent.mean()
    else:
        l_unc = torch.zeros((), dtype=logits.dtype)
        lam_unc = 0.0
    dice = soft_dice(probs[:, 1], mask, smooth).mean()
    l_seg = ce.mean() + (1.0 - dice)
    l_qua = quant_l1(quant_pred, quant_target).mean()
    total = lam_seg * l_seg + lam_qua * l_qua + lam_unc * l_unc
    if not torch.isfinite(total):
        raise FloatingPointError("joint loss is not finite")
    return LossBreakdown(l_seg, l_qua, l_unc, total, (lam_seg, lam_qua, lam_unc))


def metric_dsc(pred_mask, target) -> float:
    """Binary Dice; 1.0 when both masks are empty."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(target, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return 2.0 * float((a & b).sum()) / float(denom)


def metric_mae(preds, targets) -> np.ndarray:
    """Per-index mean absolute error over samples, in the inputs' units."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no predictions")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return np.abs(p - t).reshape(-1, 4).mean(axis=0)
