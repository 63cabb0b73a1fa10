"""Output heads: linear quantification, softmax segmentation, entropy uncertainty."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import entr
from torch import nn

LN2 = math.log(2.0)


class InvalidDistributionError(ValueError):
    pass


class QuantHead(nn.Linear):
    """Affine map from the fusion vector to the four normalized indices."""

    def __init__(self, dim: int):
        super().__init__(dim, 4)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[-1] != self.in_features:
            raise ValueError(f"fusion vector has length {f.shape[-1]}, head expects {self.in_features}")
        return super().forward(f)


def quant_scale(image_size: int, spacing: float) -> np.ndarray:
    """Physical units per normalized unit for (md, xo, yo, area)."""
    side_mm = image_size * spacing
    return np.array([side_mm, side_mm, side_mm, image_size * image_size * spacing ** 2 / 100.0])


def normalize_quant(q: np.ndarray, image_size: int, spacing: float) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / quant_scale(image_size, spacing)


def denormalize_quant(q: np.ndarray, image_size: int, spacing: float) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * quant_scale(image_size, spacing)


def entropy(probs: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Base-2 Shannon entropy along ``dim``; 0 log 0 counts as 0."""
    return -torch.special.xlogy(probs, probs).sum(dim) / LN2


def entropy_map(seg_probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Per-pixel base-2 entropy of class probabilities laid out along ``axis``."""
    p = np.asarray(seg_probs, dtype=np.float64)
    if (p < 0).any() or not np.isfinite(p).all():
        raise InvalidDistributionError("probabilities must be finite and non-negative")
    if np.abs(p.sum(axis=axis) - 1.0).max(initial=0.0) > 1e-4:
        raise InvalidDistributionError("probabilities do not sum to 1 within 1e-4")
    return entr(p).sum(axis=axis) / LN2


def argmax_background_ties(probs: np.ndarray, axis: int = -1) -> np.ndarray:
    # np.argmax returns the first maximal index, so ties fall to class 0
    return np.argmax(probs, axis=axis)


@dataclass
class MultiTaskOutput:
    seg_probs: np.ndarray       # (H, W, K)
    seg_mask: np.ndarray        # (H, W) bool, foreground = class 1
    uncertainty: np.ndarray     # (H, W), in [0, log2 K]
    quant_pred: np.ndarray      # (4,), normalized units

    def quant_physical(self, image_size: int, spacing: float) -> np.ndarray:
        return denormalize_quant(self.quant_pred, image_size, spacing)
