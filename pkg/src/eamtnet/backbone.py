"""Convolutional encoders, the deconvolution decoder and the parameter store."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import torch
from torch import nn


class ParameterStore:
    """Ordered name -> learnable tensor view over a module.

    Gradients live in each tensor's ``.grad`` slot. After :meth:`fill_grads`
    every slot holds a tensor; parameters the loss never reached get zeros.
    """

    def __init__(self, module: nn.Module):
        self._params: OrderedDict[str, nn.Parameter] = OrderedDict(module.named_parameters())

    def __getitem__(self, name: str) -> nn.Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._params.items()}

    def count(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def fill_grads(self) -> None:
        for p in self._params.values():
            if p.grad is None:
                p.grad = torch.zeros_like(p)

    def grads(self) -> dict[str, torch.Tensor]:
        return {k: v.grad for k, v in self._params.items()}


def init_weights(module: nn.Module) -> None:
    """Fan-in scaled uniform weights, zero biases, identity normalization."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.LayerNorm)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class ConvBlock(nn.Sequential):
    """3x3 conv, batch norm, ReLU, 2x2 max-pool."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )


class Encoder(nn.Module):
    def __init__(self, channels=(16, 32, 32), in_channels: int = 1):
        super().__init__()
        widths = (in_channels, *channels)
        self.blocks = nn.Sequential(*[ConvBlock(a, b) for a, b in zip(widths[:-1], widths[1:])])
        self.out_channels = channels[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) -> (B, C, H/8, W/8)."""
        h, w = x.shape[-2:]
        if h != w or h % 8:
            raise ValueError(f"encoder needs square input with side divisible by 8, got {h}x{w}")
        return self.blocks(x)


def encoder_param_count(channels=(16, 32, 32), in_channels: int = 1) -> int:
    widths = (in_channels, *channels)
    return sum(9 * a * b + b + 2 * b for a, b in zip(widths[:-1], widths[1:]))


class DeconvBlock(nn.Sequential):
    def __init__(self, c_in: int, c_out: int):
        super().__init__(
            nn.ConvTranspose2d(c_in, c_out, 2, stride=2),
            nn.BatchNorm2d(c_out),
            nn.ReLU(),
        )


class Decoder(nn.Module):
    """1x1 channel bridge, three 2x deconv blocks, 1x1 classifier."""

    def __init__(self, in_channels: int, width: int = 32, num_classes: int = 2):
        super().__init__()
        self.in_channels = in_channels
        self.bridge = nn.Conv2d(in_channels, width, 1)
        self.blocks = nn.Sequential(*[DeconvBlock(width, width) for _ in range(3)])
        self.classifier = nn.Conv2d(width, num_classes, 1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        """(B, C_f, P, P) -> (B, K, 8P, 8P) logits."""
        if fused.shape[1] != self.in_channels:
            raise ValueError(f"decoder expects {self.in_channels} channels, got {fused.shape[1]}")
        return self.classifier(self.blocks(self.bridge(fused)))
