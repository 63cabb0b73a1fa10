"""Edge-aware feature aggregation: channel maps and edge maps as transformer tokens.

Every channel of the two bottleneck feature stacks becomes one token of
width D = P*P. Each full-resolution edge map is projected to width D and
appended, giving L = 2C + 2 tokens. Learned positional encodings are added
to all of them before three pre-norm transformer layers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class TokenSequence:
    tokens: torch.Tensor        # (B, L, D), positional encodings already added
    n_feature: int


@dataclass
class FusionOutput:
    fused_map: torch.Tensor     # (B, N, P, P)
    f_vector: torch.Tensor      # (B, D)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, d_k: float = 64.0,
              return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    if q.shape[-2] != k.shape[-2] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"row counts differ: {q.shape[-2]}, {k.shape[-2]}, {v.shape[-2]}")
    for t in (q, k, v):
        if not torch.isfinite(t).all():
            raise FloatingPointError("non-finite input to attention")
    scores = q @ k.transpose(-2, -1) / math.sqrt(d_k)
    w = torch.softmax(scores, dim=-1)
    out = w @ v
    return (out, w) if return_weights else out


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int = 4, d_k: float = 64.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"token width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.d_k = d_k
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_o = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        return x.view(b, l, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        heads = attention(self._split(self.w_q(x)), self._split(self.w_k(x)),
                          self._split(self.w_v(x)), self.d_k)
        return self.w_o(heads.transpose(1, 2).reshape(b, l, d))


class TransformerLayer(nn.Module):
    def __init__(self, dim: int, heads: int = 4, d_k: float = 64.0, ffn_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, d_k)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_mult * dim), nn.ReLU(),
                                 nn.Linear(ffn_mult * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class EdgeAwareFusion(nn.Module):
    def __init__(self, channels: int, grid: int, image_size: int, heads: int = 4,
                 depth: int = 3, d_k: float = 64.0, ffn_mult: int = 4, use_edges: bool = True):
        super().__init__()
        self.n_feature = 2 * channels
        self.grid = grid
        self.dim = grid * grid
        self.use_edges = use_edges
        n_tokens = self.n_feature + (2 if use_edges else 0)
        if use_edges:
            self.edge_proj = nn.Linear(image_size * image_size, self.dim)
        self.pos = nn.Parameter(torch.zeros(n_tokens, self.dim))
        self.layers = nn.ModuleList(
            [TransformerLayer(self.dim, heads, d_k, ffn_mult) for _ in range(depth)])
        self.norm_out = nn.LayerNorm(self.dim)

    @property
    def n_tokens(self) -> int:
        return self.pos.shape[0]

    def tokenize(self, g_t2: torch.Tensor, g_dwi: torch.Tensor,
                 edges: torch.Tensor | None = None) -> TokenSequence:
        """Feature stacks (B, C, P, P) x2 and edges (B, 2, H, W) -> (B, L, D)."""
        if g_t2.shape != g_dwi.shape:
            raise ValueError(f"feature stacks differ: {tuple(g_t2.shape)} vs {tuple(g_dwi.shape)}")
        b, c, p, _ = g_t2.shape
        if p * p != self.dim or 2 * c != self.n_feature:
            raise ValueError(f"expected {self.n_feature // 2} channels of {self.grid}x{self.grid}, "
                             f"got {c} of {p}x{p}")
        feats = torch.cat([g_t2, g_dwi], dim=1).flatten(2)
        if self.use_edges:
            if edges is None:
                raise ValueError("edge maps required when edge tokens are enabled")
            feats = torch.cat([feats, self.edge_proj(edges.flatten(2))], dim=1)
        return TokenSequence(feats + self.pos, self.n_feature)

    def encode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            tokens = layer(tokens)
        return self.norm_out(tokens)

    def split(self, out: torch.Tensor) -> FusionOutput:
        b = out.shape[0]
        fused = out[:, :self.n_feature].reshape(b, self.n_feature, self.grid, self.grid)
        return FusionOutput(fused_map=fused, f_vector=out.mean(dim=1))

    def forward(self, g_t2, g_dwi, edges=None) -> FusionOutput:
        return self.split(self.encode_tokens(self.tokenize(g_t2, g_dwi, edges).tokens))


class ConcatFusion(nn.Module):
    """Ablation stand-in: concatenate the two stacks and mix with a 1x1 conv."""

    def __init__(self, channels: int, grid: int):
        super().__init__()
        self.n_feature = 2 * channels
        self.grid = grid
        self.mix = nn.Conv2d(self.n_feature, self.n_feature, 1)

    def forward(self, g_t2, g_dwi, edges=None) -> FusionOutput:
        fused = self.mix(torch.cat([g_t2, g_dwi], dim=1))
        return FusionOutput(fused_map=fused, f_vector=fused.flatten(2).mean(dim=1))
