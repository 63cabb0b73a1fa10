"""The assembled edge-aware multi-task network."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import Decoder, Encoder, ParameterStore, init_weights
from .config import ExperimentConfig
from .edges import sobel_edges
from .fusion import ConcatFusion, EdgeAwareFusion
from .heads import MultiTaskOutput, QuantHead, argmax_background_ties, entropy
from .phantom import ModalityPair


class ForwardStateError(RuntimeError):
    pass


@dataclass
class RawOutput:
    logits: torch.Tensor        # (B, K, H, W)
    quant: torch.Tensor         # (B, 4) normalized

    @property
    def probs(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=1)


class EaMtNet(nn.Module):
    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        c = config.channels[-1]
        self.enc_t2 = Encoder(config.channels)
        self.enc_dwi = Encoder(config.channels)
        if config.use_eafa:
            self.fusion = EdgeAwareFusion(c, config.grid, config.image_size, config.heads,
                                          config.depth, config.d_k, config.ffn_mult)
        else:
            self.fusion = ConcatFusion(c, config.grid)
        self.decoder = Decoder(2 * c, config.decoder_channels, config.num_classes)
        self.quant_head = QuantHead(config.token_dim)
        init_weights(self)
        # start the regression near zero so l_qua does not swamp early steps
        nn.init.normal_(self.quant_head.weight, std=0.01)
        if config.use_eafa:
            nn.init.normal_(self.fusion.pos, std=0.02)
            # edge maps are unnormalized magnitudes over H*W inputs
            nn.init.normal_(self.fusion.edge_proj.weight, std=1.0 / config.image_size ** 2)
            # residual branches start silent: fusion begins as the identity on its tokens
            for layer in self.fusion.layers:
                nn.init.zeros_(layer.attn.w_o.weight)
                nn.init.zeros_(layer.ffn[2].weight)
        self._recorded = False

    def store(self) -> ParameterStore:
        return ParameterStore(self)

    def forward(self, t2: torch.Tensor, dwi: torch.Tensor, edges: torch.Tensor | None = None) -> RawOutput:
        """t2, dwi: (B, 1, H, W); edges: (B, 2, H, W) Sobel magnitudes."""
        fused = self.fusion(self.enc_t2(t2), self.enc_dwi(dwi), edges)
        out = RawOutput(self.decoder(fused.fused_map), self.quant_head(fused.f_vector))
        self._recorded = True
        return out

    def backward(self, loss: torch.Tensor) -> ParameterStore:
        """Fill every parameter's gradient slot from ``loss``; unreached ones get zeros."""
        if not self._recorded:
            raise ForwardStateError("backward called before any forward pass")
        store = self.store()
        store.zero_grads()
        loss.backward()
        store.fill_grads()
        return store


def pair_tensors(pairs: list[ModalityPair], dtype=torch.float32):
    """Stack pairs into (t2, dwi, edges) batches."""
    t2 = np.stack([p.t2 for p in pairs])[:, None]
    dwi = np.stack([p.dwi for p in pairs])[:, None]
    edges = np.stack([[sobel_edges(p.t2), sobel_edges(p.dwi)] for p in pairs])
    return (torch.as_tensor(t2, dtype=dtype), torch.as_tensor(dwi, dtype=dtype),
            torch.as_tensor(edges, dtype=dtype))


@torch.no_grad()
def predict(pair: ModalityPair, model: EaMtNet) -> MultiTaskOutput:
    """Run the full pipeline on one pair in inference mode."""
    n = model.config.image_size
    if pair.shape != (n, n):
        raise ValueError(f"pair is {pair.shape}, model expects {n}x{n}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            raw = model(*pair_tensors([pair]))
    finally:
        model.train(was_training)
    probs = raw.probs[0].double()
    probs_hwk = probs.permute(1, 2, 0).numpy()
    labels = argmax_background_ties(probs_hwk)
    return MultiTaskOutput(
        seg_probs=probs_hwk,
        seg_mask=labels == 1,
        uncertainty=entropy(probs, dim=0).clamp(0.0, math.log2(probs.shape[0])).numpy(),
        quant_pred=raw.quant[0].double().numpy(),
    )
