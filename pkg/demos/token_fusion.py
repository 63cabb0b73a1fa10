"""Walk through the edge-aware fusion block on one phantom.

Shows the token layout (2C feature tokens then 2 edge tokens), the attention
weights of the first layer, and the two outputs used downstream.
"""
import torch

from eamtnet import EaMtNet, ExperimentConfig, generate_phantom
from eamtnet.model import pair_tensors


def main():
    torch.manual_seed(0)
    cfg = ExperimentConfig()
    model = EaMtNet(cfg).eval()
    t2, dwi, edges = pair_tensors([generate_phantom(3)])

    with torch.no_grad():
        g1, g2 = model.enc_t2(t2), model.enc_dwi(dwi)
        seq = model.fusion.tokenize(g1, g2, edges)
        print(f"feature stacks {tuple(g1.shape)}; tokens {tuple(seq.tokens.shape)} "
              f"({seq.n_feature} feature + 2 edge)")

        layer = model.fusion.layers[0]
        x = layer.norm1(seq.tokens)
        q = layer.attn._split(layer.attn.w_q(x))
        k = layer.attn._split(layer.attn.w_k(x))
        w = torch.softmax(q @ k.transpose(-2, -1) / cfg.d_k ** 0.5, -1)
        edge_share = w[0, :, :, -2:].sum(-1).mean()
        print(f"layer 1: {w.shape[1]} heads, attention mass on the edge tokens {edge_share:.3f}")

        out = model.fusion(g1, g2, edges)
        print(f"fused map {tuple(out.fused_map.shape)} -> decoder; "
              f"f_vector {tuple(out.f_vector.shape)} -> quantification head")


if __name__ == "__main__":
    main()
