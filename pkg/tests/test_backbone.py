import numpy as np
import pytest
import torch

from eamtnet.backbone import Decoder, Encoder, ParameterStore, encoder_param_count, init_weights
from eamtnet.config import ExperimentConfig
from eamtnet.losses import joint_loss
from eamtnet.model import EaMtNet, ForwardStateError

# closed form per block: 3*3*C_in*C_out + C_out (conv) + 2*C_out (BN affine)
ENCODER_PARAMS = (9 * 1 * 16 + 16 + 32) + (9 * 16 * 32 + 32 + 64) + (9 * 32 * 32 + 32 + 64)


def test_encoder_param_count_regression():
    assert ENCODER_PARAMS == 14208
    assert encoder_param_count() == ENCODER_PARAMS
    assert ParameterStore(Encoder()).count() == ENCODER_PARAMS
    model = EaMtNet(ExperimentConfig())
    n = sum(p.numel() for name, p in model.named_parameters() if name.startswith("enc_"))
    assert n == 2 * ENCODER_PARAMS


def test_full_model_param_counts():
    # encoders 28416; edge projection 262208; positions 66*64; three layers of 49984;
    # final norm 128; bridge 2080; deconvs 3*4192; classifier 66; quant head 260
    assert EaMtNet(ExperimentConfig()).store().count() == 459_910
    assert EaMtNet(ExperimentConfig(ablation="no-uncertainty")).store().count() == 459_910
    # 1x1 concat fusion 64*64+64 replaces the attention block
    assert EaMtNet(ExperimentConfig(ablation="no-eafa")).store().count() == 47_558


@pytest.mark.parametrize("size", [32, 64, 128])
def test_shape_contract(size):
    enc = Encoder()
    out = enc(torch.zeros(2, 1, size, size))
    assert out.shape == (2, 32, size // 8, size // 8)
    dec = Decoder(64)
    assert dec(torch.zeros(2, 64, size // 8, size // 8)).shape == (2, 2, size, size)


@pytest.mark.parametrize("shape", [(1, 1, 64, 32), (1, 1, 60, 60)])
def test_encoder_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        Encoder()(torch.zeros(shape))


def test_decoder_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        Decoder(64)(torch.zeros(1, 32, 8, 8))


def test_zero_input_gives_zero_features():
    torch.manual_seed(0)
    enc = Encoder()
    init_weights(enc)
    enc.eval()
    assert torch.count_nonzero(enc(torch.zeros(1, 1, 64, 64))) == 0


def test_batch_norm_inference_identity():
    bn = torch.nn.BatchNorm2d(4).eval()
    x = torch.randn(3, 4, 5, 5)
    x = (x - x.mean()) / x.std()
    # zero running mean and unit running variance: only the eps term remains
    torch.testing.assert_close(bn(x), x / np.sqrt(1 + bn.eps))


def test_argmax_scale_invariance():
    torch.manual_seed(1)
    dec = Decoder(8, 4).eval()
    logits = dec(torch.randn(1, 8, 4, 4))
    assert torch.equal(logits.argmax(1), (2 * logits).argmax(1))


def test_encoders_do_not_share_parameters():
    m = EaMtNet(ExperimentConfig())
    a = dict(m.enc_t2.named_parameters())
    b = dict(m.enc_dwi.named_parameters())
    assert a.keys() == b.keys()
    assert all(a[k].data_ptr() != b[k].data_ptr() for k in a)


def test_initialisation():
    m = EaMtNet(ExperimentConfig())
    conv = m.enc_t2.blocks[0][0]
    bound = np.sqrt(6 / 9)  # kaiming uniform, relu gain, fan_in = 9
    assert conv.weight.abs().max() <= bound
    assert torch.count_nonzero(conv.bias) == 0
    bn = m.enc_t2.blocks[0][1]
    assert torch.equal(bn.weight, torch.ones(16)) and torch.count_nonzero(bn.bias) == 0


def _small():
    cfg = ExperimentConfig(image_size=16, token_dim=4, channels=(4, 4, 4), decoder_channels=4, heads=2)
    torch.manual_seed(0)
    model = EaMtNet(cfg)
    g = torch.Generator().manual_seed(1)
    x = torch.rand(2, 1, 16, 16, generator=g)
    y = torch.rand(2, 1, 16, 16, generator=g)
    e = torch.rand(2, 2, 16, 16, generator=g)
    mask = torch.zeros(2, 16, 16, dtype=torch.long)
    mask[:, 3:9, 4:10] = 1
    return model, (x, y, e), mask


def test_backward_before_forward_is_an_error():
    model, _, _ = _small()
    with pytest.raises(ForwardStateError):
        model.backward(torch.zeros((), requires_grad=True))


def test_zero_quant_weight_gives_zero_head_gradient():
    model, inputs, mask = _small()
    out = model(*inputs)
    store = model.backward(joint_loss(out.logits, out.quant, mask, torch.rand(2, 4),
                                      weights=(1.0, 0.0, 0.1)).total)
    assert torch.count_nonzero(store["quant_head.weight"].grad) == 0
    assert torch.count_nonzero(store["quant_head.bias"].grad) == 0
    # every slot is filled, reached or not
    assert all(p.grad is not None for _, p in store.items())


def test_unreached_parameters_get_zero_gradient():
    model, inputs, _ = _small()
    out = model(*inputs)
    store = model.backward(out.quant.sum())
    assert torch.count_nonzero(store["decoder.classifier.weight"].grad) == 0
    assert torch.count_nonzero(store["fusion.edge_proj.weight"].grad) > 0


def test_gradients_are_reproducible():
    torch.use_deterministic_algorithms(True)
    try:
        grads = []
        for _ in range(2):
            model, inputs, mask = _small()
            out = model(*inputs)
            store = model.backward(joint_loss(out.logits, out.quant, mask, torch.full((2, 4), 0.3)).total)
            grads.append({k: v.clone() for k, v in store.grads().items()})
        assert all(torch.equal(grads[0][k], grads[1][k]) for k in grads[0])
    finally:
        torch.use_deterministic_algorithms(False)


def test_parameter_store_shapes_are_fixed():
    s1 = EaMtNet(ExperimentConfig()).store()
    s2 = EaMtNet(ExperimentConfig(seed=9)).store()
    assert s1.shapes() == s2.shapes()
    assert len(set(s1)) == len(s1)
