import math

import numpy as np
import pytest
import torch

from eamtnet.config import ExperimentConfig
from eamtnet.model import EaMtNet, pair_tensors, predict
from eamtnet.phantom import generate_phantom


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return EaMtNet(ExperimentConfig())


@pytest.fixture(scope="module")
def pair():
    return generate_phantom(5)


def test_predict_contract(model, pair):
    out = predict(pair, model)
    assert out.seg_probs.shape == (64, 64, 2)
    assert out.seg_mask.shape == (64, 64) and out.seg_mask.dtype == bool
    assert out.quant_pred.shape == (4,)
    np.testing.assert_allclose(out.seg_probs.sum(-1), 1.0, atol=1e-6)
    assert (out.uncertainty >= 0).all() and (out.uncertainty <= 1.0).all()
    assert np.array_equal(out.seg_mask, out.seg_probs[..., 1] > out.seg_probs[..., 0])


def test_confident_pixels_have_low_uncertainty(model, pair):
    out = predict(pair, model)
    confident = out.seg_probs.max(-1) >= 0.99
    # H(0.99, 0.01) = 0.0808 bits
    assert (out.uncertainty[confident] <= 0.081).all()


def test_predict_restores_mode_and_is_repeatable(model, pair):
    model.train()
    a = predict(pair, model)
    assert model.training
    b = predict(pair, model)
    assert np.array_equal(a.seg_probs, b.seg_probs)
    model.eval()


def test_predict_rejects_wrong_size(model):
    with pytest.raises(ValueError):
        predict(generate_phantom(0, image_size=32), model)


def test_softmax_shift_invariance():
    logits = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    assert torch.allclose(torch.softmax(logits, 1), torch.softmax(logits + 7.5, 1))


def test_forward_shapes(model, pair):
    model.eval()
    with torch.no_grad():
        raw = model(*pair_tensors([pair, pair]))
    assert raw.logits.shape == (2, 2, 64, 64) and raw.quant.shape == (2, 4)
    assert torch.equal(raw.logits[0], raw.logits[1])
    assert math.isclose(float(raw.probs.sum(1).mean()), 1.0, rel_tol=1e-6)


def test_no_eafa_model_runs(pair):
    m = EaMtNet(ExperimentConfig(ablation="no-eafa")).eval()
    out = predict(pair, m)
    assert out.seg_probs.shape == (64, 64, 2)
