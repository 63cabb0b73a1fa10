"""Per-sample prediction export: mask, uncertainty, quantification, overlay figure."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint
from .model import predict
from .phantom import ModalityPair, read_manifest, read_sample
from .training import INDICES, _geometry_check


def uncertainty_to_u16(unc: np.ndarray, num_classes: int = 2) -> np.ndarray:
    scale = 65535.0 / math.log2(num_classes)
    return np.rint(np.clip(unc * scale, 0, 65535)).astype(np.uint16)


def overlay_figure(pair: ModalityPair, seg_mask: np.ndarray, uncertainty: np.ndarray, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 5, figsize=(15, 3.3))
    panels = [
        ("T2", pair.t2, "gray"),
        ("DWI", pair.dwi, "gray"),
        ("ground truth", pair.mask, "gray"),
        ("prediction", seg_mask, "gray"),
        ("uncertainty (bits)", uncertainty, "magma"),
    ]
    for ax, (title, img, cmap) in zip(axes, panels):
        im = ax.imshow(img, cmap=cmap, interpolation="nearest")
        ax.set_title(title)
        ax.axis("off")
    for ax in axes[2:4]:
        ax.contour(pair.mask, levels=[0.5], colors="lime", linewidths=0.8)
    fig.colorbar(im, ax=axes[-1], fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def predict_one(checkpoint, data_root, sample_id: str, out_dir) -> dict:
    """Write mask.png, uncertainty.png, quant.json and overlay.png for one sample."""
    model, _ = load_checkpoint(checkpoint)
    cfg = model.config
    _geometry_check(cfg, data_root)
    manifest = read_manifest(data_root)
    if sample_id not in manifest["samples"]:
        raise KeyError(f"unknown sample id {sample_id!r}")
    pair = read_sample(data_root, sample_id, float(manifest["spacing_mm"]), int(manifest["image_size"]))
    out = predict(pair, model)
    quant = out.quant_physical(cfg.image_size, cfg.spacing_mm)
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out.seg_mask.astype(np.uint8) * 255).save(d / "mask.png")
    Image.fromarray(uncertainty_to_u16(out.uncertainty, cfg.num_classes)).save(d / "uncertainty.png")
    record = {"id": sample_id, **{k: float(v) for k, v in zip(INDICES, quant)},
              "truth": pair.quant.to_json()}
    (d / "quant.json").write_text(json.dumps(record, indent=2))
    overlay_figure(pair, out.seg_mask, out.uncertainty, d / "overlay.png")
    return record
