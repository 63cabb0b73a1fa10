"""Train briefly, then export mask, entropy map and indices for one sample.

Entropy is highest along the lesion rim, where the two classes compete.
"""
import tempfile
from pathlib import Path

import numpy as np

from eamtnet import ExperimentConfig, generate_dataset, write_dataset
from eamtnet.export import predict_one
from eamtnet.model import predict
from eamtnet.training import build_model, fit, to_batch


def main(out="demos_out/predict"):
    cfg = ExperimentConfig(epochs=20)
    pairs = generate_dataset(48, 64, 1.0, seed=1)
    train, test = pairs[:40], pairs[40:]
    model = build_model(cfg, 0)
    fit(model, to_batch(train, 64, 1.0), cfg, seed=0)

    res = predict(test[0], model)
    rim = test[0].mask ^ np.roll(test[0].mask, 1, 1)
    print(f"mean entropy on the rim {res.uncertainty[rim].mean():.3f} bits, "
          f"elsewhere {res.uncertainty[~rim].mean():.3f} bits")

    with tempfile.TemporaryDirectory() as tmp:
        from eamtnet.checkpoint import save_checkpoint

        write_dataset(test, Path(tmp) / "data")
        save_checkpoint(Path(tmp) / "m.eamt", model)
        record = predict_one(Path(tmp) / "m.eamt", Path(tmp) / "data", test[0].sample_id, out)
    print({k: round(v, 2) for k, v in record.items() if isinstance(v, float)})
    print("truth", record["truth"])
    print("files in", out, sorted(p.name for p in Path(out).iterdir()))


if __name__ == "__main__":
    main()
