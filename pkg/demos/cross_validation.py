"""A small end-to-end cross-validation run.

Uses a reduced dataset and epoch count so it finishes in a few
minutes; the full protocol is ``eamt train`` with default settings.
The attention-based fusion needs more epochs than the plain 1x1 concat to
get going, so at this budget the ablation rows are not a fair comparison.
"""
import tempfile

from eamtnet import ExperimentConfig, generate_dataset
from eamtnet.training import cross_validate, format_table


def main(n=100, epochs=15):
    pairs = generate_dataset(n, 64, 1.0, seed=0)
    rows = {}
    with tempfile.TemporaryDirectory() as tmp:
        for ablation in ("none", "no-eafa", "no-uncertainty"):
            cfg = ExperimentConfig(epochs=epochs, ablation=ablation)
            report = cross_validate(cfg, pairs, f"{tmp}/{ablation}")
            rows[ablation] = report["summary"]
            print(f"{ablation}: fold DSCs {[round(f['dsc'], 3) for f in report['folds']]}")
    print(format_table(rows))


if __name__ == "__main__":
    main()
