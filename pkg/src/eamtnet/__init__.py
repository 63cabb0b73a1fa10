"""Edge-aware multi-task network for paired-modality lesion analysis."""
from .config import ExperimentConfig
from .edges import EdgePair, edge_pair, sobel_edges
from .heads import MultiTaskOutput, entropy_map
from .losses import joint_loss, metric_dsc, metric_mae, quant_l1, soft_dice
from .model import EaMtNet, predict
from .phantom import (ModalityPair, QuantRecord, derive_quant, generate_dataset, generate_phantom,
                      read_dataset, write_dataset)

__all__ = [
    "EaMtNet", "EdgePair", "ExperimentConfig", "ModalityPair", "MultiTaskOutput", "QuantRecord",
    "derive_quant", "edge_pair", "entropy_map", "generate_dataset", "generate_phantom",
    "joint_loss", "metric_dsc", "metric_mae", "predict", "quant_l1", "read_dataset",
    "sobel_edges", "soft_dice", "write_dataset",
]
__version__ = "0.1.0"
