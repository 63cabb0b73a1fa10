"""Sobel edge-magnitude maps used as the boundary prior."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass
class EdgePair:
    edge_t2: np.ndarray
    edge_dwi: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.edge_t2, self.edge_dwi])


SMOOTH = (1.0, 2.0, 1.0)


def sobel_edges(image: np.ndarray) -> np.ndarray:
    """Gradient magnitude sqrt(Gx^2 + Gy^2) with edge-replicated borders.

    Gx is the correlation with ``SOBEL_X``, Gy with its transpose. Each is
    evaluated as a weighted sum of opposite-tap differences, which makes the
    result exactly zero on constant input and exactly transpose-covariant.
    Floating inputs keep their dtype; others are promoted to float64.
    """
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < 3:
        raise ValueError(f"sobel_edges needs a 2-D image of at least 3x3, got shape {image.shape}")
    if not np.issubdtype(image.dtype, np.floating):
        image = image.astype(np.float64)
    h, w = image.shape
    p = np.pad(image, 1, mode="edge")
    gx = np.zeros((h, w), dtype=image.dtype)
    gy = np.zeros((h, w), dtype=image.dtype)
    for i, wt in enumerate(SMOOTH):
        wt = image.dtype.type(wt)
        gx += wt * (p[i:i + h, 2:2 + w] - p[i:i + h, 0:w])
        gy += wt * (p[2:2 + h, i:i + w] - p[0:h, i:i + w])
    return np.sqrt(gx * gx + gy * gy)


def edge_pair(t2: np.ndarray, dwi: np.ndarray) -> EdgePair:
    return EdgePair(sobel_edges(t2), sobel_edges(dwi))
