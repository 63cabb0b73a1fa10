"""Synthetic paired-modality lesion phantoms and their ground-truth measurements.

Each sample holds a T2-like image (anatomy-rich, lesion faint and blurred),
a DWI-like image (lesion bright with a sharp-ish rim), the binary lesion mask
and the four reference indices measured from that mask.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

DATASET_VERSION = 1
NOISE_SIGMA = 0.03
U16_MAX = 65535


class DegenerateMaskError(ValueError):
    pass


class DatasetError(Exception):
    pass


class MissingFileError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class QuantMismatchError(DatasetError):
    pass


@dataclass(frozen=True)
class QuantRecord:
    """Max diameter and centre in mm, area in cm^2."""

    md: float
    xo: float
    yo: float
    area: float

    def as_array(self) -> np.ndarray:
        return np.array([self.md, self.xo, self.yo, self.area], dtype=np.float64)

    def to_json(self) -> dict:
        return {"md_mm": self.md, "xo_mm": self.xo, "yo_mm": self.yo, "area_cm2": self.area}

    @classmethod
    def from_json(cls, d: dict) -> "QuantRecord":
        return cls(md=float(d["md_mm"]), xo=float(d["xo_mm"]),
                   yo=float(d["yo_mm"]), area=float(d["area_cm2"]))


@dataclass
class ModalityPair:
    t2: np.ndarray
    dwi: np.ndarray
    mask: np.ndarray
    quant: QuantRecord
    spacing: float = 1.0
    sample_id: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def validate(self) -> None:
        """Raise if arrays disagree in shape or ``quant`` drifts from the mask."""
        if not (self.t2.shape == self.dwi.shape == self.mask.shape) or self.mask.ndim != 2:
            raise ShapeMismatchError(
                f"{self.sample_id}: t2 {self.t2.shape}, dwi {self.dwi.shape}, mask {self.mask.shape}")
        if not self.mask.any():
            raise DegenerateMaskError(f"{self.sample_id}: empty mask")
        ref = derive_quant(self.mask, self.spacing)
        tol = 0.5 * self.spacing
        n_boundary = int(boundary_pixels(self.mask).sum())
        area_tol = self.spacing ** 2 * n_boundary / 100.0
        q = self.quant
        bad = [name for name, err, t in (
            ("md", abs(q.md - ref.md), tol),
            ("xo", abs(q.xo - ref.xo), tol),
            ("yo", abs(q.yo - ref.yo), tol),
            ("area", abs(q.area - ref.area), area_tol),
        ) if not err <= t]
        if bad:
            raise QuantMismatchError(f"{self.sample_id}: stored quant disagrees with mask on {bad}")


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-connected background neighbour."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def _max_sq_distance(pts: np.ndarray) -> int:
    d = pts[:, None, :] - pts[None, :, :]
    return int((d * d).sum(-1).max())


def derive_quant(mask: np.ndarray, spacing: float = 1.0) -> QuantRecord:
    """Measure max diameter, centroid and area of a binary mask.

    Pixel (r, c) is taken to sit at (x, y) = (c, r) * spacing. The diameter is
    the largest centre-to-centre distance between foreground pixels; it is
    found on the convex hull vertices, which always contain a farthest pair.
    """
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    n = rows.size
    if n < 2:
        raise DegenerateMaskError(f"mask has {n} foreground pixel(s), need at least 2")
    pts = np.stack([cols, rows], axis=1).astype(np.int64)
    try:
        hull = ConvexHull(pts)
        cand = pts[hull.vertices]
    except QhullError:
        # collinear or otherwise flat point sets
        cand = pts
    md = float(np.sqrt(_max_sq_distance(cand))) * spacing
    xo = float(cols.mean()) * spacing
    yo = float(rows.mean()) * spacing
    area = n * spacing ** 2 / 100.0
    return QuantRecord(md=md, xo=xo, yo=yo, area=area)


def _to_u16_grid(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * U16_MAX).astype(np.uint16)


def _from_u16(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / np.float32(U16_MAX)


def _ellipse(shape, cy, cx, a, b, theta) -> np.ndarray:
    rr, cc = np.mgrid[:shape[0], :shape[1]].astype(np.float64)
    dy, dx = rr - cy, cc - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_phantom(seed: int, image_size: int = 64, spacing: float = 1.0) -> ModalityPair:
    """Draw one phantom pair. Output is a pure function of the arguments.

    Images come back already quantized to the 16-bit PNG grid so that a
    write/read cycle through :func:`write_dataset` is bit-exact.
    """
    if image_size < 32:
        raise ValueError(f"image_size must be >= 32 for three 2x downsamplings, got {image_size}")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    rng = np.random.default_rng(seed)
    n = image_size
    shape = (n, n)
    rr, cc = np.mgrid[:n, :n].astype(np.float64)

    # background anatomy: smooth blobs, mostly visible in T2
    anatomy = np.zeros(shape)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, n, size=2)
        sy, sx = rng.uniform(n / 10, n / 4, size=2)
        amp = rng.uniform(0.15, 0.35)
        anatomy += amp * np.exp(-0.5 * (((rr - cy) / sy) ** 2 + ((cc - cx) / sx) ** 2))

    a_min, a_max = n / 16, n / 5
    a, b = rng.uniform(a_min, a_max, size=2)
    theta = rng.uniform(0, np.pi)
    margin = max(a, b) + 2
    cy, cx = rng.uniform(margin, n - 1 - margin, size=2)
    mask = _ellipse(shape, cy, cx, a, b, theta)

    lesion = mask.astype(np.float64)
    t2 = 0.25 + anatomy + 0.12 * ndimage.gaussian_filter(lesion, 2.0)
    dwi = 0.15 + 0.3 * anatomy + 0.55 * ndimage.gaussian_filter(lesion, 0.6)
    t2 += rng.normal(0.0, NOISE_SIGMA, shape)
    dwi += rng.normal(0.0, NOISE_SIGMA, shape)

    return ModalityPair(
        t2=_from_u16(_to_u16_grid(t2)),
        dwi=_from_u16(_to_u16_grid(dwi)),
        mask=mask,
        quant=derive_quant(mask, spacing),
        spacing=float(spacing),
        sample_id=f"seed{seed}",
    )


def sample_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def generate_dataset(n: int, image_size: int = 64, spacing: float = 1.0,
                     seed: int = 0) -> list[ModalityPair]:
    pairs = []
    for i in range(n):
        p = generate_phantom(sample_seed(seed, i), image_size, spacing)
        p.sample_id = f"s{i:04d}"
        pairs.append(p)
    return pairs


def _write_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path)


def _read_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"missing file {path}")
    with Image.open(path) as im:
        return np.array(im)


def write_dataset(pairs: list[ModalityPair], root: str | os.PathLike, seed: int | None = None) -> dict:
    """Write ``pairs`` under ``root`` and return the manifest dict."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        raise DatasetError(f"{root} is not empty")
    if not pairs:
        raise DatasetError("no samples to write")
    spacing = pairs[0].spacing
    size = pairs[0].shape[0]
    ids = [p.sample_id for p in pairs]
    if len(set(ids)) != len(ids) or any(not i for i in ids):
        raise DatasetError("sample ids must be unique and non-empty")
    (root / "samples").mkdir(parents=True, exist_ok=True)
    for p in pairs:
        if p.spacing != spacing or p.shape != (size, size):
            raise ShapeMismatchError(f"{p.sample_id}: geometry differs from the first sample")
        d = root / "samples" / p.sample_id
        d.mkdir()
        _write_png(d / "t2.png", _to_u16_grid(p.t2))
        _write_png(d / "dwi.png", _to_u16_grid(p.dwi))
        _write_png(d / "mask.png", p.mask.astype(np.uint8) * 255)
        (d / "quant.json").write_text(json.dumps(p.quant.to_json(), indent=2))
    manifest = {
        "version": DATASET_VERSION,
        "spacing_mm": spacing,
        "image_size": size,
        "samples": ids,
        "seed": seed,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_manifest(root: str | os.PathLike) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise MissingFileError(f"missing manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed manifest: {e}") from e
    for key in ("version", "spacing_mm", "image_size", "samples"):
        if key not in manifest:
            raise DatasetError(f"manifest lacks {key!r}")
    if manifest["version"] != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {manifest['version']}")
    return manifest


def read_sample(root: str | os.PathLike, sample_id: str, spacing: float, image_size: int) -> ModalityPair:
    d = Path(root) / "samples" / sample_id
    t2 = _read_png(d / "t2.png")
    dwi = _read_png(d / "dwi.png")
    mask = _read_png(d / "mask.png")
    qpath = d / "quant.json"
    if not qpath.is_file():
        raise MissingFileError(f"missing file {qpath}")
    for name, arr in (("t2", t2), ("dwi", dwi), ("mask", mask)):
        if arr.shape != (image_size, image_size):
            raise ShapeMismatchError(f"{sample_id}/{name}: shape {arr.shape}, manifest says {image_size}")
    pair = ModalityPair(
        t2=_from_u16(t2), dwi=_from_u16(dwi), mask=mask > 0,
        quant=QuantRecord.from_json(json.loads(qpath.read_text())),
        spacing=spacing, sample_id=sample_id,
    )
    pair.validate()
    return pair


def read_dataset(root: str | os.PathLike) -> list[ModalityPair]:
    m = read_manifest(root)
    return [read_sample(root, sid, float(m["spacing_mm"]), int(m["image_size"]))
            for sid in m["samples"]]
