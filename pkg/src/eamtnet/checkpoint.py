"""Binary checkpoint format.

Layout::

    b"EAMT" | uint32 version | uint64 header length | UTF-8 JSON header | float32 payload

All integers and floats are little-endian. The header carries the
experiment config and a manifest of every stored tensor (name, shape, byte
offset into the payload, and whether it is a learnable parameter or a
running-statistics buffer).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .model import EaMtNet

MAGIC = b"EAMT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _stored_tensors(model: EaMtNet):
    params = {n for n, _ in model.named_parameters()}
    for name, t in model.state_dict().items():
        if t.is_floating_point():
            yield name, t, "param" if name in params else "buffer"


def manifest(model: EaMtNet) -> list[dict]:
    out, offset = [], 0
    for name, t, kind in _stored_tensors(model):
        out.append({"name": name, "shape": list(t.shape), "offset": offset, "kind": kind})
        offset += t.numel() * 4
    return out


def encode(model: EaMtNet, extra: dict | None = None) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "tensors": manifest(model),
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        for _, t, _ in _stored_tensors(model))
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(head)) + head + payload


def save_checkpoint(path: str | Path, model: EaMtNet, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode(model, extra))


def read_header(blob: bytes) -> tuple[dict, memoryview]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an EAMT checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from e
    payload = memoryview(blob)[16 + n:]
    expected = sum(int(np.prod(t["shape"], dtype=np.int64)) * 4 for t in header["tensors"])
    if len(payload) != expected:
        raise CheckpointError(f"payload is {len(payload)} bytes, manifest implies {expected}")
    return header, payload


def decode(blob: bytes, config: ExperimentConfig | None = None) -> tuple[EaMtNet, dict]:
    header, payload = read_header(blob)
    stored = ExperimentConfig.from_dict(
        {**header["config"], "channels": tuple(header["config"]["channels"])})
    if config is not None and config != stored:
        diff = sorted(k for k, v in config.to_dict().items() if stored.to_dict()[k] != v)
        raise CheckpointError(f"checkpoint config differs from the requested one in {diff}")
    model = EaMtNet(stored)
    want = manifest(model)
    if [(t["name"], t["shape"], t["kind"]) for t in want] != \
            [(t["name"], t["shape"], t["kind"]) for t in header["tensors"]]:
        raise CheckpointError("tensor manifest does not match the model built from the stored config")
    state = model.state_dict()
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=t["offset"])
        state[t["name"]].copy_(torch.from_numpy(arr.astype(np.float32).reshape(t["shape"])))
    return model, header


def load_checkpoint(path: str | Path, config: ExperimentConfig | None = None) -> tuple[EaMtNet, dict]:
    """Rebuild the model stored at ``path``; rejects a mismatched ``config``."""
    return decode(Path(path).read_bytes(), config)
