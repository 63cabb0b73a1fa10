"""Cross-validated training, evaluation and prediction export."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .edges import sobel_edges
from .heads import denormalize_quant, entropy, normalize_quant
from .losses import joint_loss, metric_dsc, metric_mae
from .model import EaMtNet
from .phantom import ModalityPair, read_dataset, read_manifest

log = logging.getLogger(__name__)

INDICES = ("md_mm", "xo_mm", "yo_mm", "area_cm2")


class TrainingError(RuntimeError):
    pass


def make_folds(ids: list[str], k: int = 5, seed: int = 0) -> list[list[str]]:
    """Seeded shuffle of ``ids`` split into ``k`` disjoint, near-equal folds."""
    ids = list(ids)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} samples cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in chunk] for chunk in np.array_split(order, k)]


def set_deterministic(flag: bool = True) -> None:
    if flag:
        torch.set_num_threads(1)
    torch.use_deterministic_algorithms(flag)


@dataclass
class Batch:
    t2: torch.Tensor      # (B, 1, H, W)
    dwi: torch.Tensor     # (B, 1, H, W)
    edges: torch.Tensor   # (B, 2, H, W)
    mask: torch.Tensor    # (B, H, W) long
    quant: torch.Tensor   # (B, 4) normalized

    def __len__(self):
        return self.mask.shape[0]

    def take(self, idx) -> "Batch":
        idx = torch.as_tensor(np.asarray(idx), dtype=torch.long)
        return Batch(self.t2[idx], self.dwi[idx], self.edges[idx], self.mask[idx], self.quant[idx])


def to_batch(pairs: list[ModalityPair], image_size: int, spacing: float) -> Batch:
    t2 = np.stack([p.t2 for p in pairs]).astype(np.float32)
    dwi = np.stack([p.dwi for p in pairs]).astype(np.float32)
    edges = np.stack([[sobel_edges(a), sobel_edges(b)] for a, b in zip(t2, dwi)])
    q = np.stack([normalize_quant(p.quant.as_array(), image_size, spacing) for p in pairs])
    return Batch(
        torch.from_numpy(t2[:, None]), torch.from_numpy(dwi[:, None]), torch.from_numpy(edges),
        torch.from_numpy(np.stack([p.mask for p in pairs]).astype(np.int64)),
        torch.from_numpy(q.astype(np.float32)),
    )


def dihedral(batch: Batch, transpose: bool, flip_rows: bool, flip_cols: bool) -> Batch:
    """Apply one of the 8 square symmetries to images, masks and targets.

    Diameter and area are invariant; the centre moves with the pixels. Sobel
    magnitudes commute exactly with these maps, so edges are transformed
    rather than recomputed.
    """
    n = batch.mask.shape[-1]

    def tf(x):
        if transpose:
            x = x.transpose(-1, -2)
        if flip_rows:
            x = x.flip(-2)
        if flip_cols:
            x = x.flip(-1)
        return x

    q = batch.quant.clone()
    if transpose:
        q[:, [1, 2]] = q[:, [2, 1]]
    if flip_cols:
        q[:, 1] = (n - 1) / n - q[:, 1]
    if flip_rows:
        q[:, 2] = (n - 1) / n - q[:, 2]
    return Batch(tf(batch.t2), tf(batch.dwi), tf(batch.edges), tf(batch.mask), q)


@dataclass
class FoldResult:
    fold: int
    train_ids: list[str]
    val_ids: list[str]
    dsc: float
    mae: dict[str, float]
    history: list[dict] = field(default_factory=list)
    checkpoint: str | None = None


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold, 0xEA]).generate_state(1)[0])


def build_model(config: ExperimentConfig, seed: int) -> EaMtNet:
    torch.manual_seed(seed)
    return EaMtNet(config)


def _lr_at(config: ExperimentConfig, step: int, total: int) -> float:
    if config.lr_schedule == "constant":
        return config.lr
    frac = step / max(total, 1)
    return config.lr * config.lr_decay ** sum(frac >= m for m in (0.7, 0.9))


def fit(model: EaMtNet, data: Batch, config: ExperimentConfig, seed: int,
        val: Batch | None = None) -> list[dict]:
    """Minimise the joint loss with SGD + momentum; returns per-epoch records."""
    rng = np.random.default_rng(seed)
    opt = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    weights = (config.lambda_seg, config.lambda_qua, config.lambda_unc)
    n = len(data)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = steps_per_epoch * config.epochs
    history, step = [], 0
    for epoch in range(config.epochs):
        model.train()
        perm = rng.permutation(n)
        sums = np.zeros(4)
        for s in range(steps_per_epoch):
            idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
            batch = data.take(idx)
            if config.augment:
                batch = dihedral(batch, *rng.integers(0, 2, 3).astype(bool))
            for g in opt.param_groups:
                g["lr"] = _lr_at(config, step, total)
            try:
                out = model(batch.t2, batch.dwi, batch.edges)
                lb = joint_loss(out.logits, out.quant, batch.mask, batch.quant, weights,
                                use_uncertainty=config.use_uncertainty)
            except FloatingPointError as e:
                raise TrainingError(f"non-finite values at epoch {epoch}, step {step}: {e}") from e
            opt.zero_grad()
            lb.total.backward()
            opt.step()
            f = lb.as_floats()
            sums += [f["total"], f["l_seg"], f["l_qua"], f["l_unc"]]
            step += 1
        rec = dict(zip(("total", "l_seg", "l_qua", "l_unc"), map(float, sums / steps_per_epoch)))
        rec["epoch"] = epoch
        if val is not None:
            m = evaluate_batch(model, val, config)
            rec["val_dsc"] = float(np.mean(m["dsc"]))
            rec["val_md_mae"] = float(m["mae"][0])
        history.append(rec)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in rec.items()})
    return history


@torch.no_grad()
def infer(model: EaMtNet, data: Batch, chunk: int = 8):
    """Eval-mode probabilities (B, K, H, W) and normalized quant (B, 4)."""
    was = model.training
    model.eval()
    probs, quant = [], []
    try:
        for i in range(0, len(data), chunk):
            b = data.take(np.arange(i, min(i + chunk, len(data))))
            out = model(b.t2, b.dwi, b.edges)
            probs.append(out.probs)
            quant.append(out.quant)
    finally:
        model.train(was)
    return torch.cat(probs), torch.cat(quant)


def evaluate_batch(model: EaMtNet, data: Batch, config: ExperimentConfig) -> dict:
    probs, quant = infer(model, data, config.batch_size)
    pred_mask = (probs.argmax(1) == 1).numpy()
    target = data.mask.numpy().astype(bool)
    dsc = np.array([metric_dsc(p, t) for p, t in zip(pred_mask, target)])
    qp = denormalize_quant(quant.double().numpy(), config.image_size, config.spacing_mm)
    qt = denormalize_quant(data.quant.double().numpy(), config.image_size, config.spacing_mm)
    return {"dsc": dsc, "quant_pred": qp, "quant_true": qt,
            "abs_err": np.abs(qp - qt), "mae": metric_mae(qp, qt),
            "uncertainty": entropy(probs.double(), 1).mean((1, 2)).numpy()}


def _mean_std(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    return {"mean": float(x.mean()), "std": float(x.std(ddof=0))}


def _write_history(path: Path, history: list[dict]) -> None:
    if not history:
        path.write_text("")
        return
    keys = list(history[0])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(history)


def run_fold(config: ExperimentConfig, pairs: list[ModalityPair], folds: list[list[str]],
             k: int, out_dir: Path | None = None, track_val: bool = False) -> FoldResult:
    by_id = {p.sample_id: p for p in pairs}
    val_ids = folds[k]
    train_ids = [i for j, f in enumerate(folds) if j != k for i in f]
    train = to_batch([by_id[i] for i in train_ids], config.image_size, config.spacing_mm)
    val = to_batch([by_id[i] for i in val_ids], config.image_size, config.spacing_mm)
    seed = fold_seed(config.seed, k)
    model = build_model(config, seed)
    history = fit(model, train, config, seed, val if track_val else None)
    m = evaluate_batch(model, val, config)
    result = FoldResult(k, train_ids, val_ids, float(m["dsc"].mean()),
                        dict(zip(INDICES, map(float, m["mae"]))), history)
    if out_dir is not None:
        ckpt = out_dir / f"fold{k}.eamt"
        save_checkpoint(ckpt, model, extra={
            "fold": k, "train_ids": train_ids, "val_ids": val_ids,
            "val_dsc": result.dsc, "val_mae": result.mae})
        _write_history(out_dir / f"fold{k}_loss.csv", history)
        result.checkpoint = str(ckpt)
    return result


def _run_fold_star(args):
    config, pairs, folds, k, out_dir, track_val, deterministic = args
    set_deterministic(deterministic)
    return run_fold(config, pairs, folds, k, out_dir, track_val)


def cross_validate(config: ExperimentConfig, pairs: list[ModalityPair], out_dir=None,
                   deterministic: bool = False, workers: int = 1,
                   track_val: bool = False) -> dict:
    """Train and validate on every fold; returns the report dict."""
    if not pairs:
        raise TrainingError("empty dataset")
    for p in pairs:
        if p.shape != (config.image_size, config.image_size) or p.spacing != config.spacing_mm:
            raise TrainingError(f"{p.sample_id}: geometry {p.shape} @ {p.spacing} mm does not "
                                f"match config {config.image_size} @ {config.spacing_mm} mm")
    folds = make_folds([p.sample_id for p in pairs], config.folds, config.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
    jobs = [(config, pairs, folds, k, out, track_val, deterministic) for k in range(config.folds)]
    if workers > 1 and not deterministic:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_fold_star, jobs))
    else:
        set_deterministic(deterministic)
        results = [run_fold(*job[:-1]) for job in jobs]
    report = cv_report(config, results)
    if out is not None:
        write_report(out, report)
    return report


def cv_report(config: ExperimentConfig, results: list[FoldResult]) -> dict:
    return {
        "kind": "cross-validation",
        "ablation": config.ablation,
        "config": config.to_dict(),
        "folds": [{
            "fold": r.fold, "n_train": len(r.train_ids), "n_val": len(r.val_ids),
            "val_ids": r.val_ids, "dsc": r.dsc, "mae": r.mae, "checkpoint": r.checkpoint,
        } for r in results],
        "summary": {
            "dsc": _mean_std([r.dsc for r in results]),
            **{k: _mean_std([r.mae[k] for r in results]) for k in INDICES},
        },
    }


def write_report(out_dir: Path, report: dict) -> None:
    out_dir = Path(out_dir)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    with (out_dir / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std"])
        for k, v in report["summary"].items():
            w.writerow([k, repr(v["mean"]), repr(v["std"])])


def format_table(rows: dict[str, dict]) -> str:
    """Render summaries as a 'DSC(%) | MD | Xo | Yo | Area' table, mean +/- std."""
    head = f"{'':16s}{'DSC(%)':>16s}{'MD(mm)':>14s}{'Xo(mm)':>14s}{'Yo(mm)':>14s}{'Area(cm2)':>14s}"
    lines = [head]
    for name, s in rows.items():
        cells = [f"{100 * s['dsc']['mean']:.2f}±{100 * s['dsc']['std']:.2f}"]
        cells += [f"{s[k]['mean']:.2f}±{s[k]['std']:.2f}" for k in INDICES]
        lines.append(f"{name:16s}{cells[0]:>16s}" + "".join(f"{c:>14s}" for c in cells[1:]))
    return "\n".join(lines)


def train(config: ExperimentConfig, data_root, out_dir, deterministic: bool = False,
          workers: int = 1) -> dict:
    return cross_validate(config, read_dataset(data_root), out_dir, deterministic, workers,
                          track_val=True)


def _geometry_check(config: ExperimentConfig, data_root) -> None:
    m = read_manifest(data_root)
    if int(m["image_size"]) != config.image_size or float(m["spacing_mm"]) != config.spacing_mm:
        raise TrainingError(
            f"checkpoint expects {config.image_size}px @ {config.spacing_mm} mm, dataset has "
            f"{m['image_size']}px @ {m['spacing_mm']} mm")


def evaluate(checkpoint, data_root, out_dir=None, sample_ids: list[str] | None = None) -> dict:
    """Score a checkpoint on a dataset (or a subset of its ids)."""
    model, header = load_checkpoint(checkpoint)
    config = model.config
    _geometry_check(config, data_root)
    pairs = read_dataset(data_root)
    if sample_ids is not None:
        by_id = {p.sample_id: p for p in pairs}
        missing = [i for i in sample_ids if i not in by_id]
        if missing:
            raise KeyError(f"unknown sample ids: {missing[:5]}")
        pairs = [by_id[i] for i in sample_ids]
    m = evaluate_batch(model, to_batch(pairs, config.image_size, config.spacing_mm), config)
    report = {
        "kind": "evaluation",
        "checkpoint": str(checkpoint),
        "n_samples": len(pairs),
        "dsc": float(m["dsc"].mean()),
        "mae": dict(zip(INDICES, map(float, m["mae"]))),
        "summary": {"dsc": _mean_std(m["dsc"]),
                    **{k: _mean_std(m["abs_err"][:, i]) for i, k in enumerate(INDICES)}},
        "per_sample": [{"id": p.sample_id, "dsc": float(d),
                        **{k: float(e) for k, e in zip(INDICES, err)}}
                       for p, d, err in zip(pairs, m["dsc"], m["abs_err"])],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(report, indent=2))
        with (out / "metrics.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "dsc", *INDICES])
            for row in report["per_sample"]:
                w.writerow([row["id"], row["dsc"], *(row[k] for k in INDICES)])
    return report
