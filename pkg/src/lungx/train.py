"""Training loop: balanced sampling, combined loss, clipping, AdamW, one-cycle LR, AUC early stopping."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from . import metrics as M
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .data.augment import augment_array, eval_array, normalize
from .data.manifest import Manifest, stratified_split
from .data.pgm import read_pgm
from .data.sampler import weighted_sampler
from .model import LungX, build_model
from .objectives import combined_loss
from .optim import AdamW, clip_grad_norm, global_grad_norm, lr_at
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

RUNLOG_HEADER = ("epoch", "train_loss", "train_acc", "train_f1", "train_auc",
                 "val_loss", "val_acc", "val_f1", "val_auc", "lr")


class TrainingError(RuntimeError):
    pass


class ImageSet:
    """Decoded images of a manifest, held in memory."""

    def __init__(self, manifest: Manifest):
        if len(manifest) == 0:
            raise ValueError("manifest is empty")
        self.manifest = manifest
        self.images = [read_pgm(manifest.image_path(i)) for i in range(len(manifest))]
        self.labels = manifest.labels

    def __len__(self) -> int:
        return len(self.images)


def to_batch(arrays: Sequence[np.ndarray], channels: int) -> np.ndarray:
    x = np.stack(arrays).astype(np.float32)[:, None]
    return np.repeat(x, channels, axis=1) if channels > 1 else x


def eval_inputs(images: ImageSet, config: TrainConfig) -> np.ndarray:
    return np.stack([
        normalize(eval_array(img, config.image_size, config.eval_resize_ratio),
                  config.norm_mean, config.norm_std)
        for img in images.images
    ])


def predict(model: LungX, inputs: np.ndarray, batch_size: int, channels: int) -> np.ndarray:
    """Eval-mode probabilities for preprocessed ``[N, H, W]`` inputs."""
    model.eval()
    out = []
    with no_grad():
        for lo in range(0, len(inputs), batch_size):
            x = Tensor(to_batch(inputs[lo:lo + batch_size], channels))
            out.append(model(x).data.reshape(-1))
    return np.concatenate(out)


def evaluate_model(model: LungX, images: ImageSet, config: TrainConfig) -> M.MetricReport:
    probs = predict(model, eval_inputs(images, config), config.eval_batch_size,
                    model.config.backbone.in_channels)
    loss = float(combined_loss(Tensor(probs), images.labels, config.loss()).data)
    return M.report(probs, images.labels, loss=loss)


@dataclass
class EarlyStopping:
    patience: int = 7
    min_delta: float = 1e-6
    best_auc: float = -math.inf
    best_epoch: int = 0
    stale: int = 0

    def update(self, epoch: int, auc: float) -> bool:
        """Record an epoch's AUC; return True on strict improvement."""
        if auc > self.best_auc + self.min_delta:
            self.best_auc, self.best_epoch, self.stale = auc, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass
class RunLog:
    rows: List[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epochs must increase monotonically")
        self.rows.append(row)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUNLOG_HEADER)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in RUNLOG_HEADER[1:]])

    @staticmethod
    def read_csv(path: Union[str, Path]) -> "RunLog":
        with open(path, encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in reader]
        return RunLog(rows)


@dataclass
class TrainResult:
    best: Checkpoint
    runlog: RunLog
    model: LungX
    grad_norms: List[float] = field(default_factory=list)  # pre-clip
    clipped_norms: List[float] = field(default_factory=list)  # post-clip
    stopped_early: bool = False


def _train_metrics(probs: np.ndarray, labels: np.ndarray) -> M.MetricReport:
    return M.report(probs, labels)


def train(
    config: TrainConfig,
    train_manifest: Manifest,
    val_manifest: Manifest,
    out_dir: Union[str, Path, None] = None,
    validate: Optional[Callable[[LungX, int], M.MetricReport]] = None,
) -> TrainResult:
    """Run the full protocol; ``validate`` replaces the validation pass (used for testing)."""
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_set = ImageSet(train_manifest)
    val_set = ImageSet(val_manifest)
    model = build_model(config.model(), config.seed)
    channels = model.config.backbone.in_channels
    params = model.parameters()
    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
    schedule = config.schedule(max(config.epochs * steps_per_epoch, 1))
    opt = AdamW(params, lr=lr_at(0, schedule), weight_decay=config.weight_decay)
    sampler = weighted_sampler(train_set.labels, np.random.default_rng([config.seed, 1]))
    augment = config.augment()
    loss_cfg = config.loss()
    extra = {"train_config": config.to_dict()}

    def run_validation(epoch: int) -> M.MetricReport:
        return validate(model, epoch) if validate is not None else evaluate_model(model, val_set, config)

    runlog = RunLog()
    stopper = EarlyStopping(config.patience, config.min_delta)
    result_norms, result_clipped = [], []

    if config.epochs == 0:
        best = Checkpoint.from_model(model, 0, run_validation(0), extra)
        if out is not None:
            save_checkpoint(out / "best.ckpt", best)
            runlog.write_csv(out / "log.csv")
        return TrainResult(best, runlog, model)

    best: Optional[Checkpoint] = None
    stopped = False
    step = 0
    lr = schedule.start_lr
    for epoch in range(1, config.epochs + 1):
        model.train()
        seen_probs, seen_labels, seen_loss = [], [], []
        for k in range(steps_per_epoch):
            idx = [next(sampler) for _ in range(config.batch_size)]
            rng = np.random.default_rng([config.seed, 2, epoch, k])
            x = Tensor(to_batch(
                [normalize(augment_array(train_set.images[i], augment, rng), config.norm_mean, config.norm_std)
                 for i in idx], channels))
            y = train_set.labels[idx]
            lr = lr_at(step, schedule)
            opt.lr = lr
            probs = model(x)
            loss = combined_loss(probs, y, loss_cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {k} (global step {step})")
            opt.zero_grad()
            loss.backward()
            result_norms.append(clip_grad_norm(params, config.max_grad_norm))
            result_clipped.append(global_grad_norm(params))
            opt.step()
            step += 1
            seen_probs.append(probs.data.reshape(-1))
            seen_labels.append(y)
            seen_loss.append(value)
        tr = _train_metrics(np.concatenate(seen_probs), np.concatenate(seen_labels))
        va = run_validation(epoch)
        if va.auc is None:
            raise TrainingError("validation set must contain both classes to compute AUC")
        runlog.append({
            "epoch": epoch, "train_loss": float(np.mean(seen_loss)), "train_acc": tr.accuracy,
            "train_f1": tr.f1, "train_auc": tr.auc if tr.auc is not None else float("nan"),
            "val_loss": va.loss if va.loss is not None else float("nan"), "val_acc": va.accuracy,
            "val_f1": va.f1, "val_auc": va.auc, "lr": lr,
        })
        log.info("epoch %d  train loss %.4f auc %s | val loss %s acc %.4f auc %.4f",
                 epoch, np.mean(seen_loss), tr.auc, va.loss, va.accuracy, va.auc)
        if stopper.update(epoch, va.auc):
            best = Checkpoint.from_model(model, epoch, va, extra)
            if out is not None:
                save_checkpoint(out / "best.ckpt", best)
        if out is not None:
            runlog.write_csv(out / "log.csv")
        if stopper.should_stop:
            stopped = True
            log.info("early stop after epoch %d (best epoch %d, AUC %.4f)",
                     epoch, stopper.best_epoch, stopper.best_auc)
            break
    return TrainResult(best, runlog, model, result_norms, result_clipped, stopped)


def split_manifest(manifest: Manifest, val_fraction: float, seed: int):
    """Class-stratified train/validation split."""
    tr, va = stratified_split(manifest.labels, val_fraction, np.random.default_rng([seed, 3]))
    return manifest.subset(tr), manifest.subset(va)
