"""Training, head-only fine-tuning and prediction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from amcvit.dataset import ManifestEntry
from amcvit.errors import DivergedLoss, ShapeError
from amcvit.imaging import decode_png, upscale
from amcvit.rng import child_seed, make_rng
from amcvit.vit.checkpoint import Checkpoint, EpochRecord, save_checkpoint
from amcvit.vit.model import HEAD_NAMES, ParameterSet, ViTConfig, backward, cross_entropy, forward
from amcvit.vit.optim import DEFAULT_BETAS, DEFAULT_EPS, DEFAULT_LR, AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass
class ImageSet:
    """Images as ``(B, C, H, W)`` float32 in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    snrs_db: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.labels.size)

    @classmethod
    def from_manifest(cls, entries: list[ManifestEntry], root, config: ViTConfig) -> ImageSet:
        """Decode PNGs under ``root`` and upscale them by an integer factor to the model size."""
        root = Path(root)
        h, w = config.image_hw
        images = np.empty((len(entries), config.channels, h, w), dtype=np.float32)
        for i, e in enumerate(entries):
            img = decode_png((root / e.path).read_bytes())
            ih, iw = img.pixels.shape[:2]
            if h % ih or w % iw or h // ih != w // iw:
                raise ShapeError(f"{e.path} is {ih}x{iw}; cannot upscale by an integer factor to {h}x{w}")
            if h != ih:
                img = upscale(img, h // ih)
            px = img.pixels.transpose(2, 0, 1)
            if config.channels != 3:
                raise ShapeError(f"images are RGB but the model expects {config.channels} channels")
            images[i] = px / np.float32(255.0)
        labels = np.array([e.label for e in entries], dtype=np.int64)
        snrs = np.array([e.snr_db for e in entries], dtype=np.float64)
        return cls(images, labels, snrs)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = DEFAULT_LR
    betas: tuple[float, float] = DEFAULT_BETAS
    eps: float = DEFAULT_EPS
    seed: int = 0
    stop_at_val_accuracy: float | None = None
    checkpoint_path: Path | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Prediction:
    label: int
    predicted: int
    logits: np.ndarray


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def predict_logits(params: ParameterSet, config: ViTConfig, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [forward(images[s], params, config) for s in _batches(len(images), batch_size)]
    if not out:
        return np.zeros((0, config.n_classes), dtype=params.dtype)
    return np.concatenate(out)


def evaluate(params: ParameterSet, config: ViTConfig, data: ImageSet, batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy in eval mode."""
    logits = predict_logits(params, config, data.images, batch_size)
    loss = cross_entropy(logits.astype(np.float64), data.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.labels))
    return loss, acc


def _snapshot(config, params, adam, epoch, best_loss, best_acc, history, meta) -> Checkpoint:
    return Checkpoint(config, params.copy(), None if adam is None else adam.copy(), epoch,
                      best_loss, best_acc, list(history), dict(meta))


def train(config: ViTConfig, params: ParameterSet, train_data: ImageSet, val_data: ImageSet,
          tc: TrainConfig, adam: AdamState | None = None) -> Checkpoint:
    """Epoch loop with seeded shuffling and best-model checkpointing.

    A checkpoint is taken whenever validation loss reaches a new minimum or
    validation accuracy a new maximum. Returns the last checkpoint taken
    (the initial parameters when ``tc.epochs == 0``), carrying the full
    per-epoch history.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be non-empty")
    params.check(config)
    if tc.batch_size < 1:
        raise ValueError("batch_size must be positive")
    params = params.copy()
    adam = AdamState.zeros_like(params) if adam is None else adam.copy()
    history: list[EpochRecord] = []
    best_loss: float | None = None
    best_acc: float | None = None
    saved = _snapshot(config, params, adam, 0, None, None, history, tc.meta)

    for epoch in range(1, tc.epochs + 1):
        order = make_rng(child_seed(tc.seed, "shuffle", epoch)).permutation(len(train_data))
        total = 0.0
        for step, s in enumerate(_batches(len(order), tc.batch_size)):
            idx = order[s]
            loss, grads = backward(train_data.images[idx], train_data.labels[idx], params, config,
                                   train_mode=True, seed=child_seed(tc.seed, "dropout", epoch, step))
            if not math.isfinite(loss):
                raise DivergedLoss(f"non-finite training loss {loss} at epoch {epoch}, step {step}")
            adam_step(params, grads, adam, tc.lr, tc.betas, tc.eps)
            total += loss * len(idx)
        train_loss = total / len(order)
        val_loss, val_acc = evaluate(params, config, val_data)
        if not math.isfinite(val_loss):
            raise DivergedLoss(f"non-finite validation loss {val_loss} at epoch {epoch}")
        history.append(EpochRecord(epoch, train_loss, val_loss, val_acc))
        logger.info("epoch %d: train_loss=%.5f val_loss=%.5f val_acc=%.4f", epoch, train_loss, val_loss, val_acc)

        better_loss = best_loss is None or val_loss < best_loss
        better_acc = best_acc is None or val_acc > best_acc
        if better_loss:
            best_loss = val_loss
        if better_acc:
            best_acc = val_acc
        if better_loss or better_acc:
            saved = _snapshot(config, params, adam, epoch, best_loss, best_acc, history, tc.meta)
            if tc.checkpoint_path is not None:
                save_checkpoint(saved, tc.checkpoint_path)
        if tc.stop_at_val_accuracy is not None and val_acc >= tc.stop_at_val_accuracy:
            break

    saved.history = list(history)
    if tc.checkpoint_path is not None:
        save_checkpoint(saved, tc.checkpoint_path)
    return saved


def fine_tune(checkpoint: Checkpoint, train_data: ImageSet, val_data: ImageSet, tc: TrainConfig) -> Checkpoint:
    """Retrain only the classification head (weight and bias); everything else is frozen."""
    params = checkpoint.params.copy()
    params.freeze_all_but(HEAD_NAMES)
    meta = {**checkpoint.meta, **tc.meta, "base_epoch": checkpoint.epoch}
    tc = TrainConfig(**{**vars(tc), "meta": meta})
    result = train(checkpoint.config, params, train_data, val_data, tc)
    for name, frozen in result.params.frozen.items():
        if frozen and not np.array_equal(result.params[name], checkpoint.params[name]):
            raise RuntimeError(f"frozen array {name} changed during fine-tuning")
    return result


def predict(checkpoint: Checkpoint, data: ImageSet, batch_size: int = 256) -> list[Prediction]:
    """Eval-mode predictions; argmax ties go to the lowest class index."""
    logits = predict_logits(checkpoint.params, checkpoint.config, data.images, batch_size)
    predicted = np.argmax(logits, axis=1)
    return [Prediction(int(t), int(p), row) for t, p, row in zip(data.labels, predicted, logits)]
