"""Confusion matrices, precision/recall/F1 reports and convergence logs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from amcvit.errors import EmptyMatrix, LabelOutOfRange, MalformedRecord
from amcvit.imaging import RgbImage, encode_png, upscale
from amcvit.modem import scheme_names
from amcvit.vit.checkpoint import EpochRecord

LOG_FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy")


@dataclass
class ConfusionMatrix:
    """``counts[true, predicted]``."""

    counts: np.ndarray
    class_names: list[str] = field(default_factory=scheme_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    undefined_precision: list[int] = field(default_factory=list)
    undefined_recall: list[int] = field(default_factory=list)


def _pairs(records):
    for r in records:
        if isinstance(r, tuple):
            yield int(r[0]), int(r[1])
        else:
            yield int(r.label), int(r.predicted)


def confusion(records, n_classes: int = 10, class_names=None) -> ConfusionMatrix:
    """Tally (true, predicted) pairs from tuples or objects with ``label``/``predicted``."""
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in _pairs(records):
        if not (0 <= t < n_classes and 0 <= p < n_classes):
            raise LabelOutOfRange(f"record ({t}, {p}) outside [0, {n_classes})")
        counts[t, p] += 1
    names = list(class_names) if class_names is not None else scheme_names()[:n_classes]
    if len(names) != n_classes:
        names = [str(i) for i in range(n_classes)]
    return ConfusionMatrix(counts, names)


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and macro scores.

    Undefined precision (class never predicted) or recall (class absent) is
    scored 0, listed in ``undefined_*``, and still counted in the macro mean.
    """
    counts = np.asarray(cm.counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no records")
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision, recall, f1 = [], [], []
    undef_p, undef_r = [], []
    for k in range(counts.shape[0]):
        if predicted[k] == 0:
            undef_p.append(k)
            precision.append(0.0)
        else:
            precision.append(tp[k] / predicted[k])
        if actual[k] == 0:
            undef_r.append(k)
            recall.append(0.0)
        else:
            recall.append(tp[k] / actual[k])
        denom = predicted[k] + actual[k]
        # 2TP / (2TP + FP + FN) equals the harmonic mean of precision and recall
        f1.append(2.0 * tp[k] / denom if denom else 0.0)
    n = counts.shape[0]
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=[float(x) for x in precision],
        recall=[float(x) for x in recall],
        f1=[float(x) for x in f1],
        support=[int(x) for x in actual],
        macro_precision=float(sum(precision) / n),
        macro_recall=float(sum(recall) / n),
        macro_f1=float(sum(f1) / n),
        undefined_precision=undef_p,
        undefined_recall=undef_r,
    )


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted", *cm.class_names])
        for name, row in zip(cm.class_names, cm.counts):
            w.writerow([name, *(int(c) for c in row)])


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    counts = np.array([[int(c) for c in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts, names)


def confusion_heatmap(cm: ConfusionMatrix, cell_px: int = 16) -> RgbImage:
    """Grayscale heatmap, intensity proportional to row-normalized counts."""
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    norm = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    gray = np.floor(255.0 * norm + 0.5).astype(np.uint8)
    return upscale(RgbImage(np.repeat(gray[:, :, None], 3, axis=2)), cell_px)


def write_confusion_png(cm: ConfusionMatrix, path, cell_px: int = 16) -> None:
    Path(path).write_bytes(encode_png(confusion_heatmap(cm, cell_px)))


def write_convergence_log(records, path) -> None:
    """CSV with a header row; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in records:
            w.writerow([int(r.epoch), repr(float(r.train_loss)), repr(float(r.val_loss)), repr(float(r.val_accuracy))])


def read_convergence_log(path) -> list[EpochRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return records
        if tuple(header) != LOG_FIELDS:
            raise MalformedRecord(f"expected header {','.join(LOG_FIELDS)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LOG_FIELDS):
                raise MalformedRecord(f"expected {len(LOG_FIELDS)} fields, got {len(row)}", lineno)
            try:
                rec = EpochRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3]))
            except ValueError as exc:
                raise MalformedRecord(str(exc), lineno) from None
            if not all(math.isfinite(x) for x in (rec.train_loss, rec.val_loss, rec.val_accuracy)):
                raise MalformedRecord("non-finite value", lineno)
            records.append(rec)
    return records
