"""Checkpoint container.

Layout::

    b"AMCVITCK"            8-byte magic
    uint32 LE              format version
    uint64 LE              header length in bytes
    header                 UTF-8 JSON: config, epoch, metrics, history, array table
    payload                little-endian float32 arrays, offsets relative to payload start

The array table lists ``{name, shape, offset, nbytes}`` for parameters
(``param/<name>``) and Adam moments (``adam.m/<name>``, ``adam.v/<name>``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from amcvit.errors import AmcError, ShapeError
from amcvit.vit.model import ParameterSet, ViTConfig
from amcvit.vit.optim import AdamState

MAGIC = b"AMCVITCK"
VERSION = 1


class CheckpointError(AmcError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class Checkpoint:
    config: ViTConfig
    params: ParameterSet
    adam: AdamState | None = None
    epoch: int = 0
    best_val_loss: float | None = None
    best_val_accuracy: float | None = None
    history: list[EpochRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _as_f32(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype="<f4")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.params.check(ckpt.config)
    blobs = [(f"param/{k}", a) for k, a in ckpt.params.items()]
    if ckpt.adam is not None:
        blobs += [(f"adam.m/{k}", a) for k, a in ckpt.adam.m.items()]
        blobs += [(f"adam.v/{k}", a) for k, a in ckpt.adam.v.items()]
    table, payload, offset = [], [], 0
    for name, a in blobs:
        raw = _as_f32(a).tobytes()
        table.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "best_val_accuracy": ckpt.best_val_accuracy,
        "adam_t": None if ckpt.adam is None else ckpt.adam.t,
        "frozen": [k for k, f in ckpt.params.frozen.items() if f],
        "history": [vars(r) for r in ckpt.history],
        "meta": ckpt.meta,
        "arrays": table,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(head)) + head)
        for raw in payload:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    payload = memoryview(data)[start + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        chunk = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        a = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(entry["shape"])
        arrays[entry["name"]] = a
    config = ViTConfig.from_dict(header["config"])
    params = ParameterSet({k[6:]: a for k, a in arrays.items() if k.startswith("param/")}, header["frozen"])
    try:
        params.check(config)
    except ShapeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    adam = None
    if header["adam_t"] is not None:
        adam = AdamState({k[7:]: a for k, a in arrays.items() if k.startswith("adam.m/")},
                         {k[7:]: a for k, a in arrays.items() if k.startswith("adam.v/")},
                         header["adam_t"])
    return Checkpoint(
        config, params, adam, header["epoch"], header["best_val_loss"], header["best_val_accuracy"],
        [EpochRecord(**r) for r in header["history"]], header["meta"],
    )
