"""Deterministic generation of labelled constellation-image datasets, manifests and splits.

Layout on disk::

    <output_dir>/<scheme>/<snr_db>/<index>.png
    <output_dir>/manifest.jsonl

Each entry's frame seed is ``child_seed(master_seed, scheme_label, snr_millibels, index)``
(see :mod:`amcvit.rng`); its noise seed is ``child_seed(frame_seed, "awgn")``.
Manifest paths are relative to the directory holding the manifest file.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from amcvit.errors import InsufficientSamples, InvalidSpec, MalformedRecord
from amcvit.imaging import (
    DEFAULT_ALPHAS,
    DecayParams,
    ImagePlaneSpec,
    compose_three_channel,
    encode_png,
)
from amcvit.modem import ChannelConfig, FrameSpec, ModulationScheme, transmit
from amcvit.rng import child_seed, make_rng

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
MANIFEST_FIELDS = ("path", "label", "scheme", "snr_db", "frame_seed")
BASE_TRAIN_SNRS_DB = tuple(float(s) for s in range(11))
VALIDATION_SNRS_DB = (0.0, 4.0, 8.0)
TEST_IN_SNRS_DB = (0.0, 4.0, 10.0)
LOW_OOD_SNRS_DB = (0.5, 1.5, 4.5)
HIGH_OOD_SNRS_DB = (5.5, 7.5, 9.5)
FINETUNE_PER_CLASS = 100


@dataclass(frozen=True)
class ImagingSpec:
    plane: ImagePlaneSpec = field(default_factory=ImagePlaneSpec)
    alphas: tuple[float, float, float] = DEFAULT_ALPHAS
    decay: DecayParams = field(default_factory=DecayParams)


@dataclass(frozen=True)
class DatasetSpec:
    schemes: tuple[ModulationScheme, ...] = tuple(ModulationScheme)
    snr_grid_db: tuple[float, ...] = BASE_TRAIN_SNRS_DB
    per_class_per_snr: int = 100
    frame: FrameSpec = field(default_factory=lambda: FrameSpec(ModulationScheme.OOK))
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    imaging: ImagingSpec = field(default_factory=ImagingSpec)
    master_seed: int = 0
    output_dir: Path = Path("data")

    def validate(self) -> None:
        if not self.schemes:
            raise InvalidSpec("at least one scheme is required")
        if len(set(self.schemes)) != len(self.schemes):
            raise InvalidSpec("duplicate schemes in dataset spec")
        if not self.snr_grid_db:
            raise InvalidSpec("snr_grid_db must not be empty")
        if len({snr_millibels(s) for s in self.snr_grid_db}) != len(self.snr_grid_db):
            raise InvalidSpec("duplicate SNR values in snr_grid_db")
        if int(self.per_class_per_snr) < 1:
            raise InvalidSpec("per_class_per_snr must be positive")
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidSpec("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    scheme: str
    snr_db: float
    frame_seed: int

    def to_json(self) -> str:
        return json.dumps(
            {"path": self.path, "label": self.label, "scheme": self.scheme,
             "snr_db": self.snr_db, "frame_seed": self.frame_seed},
            separators=(",", ":"),
        )


@dataclass
class DatasetManifest:
    """Entries written by :func:`generate_dataset` plus out-of-window drop statistics."""

    root: Path
    entries: list[ManifestEntry]
    dropped: dict[tuple[str, float], int] = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME


class SplitRole(enum.Enum):
    BASE_TRAIN = "base_train"
    VALIDATION = "validation"
    TEST_IN = "test_in"
    TEST_OUT = "test_out"
    FINETUNE_TRAIN = "finetune_train"


@dataclass(frozen=True)
class SplitSpec:
    role: SplitRole
    snrs_db: tuple[float, ...]
    per_class: int = FINETUNE_PER_CLASS


def snr_millibels(snr_db: float) -> int:
    return int(round(float(snr_db) * 1000))


def snr_dirname(snr_db: float) -> str:
    return format(float(snr_db), "g")


def entry_seed(master_seed: int, scheme: ModulationScheme, snr_db: float, index: int) -> int:
    return child_seed(master_seed, scheme.label, snr_millibels(snr_db), index)


def render_entry(spec: DatasetSpec, scheme: ModulationScheme, snr_db: float, frame_seed: int) -> tuple[bytes, int]:
    """Full pipeline for one image; returns (PNG bytes, out-of-window sample count)."""
    frame = replace(spec.frame, scheme=scheme, rng_seed=frame_seed)
    channel = replace(spec.channel, snr_db=float(snr_db), rng_seed=child_seed(frame_seed, "awgn"))
    _, noisy = transmit(frame, channel)
    img = compose_three_channel(
        noisy.samples, spec.imaging.plane, spec.imaging.alphas,
        spec.imaging.decay.power_mode, spec.imaging.decay.cutoff_radius_px,
    )
    row, col, inside = spec.imaging.plane.bins(noisy.samples)
    return encode_png(img), int(inside.size - inside.sum())


def _job(args):
    spec, scheme, snr, index = args
    seed = entry_seed(spec.master_seed, scheme, snr, index)
    rel = f"{scheme.value}/{snr_dirname(snr)}/{index}.png"
    data, dropped = render_entry(spec, scheme, snr, seed)
    path = Path(spec.output_dir) / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return ManifestEntry(rel, scheme.label, scheme.value, float(snr), seed), dropped


def generate_dataset(spec: DatasetSpec, workers: int = 1) -> DatasetManifest:
    """Render every (scheme, snr, index) image and write the manifest.

    Re-running the same spec rewrites byte-identical files. ``workers > 1``
    renders in a process pool; output does not depend on the worker count.
    """
    spec.validate()
    root = Path(spec.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [
        (spec, scheme, float(snr), index)
        for scheme in spec.schemes
        for snr in spec.snr_grid_db
        for index in range(spec.per_class_per_snr)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs, chunksize=16))
    else:
        results = [_job(j) for j in jobs]

    entries = [entry for entry, _ in results]
    dropped: Counter = Counter()
    for entry, n in results:
        dropped[(entry.scheme, entry.snr_db)] += n
    write_manifest(entries, root / MANIFEST_NAME)
    logger.info("wrote %d images under %s", len(entries), root)
    return DatasetManifest(root, entries, dict(dropped))


def write_manifest(entries, path) -> None:
    """One JSON object per line with exactly the manifest fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def _parse_entry(obj, lineno: int) -> ManifestEntry:
    if not isinstance(obj, dict) or set(obj) != set(MANIFEST_FIELDS):
        found = sorted(obj) if isinstance(obj, dict) else type(obj).__name__
        raise MalformedRecord(f"expected fields {list(MANIFEST_FIELDS)}, got {found}", lineno)
    label, scheme, snr, seed, path = obj["label"], obj["scheme"], obj["snr_db"], obj["frame_seed"], obj["path"]
    if not isinstance(path, str) or not path:
        raise MalformedRecord("path must be a non-empty string", lineno)
    if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < len(ModulationScheme):
        raise MalformedRecord(f"label {label!r} outside [0, {len(ModulationScheme) - 1}]", lineno)
    if scheme != ModulationScheme.from_label(label).value:
        raise MalformedRecord(f"scheme {scheme!r} does not match label {label}", lineno)
    if isinstance(snr, bool) or not isinstance(snr, (int, float)) or not math.isfinite(snr):
        raise MalformedRecord(f"snr_db {snr!r} is not a finite number", lineno)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise MalformedRecord(f"frame_seed {seed!r} is not a 64-bit unsigned integer", lineno)
    return ManifestEntry(path, label, scheme, float(snr), seed)


def load_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc.msg}", lineno) from None
            entries.append(_parse_entry(obj, lineno))
    return entries


def rebase(entries, old_root, new_root) -> list[ManifestEntry]:
    """Rewrite relative paths so they resolve from ``new_root`` instead of ``old_root``."""
    out = []
    for e in entries:
        absolute = os.path.normpath(os.path.join(os.path.abspath(old_root), e.path))
        rel = os.path.relpath(absolute, os.path.abspath(new_root))
        out.append(replace(e, path=Path(rel).as_posix()))
    return out


def make_split(manifest, split: SplitSpec, seed: int, exclude=()) -> list[ManifestEntry]:
    """Seeded, class- and SNR-stratified subset with exactly ``per_class`` entries per cell.

    Every class present in ``manifest`` is sampled at every SNR in ``split.snrs_db``.
    Entries whose path is in ``exclude`` (earlier splits) are never drawn.
    """
    excluded = {e.path if isinstance(e, ManifestEntry) else str(e) for e in exclude}
    cells: dict[tuple[int, int], list[ManifestEntry]] = {}
    for e in manifest:
        cells.setdefault((e.label, snr_millibels(e.snr_db)), []).append(e)
    labels = sorted({e.label for e in manifest})

    chosen = []
    for label in labels:
        for snr in split.snrs_db:
            pool = [e for e in cells.get((label, snr_millibels(snr)), []) if e.path not in excluded]
            pool.sort(key=lambda e: e.path)
            if len(pool) < split.per_class:
                name = ModulationScheme.from_label(label).value
                raise InsufficientSamples(
                    f"{name} at {snr_dirname(snr)} dB has {len(pool)} available entries, "
                    f"{split.per_class} requested for {split.role.value}"
                )
            rng = make_rng(child_seed(seed, split.role.value, label, snr_millibels(snr)))
            picks = np.sort(rng.permutation(len(pool))[: split.per_class])
            chosen.extend(pool[i] for i in picks)
    return chosen


def remainder(manifest, *splits) -> list[ManifestEntry]:
    """Entries not used by any of ``splits``, in manifest order."""
    used = {e.path for s in splits for e in s}
    return [e for e in manifest if e.path not in used]
