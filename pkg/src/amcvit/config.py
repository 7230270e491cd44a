"""Run configuration: a YAML file whose sections mirror the pipeline stages.

Example::

    dataset:
      schemes: [OOK, GMSK]
      snrs_db: [0, 5, 10]
      per_class: 20
    imaging:
      alphas: [1.0, 2.0, 4.0]
    model:
      preset: desk
    train:
      epochs: 5
      lr: 0.0005

Unknown keys are rejected with their full key path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from amcvit.dataset import (
    BASE_TRAIN_SNRS_DB,
    FINETUNE_PER_CLASS,
    LOW_OOD_SNRS_DB,
    TEST_IN_SNRS_DB,
    VALIDATION_SNRS_DB,
    DatasetSpec,
    ImagingSpec,
)
from amcvit.errors import ConfigError, ShapeError
from amcvit.imaging import DecayParams, ImagePlaneSpec, PowerMode
from amcvit.modem import (
    DEFAULT_PATH_DELAYS_S,
    DEFAULT_PATH_GAINS_DB,
    DEFAULT_SAMPLE_RATE_HZ,
    ChannelConfig,
    FrameSpec,
    ModulationScheme,
    scheme_names,
)
from amcvit.vit.model import PRESETS, ViTConfig

DEFAULT_PRESET = "desk"


@dataclass
class DatasetSection:
    schemes: list[str] = field(default_factory=scheme_names)
    snrs_db: list[float] = field(default_factory=lambda: list(BASE_TRAIN_SNRS_DB))
    per_class: int = 100
    master_seed: int = 0
    output_dir: str = "data"
    workers: int = 0


@dataclass
class FrameSection:
    n_symbols: int = 1024
    samples_per_symbol: int = 8
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ


@dataclass
class ChannelSection:
    path_delays_s: list[float] = field(default_factory=lambda: list(DEFAULT_PATH_DELAYS_S))
    path_gains_db: list[float] = field(default_factory=lambda: list(DEFAULT_PATH_GAINS_DB))
    pulse_filter_taps: int = 8


@dataclass
class ImagingSection:
    scale: float = 2.5
    width_px: int = 32
    height_px: int = 32
    alphas: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0])
    cutoff_radius_px: float = 4.0
    power_mode: str = "unit"


@dataclass
class ModelSection:
    preset: str | None = None
    image_size: int | None = None
    patch: int | None = None
    embed_dim: int | None = None
    layers: int | None = None
    heads: int | None = None
    mlp_dim: int | None = None
    dropout: float | None = None


@dataclass
class TrainSection:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 5e-5
    seed: int = 0
    val_snrs_db: list[float] = field(default_factory=lambda: list(VALIDATION_SNRS_DB))
    val_per_class: int = 100
    test_snrs_db: list[float] = field(default_factory=lambda: list(TEST_IN_SNRS_DB))
    test_per_class: int = 100


@dataclass
class FinetuneSection:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 5e-5
    seed: int = 0
    snrs_db: list[float] = field(default_factory=lambda: list(LOW_OOD_SNRS_DB))
    per_class: int = FINETUNE_PER_CLASS
    val_per_class: int = 20


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    frame: FrameSection = field(default_factory=FrameSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    imaging: ImagingSection = field(default_factory=ImagingSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)

    def dataset_spec(self, output_dir=None) -> DatasetSpec:
        d, f, c, im = self.dataset, self.frame, self.channel, self.imaging
        return DatasetSpec(
            schemes=tuple(ModulationScheme.parse(s) for s in d.schemes),
            snr_grid_db=tuple(float(s) for s in d.snrs_db),
            per_class_per_snr=d.per_class,
            frame=FrameSpec(ModulationScheme.OOK, f.n_symbols, f.samples_per_symbol, 0, f.sample_rate_hz),
            channel=ChannelConfig(10.0, tuple(c.path_delays_s), tuple(c.path_gains_db), c.pulse_filter_taps, 0),
            imaging=self.imaging_spec(),
            master_seed=d.master_seed,
            output_dir=Path(output_dir if output_dir is not None else d.output_dir),
        )

    def imaging_spec(self) -> ImagingSpec:
        im = self.imaging
        return ImagingSpec(
            ImagePlaneSpec(im.scale, im.width_px, im.height_px),
            tuple(float(a) for a in im.alphas),
            DecayParams(min(im.alphas), im.cutoff_radius_px, PowerMode.parse(im.power_mode)),
        )

    def vit_config(self) -> ViTConfig:
        m = self.model
        preset = m.preset if m.preset is not None else DEFAULT_PRESET
        if preset not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]()
        overrides = {k: v for k, v in dataclasses.asdict(m).items() if k != "preset" and v is not None}
        if "image_size" in overrides:
            size = overrides.pop("image_size")
            overrides["image_hw"] = (size, size)
        try:
            return dataclasses.replace(base, **overrides)
        except ShapeError as exc:
            raise ConfigError(f"model: {exc}") from exc

    def model_overridden(self) -> bool:
        """True when the config file or a flag chose the model explicitly."""
        return self.model != ModelSection()


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")
    return value


def _merge(obj, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in known:
            raise ConfigError(f"unknown config key '{path}'")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value or {}, path)
        elif current is None and key == "preset":
            if not isinstance(value, str):
                raise ConfigError(f"{path}: expected str, got {value!r}")
            setattr(obj, key, value)
        elif current is None:
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"{path}: expected a number, got {value!r}")
            setattr(obj, key, value)
        else:
            setattr(obj, key, _coerce(value, current, path))


def load_config(path=None) -> RunConfig:
    """Defaults, overlaid with the YAML file at ``path`` when given."""
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    _merge(cfg, data, "")
    return cfg
