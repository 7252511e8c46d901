"""Pipeline configuration: one YAML document, one section per component.

Unknown keys are errors. ``overrides`` takes dotted ``section.key=value`` strings
whose values are parsed as YAML scalars, so ``train.max_epochs=5`` and
``glcm.angles=[0,90]`` both work.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .detector.training import TrainConfig
from .errors import ConfigError
from .evaluation import AreaVerdictSpec
from .glcm import GlcmSpec
from .global_classifier.search import GridSearchSpec
from .patch_grid import GridSpec, SamplerSpec
from .synth_forge import DatasetSpec, ForgeSpec
from .volume_io import NormalizationSpec

WORKSPACE_ENV = "CTFORENSICS_WORKSPACE"


@dataclass(frozen=True)
class DetectorConfig:
    feature_mode: str = "raw"
    inference_batch: int = 256

    def __post_init__(self):
        if self.feature_mode not in ("raw", "dct"):
            raise ConfigError(f"feature_mode must be 'raw' or 'dct', got {self.feature_mode!r}")
        if self.inference_batch < 1:
            raise ConfigError("inference_batch must be positive")


@dataclass(frozen=True)
class GlobalConfig:
    pca_dims: int = 256

    def __post_init__(self):
        if self.pca_dims < 1:
            raise ConfigError("pca_dims must be positive")


@dataclass(frozen=True)
class VerdictConfig:
    window: int = 10
    threshold: int = 9
    scan_n: int = 9
    scan_m: int = 10
    peak_radius: int = 2  # lattice cells, Chebyshev
    peak_sigma: float = 2.0

    def __post_init__(self):
        AreaVerdictSpec(self.window, self.threshold)
        if not 1 <= self.scan_n <= self.scan_m:
            raise ConfigError(f"need 1 <= scan_n <= scan_m, got {self.scan_n} of {self.scan_m}")
        if self.peak_radius < 0 or self.peak_sigma < 0:
            raise ConfigError("peak_radius and peak_sigma must be nonnegative")

    @property
    def area(self) -> AreaVerdictSpec:
        return AreaVerdictSpec(self.window, self.threshold)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    workspace: str = "workspace"
    grid: GridSpec = field(default_factory=GridSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    forge: ForgeSpec = field(default_factory=ForgeSpec)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    glcm: GlcmSpec = field(default_factory=GlcmSpec)
    global_model: GlobalConfig = field(default_factory=GlobalConfig)
    search: GridSearchSpec = field(default_factory=GridSearchSpec)
    verdict: VerdictConfig = field(default_factory=VerdictConfig)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    @property
    def workspace_path(self) -> Path:
        return Path(self.workspace)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(data).__name__}")
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        elif isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be a mapping")
            kwargs[name] = {**current, **value}
        elif isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def to_dict(cfg: PipelineConfig) -> dict:
    return _plain(cfg)


def from_dict(data: Optional[dict]) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "")


def dump_config(cfg: PipelineConfig, path=None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def load_config(path=None, overrides=(), env=None) -> PipelineConfig:
    """Defaults, then the YAML file, then ``$CTFORENSICS_WORKSPACE``, then overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p} must hold a mapping at the top level")
    if env.get(WORKSPACE_ENV):
        data["workspace"] = env[WORKSPACE_ENV]
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        _set_dotted(data, key.strip(), value)
    return from_dict(data)


def desk_config(**top) -> PipelineConfig:
    """A reduced setting that runs end to end on one CPU core in minutes:
    128-pixel slices, so a 25 x 25 lattice, and 16-slice phantoms."""
    base = dict(grid=dict(ct_size=128), dataset=dict(depth=16), global_model=dict(pca_dims=256))
    base.update(top)
    return from_dict(base)
