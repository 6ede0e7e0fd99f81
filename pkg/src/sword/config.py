"""Pipeline configuration: one YAML document, optionally pulling in others.

A document may list ``include: [a.yaml, b.yaml]`` (paths relative to the
including file). Included documents are merged first, in order; keys of the
including document win. The only environment override is ``SWORD_OUT``,
which replaces ``paths.out``.

Example::

    include: [base.yaml]
    grid: {n: 64, fov: 20.0}
    views: {full: 180, detectors: 128, kept: [30, 45, 60, 90]}
    schedule: {sigma_min: 0.01, sigma_max: null, T: 300}
    seed: 0
"""
from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .diffusion import NoiseSchedule
from .errors import ConfigError, InvalidArgument
from .fbp import FilterSpec
from .phantom import GridSpec, make_grid
from .projector import FanBeamGeometry


@dataclass
class GridSection:
    n: int = 64
    fov: float = 20.0


@dataclass
class ViewsSection:
    full: int = 180
    detectors: int = 128
    source_to_center_cm: float = 40.0
    center_to_detector_cm: float = 40.0
    detector_width_cm: float = 41.3
    kept: list = field(default_factory=lambda: [30, 45, 60, 90])


@dataclass
class ScheduleSection:
    sigma_min: float = 0.01
    sigma_max: Optional[float] = None      # None: derived from the training corpus
    T: int = 300


@dataclass
class SamplerSection:
    eta: float = 1.0
    eta2: float = 0.5
    snr: float = 0.16
    corrector_steps: int = 1
    dc_mode: str = "rows"
    lambda1: float = 0.1


@dataclass
class TrainSection:
    corpus_size: int = 200
    steps: int = 3000
    batch: int = 128
    lr: float = 1e-3
    patch: int = 8
    hidden: int = 128
    blocks: int = 2
    ema: float = 0.99
    gaussian_base: bool = True


@dataclass
class FilterSection:
    kind: str = "ram-lak"
    cutoff: float = 1.0


@dataclass
class PathsSection:
    out: str = "sword_out"
    corpus: Optional[str] = None
    model_full: Optional[str] = None
    model_high: Optional[str] = None


@dataclass
class PipelineConfig:
    grid: GridSection = field(default_factory=GridSection)
    views: ViewsSection = field(default_factory=ViewsSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    train: TrainSection = field(default_factory=TrainSection)
    filter: FilterSection = field(default_factory=FilterSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0
    jobs: int = 1

    # -- derived objects; each validates through its owning module --------

    def grid_spec(self) -> GridSpec:
        return make_grid(self.grid.n, self.grid.fov)

    def geometry(self) -> FanBeamGeometry:
        v = self.views
        return FanBeamGeometry(v.source_to_center_cm, v.center_to_detector_cm,
                               v.detector_width_cm, v.detectors, v.full)

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.filter.kind, self.filter.cutoff)

    def noise_schedule(self, sigma_max: Optional[float] = None) -> NoiseSchedule:
        s = self.schedule
        top = s.sigma_max if sigma_max is None else sigma_max
        if top is None:
            raise ConfigError("schedule.sigma_max is not set and no corpus value is available")
        return NoiseSchedule(s.sigma_min, top, s.T)

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out)

    def path(self, name: str, default: str) -> Path:
        value = getattr(self.paths, name)
        return Path(value) if value else self.out_dir / default

    def validate(self) -> "PipelineConfig":
        try:
            self.grid_spec()
            self.geometry()
            self.filter_spec()
            if self.schedule.sigma_max is not None:
                self.noise_schedule()
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from None
        if not self.views.kept or any(k < 1 or k > self.views.full for k in self.views.kept):
            raise ConfigError(f"views.kept must lie in [1, {self.views.full}]")
        if self.train.corpus_size < 1:
            raise ConfigError("train.corpus_size must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        return self

    def as_dict(self):
        return asdict(self)


_SECTIONS = {f.name: f for f in fields(PipelineConfig)}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _read_document(path: Path, seen: tuple) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"include cycle through {path}")
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    includes = doc.pop("include", []) or []
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, _read_document(path.parent / inc, seen + (path,)))
    return _merge(merged, doc)


def _build(cls, values: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    return cls(**values)


def config_from_dict(doc: dict) -> PipelineConfig:
    kwargs = {}
    for key, value in doc.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown top-level key: {key}")
        default = _SECTIONS[key].default_factory() if callable(_SECTIONS[key].default_factory) else None
        if default is not None and hasattr(default, "__dataclass_fields__"):
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be a mapping")
            kwargs[key] = _build(type(default), value, key)
        else:
            kwargs[key] = value
    try:
        cfg = PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, env=None) -> PipelineConfig:
    """Read ``path`` (or use defaults when ``None``) and apply ``SWORD_OUT``."""
    env = os.environ if env is None else env
    doc = _read_document(Path(path), ()) if path is not None else {}
    cfg = config_from_dict(doc)
    if env.get("SWORD_OUT"):
        cfg.paths.out = env["SWORD_OUT"]
    return cfg.validate()
