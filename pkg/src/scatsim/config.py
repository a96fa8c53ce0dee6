"""YAML-backed experiment configuration.

The schema is nested key-value; every section maps onto a dataclass below.
Unknown keys are rejected so typos fail fast with a config error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .core import NoiseModel, ScattererModel
from .estimators import RladConfig, WienerConfig
from .neural.data import DataGenConfig
from .neural.optim import TrainConfig
from .phantoms import InclusionPhantomConfig


@dataclass(frozen=True)
class AcquisitionConfig:
    fs_mhz: float = 40.0
    c_m_per_s: float = 1540.0


@dataclass(frozen=True)
class PsfBankConfig:
    """Depth-dependent PSF triplet; variances stay inside the regressor's
    training range so every estimator sees in-distribution speckle."""

    fc_mhz: float = 6.0
    sigma_l2_mm2: tuple[float, ...] = (0.2, 0.25, 0.3)
    sigma_a2_mm2: tuple[float, ...] = (0.025, 0.03, 0.035)

    def __post_init__(self):
        if len(self.sigma_l2_mm2) != len(self.sigma_a2_mm2) or not self.sigma_l2_mm2:
            raise ValueError("psf bank variance lists must be nonempty and equal length")


@dataclass(frozen=True)
class SweepConfig:
    start: float
    stop: float
    step: float

    def values(self) -> list[float]:
        if self.step <= 0 or self.stop < self.start:
            raise ValueError("sweep requires step > 0 and stop >= start")
        n = int(round((self.stop - self.start) / self.step))
        vals = [self.start + i * self.step for i in range(n + 1)]
        if not vals:
            raise ValueError("sweep is empty")
        return vals


@dataclass(frozen=True)
class EstimatorSuiteConfig:
    methods: tuple[str, ...] = ("sample-env", "trf", "scat-rec", "scat-param")
    wiener_nsr: float | None = None  # None: (noise level)^2
    rlad: RladConfig = field(default_factory=lambda: RladConfig(max_iters=300))
    weights_file: str = ""

    def __post_init__(self):
        known = {"sample-env", "trf", "scat-rec", "scat-param"}
        bad = set(self.methods) - known
        if bad:
            raise ValueError(f"unknown estimator methods: {sorted(bad)}")


@dataclass(frozen=True)
class GenDataConfig:
    count: int = 4000
    n_lateral: int = 64
    n_coarse_axial: int = 128
    with_envelopes: bool = False

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    phantom: InclusionPhantomConfig = field(default_factory=InclusionPhantomConfig)
    model: ScattererModel = field(default_factory=lambda: ScattererModel(0.05))
    psf_bank: PsfBankConfig = field(default_factory=PsfBankConfig)
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(0.05))
    estimators: EstimatorSuiteConfig = field(default_factory=EstimatorSuiteConfig)
    rotation_sweep: SweepConfig = field(default_factory=lambda: SweepConfig(0.0, 45.0, 5.0))
    compression_sweep: SweepConfig = field(default_factory=lambda: SweepConfig(0.10, 0.50, 0.05))
    patch_mm: float = 3.0
    histogram_bins: int = 50
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(iterations=2000))
    data: DataGenConfig = field(default_factory=DataGenConfig)
    gen_data: GenDataConfig = field(default_factory=GenDataConfig)


_TUPLE_FIELDS = {"methods", "sigma_l2_mm2", "sigma_a2_mm2", "coarse_dims", "inclusion_center",
                 "mu_range", "sigma_l2_range", "sigma_a2_range", "noise_range"}


def _build(cls, data, path="config"):
    if not is_dataclass(cls):
        return data
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping for {cls.__name__}")
    spec = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(spec)
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls.__name__, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{path}.{name}")
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    ("ExperimentConfig", "acquisition"): AcquisitionConfig,
    ("ExperimentConfig", "phantom"): InclusionPhantomConfig,
    ("ExperimentConfig", "model"): ScattererModel,
    ("ExperimentConfig", "psf_bank"): PsfBankConfig,
    ("ExperimentConfig", "noise"): NoiseModel,
    ("ExperimentConfig", "estimators"): EstimatorSuiteConfig,
    ("ExperimentConfig", "rotation_sweep"): SweepConfig,
    ("ExperimentConfig", "compression_sweep"): SweepConfig,
    ("ExperimentConfig", "train"): TrainConfig,
    ("ExperimentConfig", "data"): DataGenConfig,
    ("ExperimentConfig", "gen_data"): GenDataConfig,
    ("EstimatorSuiteConfig", "rlad"): RladConfig,
}


def load_config(path) -> tuple[ExperimentConfig, str]:
    """Parse a YAML config file; returns (config, content digest)."""
    raw = Path(path).read_bytes()
    data = yaml.safe_load(raw) or {}
    cfg = _build(ExperimentConfig, data)
    return cfg, hashlib.sha256(raw).hexdigest()[:16]


def default_config_digest(cfg: ExperimentConfig) -> str:
    doc = json.dumps(_as_dict(cfg), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _as_dict(obj):
    if is_dataclass(obj):
        return {f.name: _as_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_as_dict(v) for v in obj]
    return obj
