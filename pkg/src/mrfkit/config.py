"""Run configuration: one document with a section per pipeline stage.

Every design default appears here explicitly so experiment manifests are
self-describing; unknown keys are rejected at every level (typo safety).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import NetworkConfig
from .tensorio import sha256_of
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content (CLI exit code 2)."""


class DataError(RuntimeError):
    """Missing or incompatible data artifacts (CLI exit code 3)."""


def _build(cls, d: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{section}] section: {exc}") from exc


@dataclass
class PhantomSection:
    size: int = 32
    n_shapes: int = 4
    count: int = 16
    classes: list = field(default_factory=lambda: [[800.0, 70.0], [1300.0, 90.0], [4000.0, 500.0]])
    variation: float = 0.10
    b0_max_hz: float = 50.0

    def to_phantom_config(self):
        from .phantom import PhantomConfig

        return PhantomConfig(
            classes=tuple(tuple(c) for c in self.classes),
            variation=self.variation,
            b0_max_hz=self.b0_max_hz,
        )


@dataclass
class SequenceSection:
    n_rep: int = 1000
    n_lobes: int = 5
    inversion: bool = True
    schedule_file: str | None = None  # CSV overrides the generated default


@dataclass
class KspaceSection:
    samples_per_spoke: int = 0  # 0 -> 2*size + 1
    spokes_per_frame: int = 1
    nufft_path: str = "auto"  # direct | grid | auto


@dataclass
class CompressSection:
    rank: int = 10
    t1_min: float = 400.0
    t1_max: float = 4800.0
    t1_count: int = 24
    t1_scale: str = "log"
    t2_min: float = 40.0
    t2_max: float = 650.0
    t2_count: int = 18
    t2_scale: str = "log"
    b0_values: list = field(default_factory=lambda: [0.0])
    t_truncs: list = field(default_factory=lambda: [200])

    def axis(self, which: str) -> np.ndarray:
        lo, hi, count, scale = {
            "t1": (self.t1_min, self.t1_max, self.t1_count, self.t1_scale),
            "t2": (self.t2_min, self.t2_max, self.t2_count, self.t2_scale),
        }[which]
        if scale == "log":
            return np.geomspace(lo, hi, count)
        if scale == "linear":
            return np.linspace(lo, hi, count)
        raise ConfigError(f"unknown axis scale {scale!r}")


@dataclass
class NetworkSection:
    preset: str = "desk"  # desk | paper
    fusion_blocks: int = 2

    def to_network_config(self, in_channels: int) -> NetworkConfig:
        if self.preset == "desk":
            cfg = NetworkConfig.desk(in_channels=in_channels)
        elif self.preset == "paper":
            cfg = NetworkConfig(in_channels=in_channels)
        else:
            raise ConfigError(f"unknown network preset {self.preset!r}")
        cfg.fusion_blocks = self.fusion_blocks
        return cfg


@dataclass
class TrainSection:
    lr: float = 5e-5
    weight_decay: float = 0.01
    batch: int = 2
    epochs: int = 50
    gamma: float = 0.5
    l1_weight: float = 0.2
    w_start: float = 1.5
    w_end: float = 1.0
    val_fraction: float = 0.25
    milestones: list | None = None  # None -> scaled from the 100-epoch reference

    def to_train_config(self, seed: int) -> TrainConfig:
        from .training import _scaled_milestones

        ms = tuple(self.milestones) if self.milestones is not None else _scaled_milestones(self.epochs)
        try:
            return TrainConfig(
                lr=self.lr,
                weight_decay=self.weight_decay,
                batch=self.batch,
                epochs=self.epochs,
                milestones=ms,
                gamma=self.gamma,
                l1_weight=self.l1_weight,
                w_start=self.w_start,
                w_end=self.w_end,
                val_fraction=self.val_fraction,
                seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(f"bad [train] section: {exc}") from exc


@dataclass
class EvalSection:
    save_error_maps: bool = True


@dataclass
class RunConfig:
    phantom: PhantomSection = field(default_factory=PhantomSection)
    sequence: SequenceSection = field(default_factory=SequenceSection)
    kspace: KspaceSection = field(default_factory=KspaceSection)
    compress: CompressSection = field(default_factory=CompressSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    SECTIONS = {
        "phantom": PhantomSection,
        "sequence": SequenceSection,
        "kspace": KspaceSection,
        "compress": CompressSection,
        "network": NetworkSection,
        "train": TrainSection,
        "eval": EvalSection,
    }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {name: _build(sec_cls, d.get(name, {}), name) for name, sec_cls in cls.SECTIONS.items()}
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in self.SECTIONS}

    def hash(self) -> str:
        return sha256_of(self.to_dict())

    def samples_per_spoke(self) -> int:
        n = self.kspace.samples_per_spoke
        return n if n > 0 else 2 * self.phantom.size + 1


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
    elif path.suffix == ".toml":
        try:
            import tomllib as toml
        except ModuleNotFoundError:
            import tomli as toml
        data = toml.loads(text)
    else:
        raise ConfigError(f"config must be .json or .toml, got {path.suffix!r}")
    return RunConfig.from_dict(data)
