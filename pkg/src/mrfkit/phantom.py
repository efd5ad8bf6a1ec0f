"""Synthetic tissue-parameter maps: elliptical phantoms with T1/T2/B0 fields."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import load_array, save_array

# (T1 mean, T2 mean) in ms per tissue class; values are configuration, not physics.
DEFAULT_CLASSES = ((800.0, 70.0), (1300.0, 90.0), (4000.0, 500.0))


@dataclass
class PhantomConfig:
    classes: tuple = DEFAULT_CLASSES
    variation: float = 0.10  # +-10% within-class spread
    b0_max_hz: float = 50.0
    mask_radius: tuple = (0.92, 0.88)  # head ellipse semi-axes, fraction of half-size
    shape_radius: tuple = (0.10, 0.45)  # inner ellipse semi-axes range

    def to_dict(self) -> dict:
        return {
            "classes": [list(c) for c in self.classes],
            "variation": self.variation,
            "b0_max_hz": self.b0_max_hz,
            "mask_radius": list(self.mask_radius),
            "shape_radius": list(self.shape_radius),
        }


@dataclass
class TissueMap:
    """Per-voxel T1/T2 (ms), off-resonance B0 (Hz), and tissue mask."""

    t1: np.ndarray
    t2: np.ndarray
    b0: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        shapes = {self.t1.shape, self.t2.shape, self.b0.shape, self.mask.shape}
        if len(shapes) != 1:
            raise ValueError(f"tissue grids disagree in shape: {shapes}")
        self.mask = self.mask.astype(bool)

    @property
    def shape(self) -> tuple:
        return self.t1.shape


def _ellipse(xx, yy, center, axes, angle):
    dx, dy = xx - center[0], yy - center[1]
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / axes[0]
    v = (-s * dx + c * dy) / axes[1]
    return u * u + v * v <= 1.0


def make_phantom(size: int, n_shapes: int, seed: int, cfg: PhantomConfig | None = None) -> TissueMap:
    """Deterministic phantom: head ellipse filled with a base tissue class,
    overpainted by ``n_shapes`` random ellipses; smooth quadratic B0 field."""
    if size < 8:
        raise ValueError(f"phantom size must be >= 8, got {size}")
    cfg = cfg or PhantomConfig()
    rng = np.random.default_rng(seed)
    coords = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    mask = _ellipse(xx, yy, (0.0, 0.0), cfg.mask_radius, 0.0)
    t1 = np.zeros((size, size))
    t2 = np.zeros((size, size))

    def draw_values(class_idx):
        m1, m2 = cfg.classes[class_idx]
        v = cfg.variation
        return m1 * (1.0 + rng.uniform(-v, v)), m2 * (1.0 + rng.uniform(-v, v))

    base1, base2 = draw_values(rng.integers(len(cfg.classes)))
    t1[mask], t2[mask] = base1, base2

    lo, hi = cfg.shape_radius
    for _ in range(n_shapes):
        center = rng.uniform(-0.55, 0.55, size=2)
        axes = rng.uniform(lo, hi, size=2)
        angle = rng.uniform(0.0, np.pi)
        v1, v2 = draw_values(rng.integers(len(cfg.classes)))
        region = _ellipse(xx, yy, center, axes, angle) & mask
        t1[region], t2[region] = v1, v2

    # degree-2 polynomial surface scaled into [-b0_max, b0_max]
    c = rng.standard_normal(6)
    surface = c[0] + c[1] * xx + c[2] * yy + c[3] * xx * xx + c[4] * xx * yy + c[5] * yy * yy
    peak = np.abs(surface[mask]).max() if mask.any() else 1.0
    amplitude = rng.uniform(0.2, 1.0) * cfg.b0_max_hz
    b0 = np.where(mask, surface / max(peak, 1e-12) * amplitude, 0.0)

    return TissueMap(t1=t1, t2=t2, b0=b0, mask=mask)


@dataclass
class TargetStats:
    """Global masked-voxel statistics used to standardize regression targets."""

    t1_mean: float
    t1_std: float
    t2_mean: float
    t2_std: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.t1_mean, self.t1_std, self.t2_mean, self.t2_std)

    def standardize(self, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        return np.stack(
            [(t1 - self.t1_mean) / self.t1_std, (t2 - self.t2_mean) / self.t2_std]
        )

    def destandardize(self, pair: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            pair[0] * self.t1_std + self.t1_mean,
            pair[1] * self.t2_std + self.t2_mean,
        )

    def to_dict(self) -> dict:
        return {
            "t1_mean": self.t1_mean,
            "t1_std": self.t1_std,
            "t2_mean": self.t2_mean,
            "t2_std": self.t2_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetStats":
        return cls(d["t1_mean"], d["t1_std"], d["t2_mean"], d["t2_std"])


def standardize_targets(maps: list[TissueMap]) -> TargetStats:
    """Masked-voxel mean/std of T1 and T2 over a set of maps.

    A degenerate (zero) standard deviation is replaced by 1.0 so that
    standardization stays invertible.
    """
    t1_vals = np.concatenate([m.t1[m.mask] for m in maps])
    t2_vals = np.concatenate([m.t2[m.mask] for m in maps])
    if t1_vals.size == 0:
        raise ValueError("no masked voxels across the map set")

    def moments(vals):
        mean = float(vals.mean())
        std = float(vals.std())
        return mean, std if std > 0.0 else 1.0

    m1, s1 = moments(t1_vals)
    m2, s2 = moments(t2_vals)
    return TargetStats(m1, s1, m2, s2)


# -- persistence ---------------------------------------------------------------


def save_tissue_map(path, tmap: TissueMap, sidecar: dict | None = None) -> None:
    """One MRFT file per map (channels t1, t2, b0, mask) plus a JSON sidecar."""
    stacked = np.stack([tmap.t1, tmap.t2, tmap.b0, tmap.mask.astype(np.float64)])
    save_array(path, stacked)
    if sidecar is not None:
        Path(path).with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_tissue_map(path) -> TissueMap:
    stacked = load_array(path)
    if stacked.shape[0] != 4:
        raise ValueError(f"expected 4 channels in tissue map file, got {stacked.shape}")
    return TissueMap(t1=stacked[0], t2=stacked[1], b0=stacked[2], mask=stacked[3] > 0.5)
