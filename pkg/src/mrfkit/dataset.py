"""Dataset synthesis and loading: phantoms through aliasing to network inputs.

A dataset directory holds one subdirectory per truncation length (t0200,
t0400, ...), each complete on its own: a manifest, the temporal basis, and per
sample the compressed input, the ground-truth map, and the aliased series.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .basis import TemporalBasis, build_basis, load_basis, project_series, save_basis
from .bloch import (
    FingerprintSeries,
    SequenceSchedule,
    default_schedule,
    load_schedule_csv,
    save_schedule_csv,
    simulate_voxels,
)
from .config import DataError, RunConfig
from .dictmatch import Dictionary, build_dictionary
from .phantom import TargetStats, TissueMap, load_tissue_map, make_phantom, save_tissue_map, standardize_targets
from .radial import alias_series, golden_angle_trajectory
from .tensor import load_array, save_array
from .tensorio import sha256_of
from .training import Sample

SCHEDULE_SEED_OFFSET = 1_000_003
NOISE_SEED_OFFSET = 7_777_777


def t_dir_name(t_trunc: int) -> str:
    return f"t{t_trunc:04d}"


def make_schedule(cfg: RunConfig, seed: int) -> SequenceSchedule:
    if cfg.sequence.schedule_file:
        return load_schedule_csv(cfg.sequence.schedule_file, inversion=cfg.sequence.inversion)
    sched = default_schedule(cfg.sequence.n_rep, seed=seed + SCHEDULE_SEED_OFFSET, n_lobes=cfg.sequence.n_lobes)
    sched.inversion = cfg.sequence.inversion
    return sched


def add_complex_noise(
    data: np.ndarray, snr_db: float, rng: np.random.Generator, reference: float
) -> np.ndarray:
    """Complex Gaussian noise at the given SNR (dB) relative to ``reference``,
    the mean fingerprint magnitude over tissue voxels."""
    sigma = reference * 10.0 ** (-snr_db / 20.0) / np.sqrt(2.0)
    noise = rng.normal(0.0, sigma, data.shape) + 1j * rng.normal(0.0, sigma, data.shape)
    return data + noise


def simulate_dataset(
    cfg: RunConfig,
    out_dir,
    seed: int,
    t_truncs: list | None = None,
    snr_db: float | None = None,
) -> dict:
    """Full synthesis pipeline; returns the top-level manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_truncs = sorted(t_truncs or cfg.compress.t_truncs)
    n_rep = cfg.sequence.n_rep
    if any(not (1 <= t <= n_rep) for t in t_truncs):
        raise DataError(f"truncations {t_truncs} outside [1, {n_rep}]")
    t_max = max(t_truncs)
    size = cfg.phantom.size

    schedule = make_schedule(cfg, seed)
    save_schedule_csv(out_dir / "schedule.csv", schedule)

    phantom_cfg = cfg.phantom.to_phantom_config()
    maps = [
        make_phantom(size, cfg.phantom.n_shapes, seed=seed + i, cfg=phantom_cfg)
        for i in range(cfg.phantom.count)
    ]
    stats = standardize_targets(maps)

    # one full-length simulation and one full-length aliasing pass per sample;
    # every truncation is a prefix of both
    traj = golden_angle_trajectory(
        frames=t_max,
        samples_per_spoke=cfg.samples_per_spoke(),
        spokes_per_frame=cfg.kspace.spokes_per_frame,
    )
    clean, aliased, references = [], [], []
    for i, tmap in enumerate(maps):
        series = _simulate_series(tmap, schedule, t_max)
        ref = float(np.abs(series.data[:, tmap.mask]).mean()) if tmap.mask.any() else 0.0
        alias = alias_series(series, traj, path=cfg.kspace.nufft_path)
        if snr_db is not None:
            rng = np.random.default_rng([seed + i, NOISE_SEED_OFFSET])
            alias = FingerprintSeries(
                data=add_complex_noise(alias.data, snr_db, rng, ref), kind="aliased"
            )
        clean.append(series)
        aliased.append(alias)
        references.append(ref)

    grid_t1 = cfg.compress.axis("t1")
    grid_t2 = cfg.compress.axis("t2")
    dictionary_full = build_dictionary(
        grid_t1, grid_t2, schedule, t_trunc=n_rep, b0_values=cfg.compress.b0_values
    )

    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": seed,
        "snr_db": snr_db,
        "n_samples": len(maps),
        "size": size,
        "t_truncs": t_truncs,
        "rank": cfg.compress.rank,
        "stats": stats.to_dict(),
        "subdirs": [t_dir_name(t) for t in t_truncs],
    }

    for t in t_truncs:
        sub = out_dir / t_dir_name(t)
        sub.mkdir(exist_ok=True)
        atoms_t = dictionary_full.atoms[:, :t]
        atoms_t = atoms_t / np.linalg.norm(atoms_t, axis=1, keepdims=True)
        basis = build_basis(atoms_t, r=cfg.compress.rank)
        save_basis(
            sub / "basis.mrft",
            basis,
            meta={"grid_hash": sha256_of(dictionary_full.grid_spec), "t_trunc": t},
        )
        for i, tmap in enumerate(maps):
            alias_t = FingerprintSeries(data=aliased[i].data[:t], kind="aliased")
            inputs = project_series(alias_t, basis).astype(np.float32)
            save_array(sub / f"input_{i:04d}.mrft", inputs)
            save_tissue_map(
                sub / f"truth_{i:04d}.mrft",
                tmap,
                sidecar={"seed": seed + i, "n_shapes": cfg.phantom.n_shapes, "reference": references[i]},
            )
            save_array(sub / f"alias_{i:04d}_real.mrft", alias_t.data.real.astype(np.float32))
            save_array(sub / f"alias_{i:04d}_imag.mrft", alias_t.data.imag.astype(np.float32))
        sub_manifest = dict(manifest, t_trunc=t, subdirs=None)
        (sub / "manifest.json").write_text(json.dumps(sub_manifest, indent=2))

    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _simulate_series(tmap: TissueMap, schedule: SequenceSchedule, t_trunc: int) -> FingerprintSeries:
    from .bloch import simulate_image_series

    return simulate_image_series(tmap, schedule, t_trunc)


# -- loading -------------------------------------------------------------------------


class DatasetSplit:
    """Loaded dataset subdirectory: samples, stats, basis, manifest."""

    def __init__(self, directory):
        self.dir = Path(directory)
        manifest_path = self.dir / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"not a dataset directory (no manifest): {self.dir}")
        self.manifest = json.loads(manifest_path.read_text())
        self.stats = TargetStats.from_dict(self.manifest["stats"])
        self.basis = load_basis(self.dir / "basis.mrft")
        self.samples: list[Sample] = []
        for i in range(self.manifest["n_samples"]):
            inputs = load_array(self.dir / f"input_{i:04d}.mrft").astype(np.float64)
            truth = load_tissue_map(self.dir / f"truth_{i:04d}.mrft")
            target = self.stats.standardize(truth.t1, truth.t2)
            target[:, ~truth.mask] = 0.0
            self.samples.append(Sample(inputs=inputs, target=target, truth=truth))

    def aliased_series(self, i: int) -> FingerprintSeries:
        real = load_array(self.dir / f"alias_{i:04d}_real.mrft").astype(np.float64)
        imag = load_array(self.dir / f"alias_{i:04d}_imag.mrft").astype(np.float64)
        return FingerprintSeries(data=real + 1j * imag, kind="aliased")

    @property
    def n_samples(self) -> int:
        return self.manifest["n_samples"]

    @property
    def t_trunc(self) -> int:
        return self.manifest["t_trunc"]

    @property
    def rank(self) -> int:
        return self.manifest["rank"]


def open_split(data_dir, t_trunc: int | None = None) -> DatasetSplit:
    """Open a dataset directory, optionally selecting a truncation subdir."""
    data_dir = Path(data_dir)
    if t_trunc is not None:
        return DatasetSplit(data_dir / t_dir_name(t_trunc))
    if (data_dir / "manifest.json").exists():
        manifest = json.loads((data_dir / "manifest.json").read_text())
        subs = manifest.get("subdirs")
        if subs:
            if len(subs) > 1:
                raise DataError(
                    f"dataset has multiple truncations {subs}; pass --t-trunc to pick one"
                )
            return DatasetSplit(data_dir / subs[0])
        return DatasetSplit(data_dir)
    raise DataError(f"no dataset manifest under {data_dir}")
