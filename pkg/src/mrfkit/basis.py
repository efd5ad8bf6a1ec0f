"""Rank-r temporal subspace from a simulated dictionary; series projection."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bloch import FingerprintSeries
from .tensor import load_array, save_array
from .tensorio import sha256_of


@dataclass
class TemporalBasis:
    """Orthonormal temporal basis (T x r) with the full singular spectrum of
    the real/imag-stacked dictionary it came from."""

    vectors: np.ndarray
    singular_values: np.ndarray
    rank: int

    def __post_init__(self):
        if self.vectors.shape[1] != self.rank:
            raise ValueError("basis rank disagrees with vector count")

    @property
    def t_frames(self) -> int:
        return self.vectors.shape[0]

    def captured_energy(self, r: int | None = None) -> float:
        r = self.rank if r is None else r
        s2 = self.singular_values**2
        return float(s2[:r].sum() / s2.sum())


def build_basis(dictionary: np.ndarray, r: int) -> TemporalBasis:
    """Right-singular subspace of an (n_atoms, T) dictionary.

    Real and imaginary parts are stacked into a (2 n_atoms, T) real matrix so a
    single real basis serves both components. Column signs are fixed by making
    each column's largest-magnitude entry positive.
    """
    n_atoms, t_len = dictionary.shape
    if not (1 <= r <= min(n_atoms, t_len)):
        raise ValueError(f"rank {r} out of range [1, {min(n_atoms, t_len)}]")
    stacked = np.concatenate([dictionary.real, dictionary.imag], axis=0)
    _, svals, vt = np.linalg.svd(stacked, full_matrices=False)
    vectors = vt[:r].T.copy()
    for j in range(r):
        lead = np.argmax(np.abs(vectors[:, j]))
        if vectors[lead, j] < 0:
            vectors[:, j] = -vectors[:, j]
    return TemporalBasis(vectors=vectors, singular_values=svals, rank=r)


def project_series(series: FingerprintSeries, basis: TemporalBasis) -> np.ndarray:
    """Per-voxel projection onto the basis: channels [0, r) hold V^T Re(s),
    channels [r, 2r) hold V^T Im(s); output shape (2r, H, W)."""
    t, h, w = series.data.shape
    if t != basis.t_frames:
        raise ValueError(f"series has {t} frames but basis expects {basis.t_frames}")
    flat = series.data.reshape(t, h * w)
    re = basis.vectors.T @ flat.real
    im = basis.vectors.T @ flat.imag
    return np.concatenate([re, im], axis=0).reshape(2 * basis.rank, h, w)


def project_fingerprints(signals: np.ndarray, basis: TemporalBasis) -> np.ndarray:
    """Project (V, T) complex fingerprints to (V, r) complex coefficients."""
    return signals @ basis.vectors


def save_basis(path, basis: TemporalBasis, meta: dict | None = None) -> None:
    save_array(path, basis.vectors)
    sidecar = {
        "t_frames": basis.t_frames,
        "rank": basis.rank,
        "singular_values": basis.singular_values.tolist(),
    }
    if meta:
        sidecar.update(meta)
    Path(path).with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_basis(path) -> TemporalBasis:
    vectors = load_array(path)
    sidecar = json.loads(Path(path).with_suffix(".json").read_text())
    return TemporalBasis(
        vectors=vectors,
        singular_values=np.asarray(sidecar["singular_values"]),
        rank=sidecar["rank"],
    )


def basis_metadata(grid_spec: dict, t_trunc: int) -> dict:
    return {"grid_hash": sha256_of(grid_spec), "t_trunc": t_trunc}
