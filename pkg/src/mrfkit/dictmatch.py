"""Classical dictionary-matching baseline: simulate atoms over a parameter
grid, then pick the best-correlated atom per voxel."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import TemporalBasis, project_fingerprints
from .bloch import FingerprintSeries, SequenceSchedule, simulate_voxels
from .tensorio import load_named, save_named


@dataclass
class Dictionary:
    """L2-normalized complex atoms (n, T) with their generating parameters."""

    atoms: np.ndarray
    params: np.ndarray  # rows of (t1 ms, t2 ms, b0 hz)
    grid_spec: dict

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def t_frames(self) -> int:
        return self.atoms.shape[1]


def build_dictionary(
    t1_values,
    t2_values,
    schedule: SequenceSchedule,
    t_trunc: int,
    b0_values=(0.0,),
) -> Dictionary:
    """One atom per physically valid (t2 < t1) grid point, truncated and unit-normalized."""
    t1_values = np.asarray(t1_values, dtype=np.float64)
    t2_values = np.asarray(t2_values, dtype=np.float64)
    b0_values = np.asarray(b0_values, dtype=np.float64)
    if t1_values.size == 0 or t2_values.size == 0 or b0_values.size == 0:
        raise ValueError("dictionary axes must be non-empty")
    combos = [
        (t1, t2, b0)
        for t1 in t1_values
        for t2 in t2_values
        for b0 in b0_values
        if t2 < t1
    ]
    if not combos:
        raise ValueError("no physically valid grid points (need t2 < t1 somewhere)")
    params = np.array(combos)
    signals = simulate_voxels(params[:, 0], params[:, 1], params[:, 2], schedule)
    atoms = signals[:, :t_trunc]
    norms = np.linalg.norm(atoms, axis=1, keepdims=True)
    atoms = atoms / norms
    grid_spec = {
        "t1": t1_values.tolist(),
        "t2": t2_values.tolist(),
        "b0": b0_values.tolist(),
        "t_trunc": int(t_trunc),
    }
    return Dictionary(atoms=atoms, params=params, grid_spec=grid_spec)


def match_fingerprints(
    signals: np.ndarray, dictionary: Dictionary, basis: TemporalBasis | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Best atom index and normalized correlation for (V, T) fingerprints.

    The metric is |<atom, s>| / ||s|| with unit atoms (phase-insensitive).
    With a basis, both atoms and signals are projected to rank r first and the
    projected atoms re-normalized. Ties resolve to the lowest atom index.
    """
    if signals.shape[1] != dictionary.t_frames:
        raise ValueError(
            f"signals have {signals.shape[1]} frames, dictionary {dictionary.t_frames}"
        )
    atoms = dictionary.atoms
    if basis is not None:
        atoms = project_fingerprints(atoms, basis)
        atoms = atoms / np.linalg.norm(atoms, axis=1, keepdims=True)
        signals = project_fingerprints(signals, basis)
    corr = np.abs(np.conj(atoms) @ signals.T)  # (n_atoms, V)
    norms = np.linalg.norm(signals, axis=1)
    best = np.argmax(corr, axis=0)
    values = corr[best, np.arange(signals.shape[0])] / np.where(norms > 0, norms, 1.0)
    return best, values


def match(
    series: FingerprintSeries,
    dictionary: Dictionary,
    mask: np.ndarray | None = None,
    basis: TemporalBasis | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxelwise matching of a series; returns (t1_map, t2_map, correlation_map).

    Background voxels (outside ``mask``, default: voxels with all-zero signal)
    are left at zero.
    """
    t, h, w = series.data.shape
    if mask is None:
        mask = np.any(series.data != 0, axis=0)
    flat = series.data.reshape(t, h * w).T
    sel = mask.reshape(-1)
    t1_map = np.zeros(h * w)
    t2_map = np.zeros(h * w)
    corr_map = np.zeros(h * w)
    if sel.any():
        best, corr = match_fingerprints(flat[sel], dictionary, basis)
        t1_map[sel] = dictionary.params[best, 0]
        t2_map[sel] = dictionary.params[best, 1]
        corr_map[sel] = corr
    return t1_map.reshape(h, w), t2_map.reshape(h, w), corr_map.reshape(h, w)


def save_dictionary(path, dictionary: Dictionary) -> None:
    save_named(
        path,
        {
            "atoms_real": dictionary.atoms.real,
            "atoms_imag": dictionary.atoms.imag,
            "params": dictionary.params,
        },
    )
    Path(path).with_suffix(".json").write_text(json.dumps(dictionary.grid_spec, indent=2))


def load_dictionary(path) -> Dictionary:
    table = load_named(path)
    grid_spec = json.loads(Path(path).with_suffix(".json").read_text())
    return Dictionary(
        atoms=table["atoms_real"] + 1j * table["atoms_imag"],
        params=table["params"],
        grid_spec=grid_spec,
    )
