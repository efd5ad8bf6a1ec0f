"""Dictionary matching: recovery, invariances, and compressed agreement."""

import numpy as np
import pytest

from mrfkit.basis import build_basis
from mrfkit.bloch import FingerprintSeries, bloch_simulate, default_schedule, simulate_image_series
from mrfkit.dictmatch import (
    Dictionary,
    build_dictionary,
    load_dictionary,
    match,
    match_fingerprints,
    save_dictionary,
)
from mrfkit.phantom import TissueMap


@pytest.fixture(scope="module")
def schedule():
    return default_schedule(300, seed=42)


@pytest.fixture(scope="module")
def dictionary(schedule):
    t1_axis = np.linspace(400, 2200, 13)
    t2_axis = np.linspace(40, 220, 10)
    return build_dictionary(t1_axis, t2_axis, schedule, t_trunc=300)


def test_single_point_grid(schedule):
    d = build_dictionary([1000.0], [100.0], schedule, t_trunc=100)
    assert d.n_atoms == 1
    assert d.params[0].tolist() == [1000.0, 100.0, 0.0]


def test_physicality_filter_rejects_empty(schedule):
    with pytest.raises(ValueError):
        build_dictionary([50.0], [100.0], schedule, t_trunc=100)


def test_atoms_unit_norm(schedule):
    d = build_dictionary(np.linspace(500, 2000, 10), np.linspace(50, 200, 10), schedule, 200)
    assert d.n_atoms == 100
    norms = np.linalg.norm(d.atoms, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-10


def test_exact_atom_recovers_itself(dictionary):
    j = 37
    signals = dictionary.atoms[j : j + 1] * 5.0
    best, corr = match_fingerprints(signals, dictionary)
    assert best[0] == j
    assert abs(corr[0] - 1.0) < 1e-10


def test_scale_invariance(dictionary, schedule):
    sig = bloch_simulate(1000.0, 90.0, 0.0, schedule)[None, :]
    b1, _ = match_fingerprints(sig, dictionary)
    b2, _ = match_fingerprints(2.7 * sig, dictionary)
    assert b1[0] == b2[0]


def test_phase_invariance(dictionary, schedule):
    sig = bloch_simulate(1400.0, 120.0, 0.0, schedule)[None, :]
    b1, _ = match_fingerprints(sig, dictionary)
    b2, _ = match_fingerprints(np.exp(1j * 0.9) * sig, dictionary)
    assert b1[0] == b2[0]


def test_on_grid_phantom_exact_recovery(dictionary, schedule):
    rng = np.random.default_rng(3)
    t1_axis = np.array(dictionary.grid_spec["t1"])
    t2_axis = np.array(dictionary.grid_spec["t2"])
    h = w = 6
    mask = np.ones((h, w), dtype=bool)
    mask[0, 0] = False
    t1 = rng.choice(t1_axis[4:], size=(h, w))  # upper region so t1 > all chosen t2
    t2 = rng.choice(t2_axis[:5], size=(h, w))
    t1[~mask] = 0
    t2[~mask] = 0
    maps = TissueMap(t1=t1, t2=t2, b0=np.zeros((h, w)), mask=mask)
    series = simulate_image_series(maps, schedule, t_trunc=300)
    t1_hat, t2_hat, corr = match(series, dictionary, mask=mask)
    assert np.array_equal(t1_hat[mask], t1[mask])
    assert np.array_equal(t2_hat[mask], t2[mask])
    assert corr[mask].min() > 1.0 - 1e-9
    assert t1_hat[0, 0] == 0 and corr[0, 0] == 0


def test_off_grid_t1_brackets(dictionary, schedule):
    t1_axis = np.array(dictionary.grid_spec["t1"])
    t2_axis = np.array(dictionary.grid_spec["t2"])
    rng = np.random.default_rng(4)
    for _ in range(20):
        i = rng.integers(4, len(t1_axis) - 1)
        frac = rng.uniform(0.15, 0.85)
        t1_true = t1_axis[i] + frac * (t1_axis[i + 1] - t1_axis[i])
        t2_true = rng.choice(t2_axis[:5])
        sig = bloch_simulate(t1_true, t2_true, 0.0, schedule)[None, :]
        best, _ = match_fingerprints(sig, dictionary)
        t1_hat = dictionary.params[best[0], 0]
        assert t1_hat in (t1_axis[i], t1_axis[i + 1])


def test_temporal_mismatch_rejected(dictionary):
    with pytest.raises(ValueError):
        match_fingerprints(np.zeros((1, 123), dtype=complex), dictionary)


def test_subspace_matching_agrees_with_full(dictionary, schedule):
    # default working rank; comfortably above the 99.9% energy premise
    basis = build_basis(dictionary.atoms, r=10)
    assert basis.captured_energy() >= 0.999

    rng = np.random.default_rng(5)
    n = 300
    t1s = rng.uniform(450, 2100, size=n)
    t2s = rng.uniform(45, 200, size=n)
    keep = t2s < t1s
    from mrfkit.bloch import simulate_voxels

    signals = simulate_voxels(t1s[keep], t2s[keep], np.zeros(keep.sum()), schedule)
    full_best, _ = match_fingerprints(signals, dictionary)
    sub_best, _ = match_fingerprints(signals, dictionary, basis=basis)
    agreement = np.mean(full_best == sub_best)
    assert agreement >= 0.99


def test_dictionary_persistence(tmp_path, dictionary):
    path = tmp_path / "dict.mrfp"
    save_dictionary(path, dictionary)
    back = load_dictionary(path)
    assert back.n_atoms == dictionary.n_atoms
    assert np.abs(back.atoms - dictionary.atoms).max() < 1e-12
    assert back.grid_spec == dictionary.grid_spec
