"""Temporal basis construction and series projection."""

import numpy as np
import pytest

from mrfkit.basis import TemporalBasis, build_basis, load_basis, project_series, save_basis
from mrfkit.bloch import FingerprintSeries


def random_dictionary(n, t, seed=0, complex_atoms=True):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, t))
    if complex_atoms:
        d = d + 1j * rng.standard_normal((n, t))
    return d


def test_rank_one_dictionary_full_energy():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(30)
    scales = rng.uniform(0.5, 2.0, size=12)
    d = np.outer(scales, v).astype(complex)
    basis = build_basis(d, r=1)
    assert basis.captured_energy(1) > 1.0 - 1e-12


def test_columns_orthonormal():
    basis = build_basis(random_dictionary(40, 25, 2), r=8)
    gram = basis.vectors.T @ basis.vectors
    assert np.abs(gram - np.eye(8)).max() < 1e-10


def test_sign_convention_deterministic():
    d = random_dictionary(20, 15, 3)
    a = build_basis(d, r=5)
    b = build_basis(d, r=5)
    assert a.vectors.tobytes() == b.vectors.tobytes()
    for j in range(5):
        lead = np.argmax(np.abs(a.vectors[:, j]))
        assert a.vectors[lead, j] > 0


def test_energy_fraction_matches_gram_eigenvalue_oracle():
    d = random_dictionary(50, 20, 4)
    stacked = np.concatenate([d.real, d.imag], axis=0)
    eigvals = np.linalg.eigvalsh(stacked.T @ stacked)[::-1]
    basis = build_basis(d, r=6)
    expected = eigvals[:6].sum() / eigvals.sum()
    assert abs(basis.captured_energy(6) - expected) < 1e-8


def test_rank_bounds_rejected():
    d = random_dictionary(10, 8, 5)
    with pytest.raises(ValueError):
        build_basis(d, r=0)
    with pytest.raises(ValueError):
        build_basis(d, r=9)


def test_complete_basis_reconstructs_series():
    t = 12
    d = random_dictionary(40, t, 6, complex_atoms=False).astype(complex)
    basis = build_basis(d, r=t)
    rng = np.random.default_rng(7)
    s = rng.standard_normal((t, 4, 4)) + 1j * rng.standard_normal((t, 4, 4))
    series = FingerprintSeries(data=s)
    proj = project_series(series, basis)
    re = np.einsum("tr,rhw->thw", basis.vectors, proj[:t])
    im = np.einsum("tr,rhw->thw", basis.vectors, proj[t:])
    back = re + 1j * im
    assert np.abs(back - s).max() < 1e-10


def test_zero_series_projects_to_zero():
    basis = build_basis(random_dictionary(20, 10, 8), r=4)
    series = FingerprintSeries(data=np.zeros((10, 3, 3), dtype=complex))
    assert np.all(project_series(series, basis) == 0)


def test_projection_matches_per_voxel_loop_oracle():
    basis = build_basis(random_dictionary(30, 16, 9), r=5)
    rng = np.random.default_rng(10)
    s = rng.standard_normal((16, 3, 4)) + 1j * rng.standard_normal((16, 3, 4))
    proj = project_series(FingerprintSeries(data=s), basis)
    for i in range(3):
        for j in range(4):
            re = basis.vectors.T @ s[:, i, j].real
            im = basis.vectors.T @ s[:, i, j].imag
            assert np.abs(proj[:5, i, j] - re).max() < 1e-12
            assert np.abs(proj[5:, i, j] - im).max() < 1e-12


def test_projection_linearity():
    basis = build_basis(random_dictionary(30, 16, 11), r=5)
    rng = np.random.default_rng(12)
    s1 = rng.standard_normal((16, 3, 3)) + 1j * rng.standard_normal((16, 3, 3))
    s2 = rng.standard_normal((16, 3, 3)) + 1j * rng.standard_normal((16, 3, 3))
    a = 1.7
    lhs = project_series(FingerprintSeries(data=a * s1 + s2), basis)
    rhs = a * project_series(FingerprintSeries(data=s1), basis) + project_series(
        FingerprintSeries(data=s2), basis
    )
    assert np.abs(lhs - rhs).max() < 1e-10


def test_reconstruction_error_nonincreasing_in_rank():
    d = random_dictionary(40, 20, 13)
    rng = np.random.default_rng(14)
    s = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    errors = []
    for r in range(1, 21):
        basis = build_basis(d, r=r)
        coeff = basis.vectors.T @ np.stack([s.real, s.imag], axis=1)
        back = basis.vectors @ coeff
        err = np.linalg.norm(back[:, 0] + 1j * back[:, 1] - s)
        errors.append(err)
    assert all(errors[i + 1] <= errors[i] + 1e-12 for i in range(19))


def test_singular_values_nonincreasing_nonnegative():
    basis = build_basis(random_dictionary(25, 18, 15), r=6)
    sv = basis.singular_values
    assert np.all(sv >= 0)
    assert np.all(np.diff(sv) <= 1e-12)


def test_temporal_mismatch_rejected():
    basis = build_basis(random_dictionary(20, 10, 16), r=3)
    series = FingerprintSeries(data=np.zeros((12, 2, 2), dtype=complex))
    with pytest.raises(ValueError):
        project_series(series, basis)


def test_basis_persistence_roundtrip(tmp_path):
    basis = build_basis(random_dictionary(20, 10, 17), r=4)
    path = tmp_path / "basis.mrft"
    save_basis(path, basis, meta={"grid_hash": "abc123"})
    back = load_basis(path)
    assert back.rank == 4
    assert back.vectors.tobytes() == basis.vectors.tobytes()
    assert np.abs(back.singular_values - basis.singular_values).max() < 1e-12
