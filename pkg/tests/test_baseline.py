import numpy as np
import pytest

from spiral4d.baseline import (PcaBasis, blendshape_decode, fit_pca,
                               generate_baseline, load_baseline,
                               save_baseline, train_baseline)
from spiral4d.labels import MotionLabel, synth_dataset
from spiral4d.model import TrainConfig


# ---- PCA ----

def test_rank_one_data_recovers_direction(rng):
    u = rng.normal(size=30)
    u /= np.linalg.norm(u)
    mean = rng.normal(size=30)
    data = [mean + a * u for a in np.linspace(-2, 2, 9)]
    basis = fit_pca([d.reshape(10, 3) for d in data], k=2)
    # single nonzero-variance component equal to +-u
    assert basis.variance[0] > 1e-6
    assert basis.variance[1] < 1e-12
    assert min(np.linalg.norm(basis.components[0] - u),
               np.linalg.norm(basis.components[0] + u)) < 1e-9


def test_components_orthonormal(rng):
    data = [rng.normal(size=(12, 3)) for _ in range(20)]
    basis = fit_pca(data, k=8)
    gram = basis.components @ basis.components.T
    np.testing.assert_allclose(gram, np.eye(8), atol=1e-6)


def test_reconstruction_error_nonincreasing_in_k(rng):
    data = [rng.normal(size=(10, 3)) for _ in range(15)]
    x = np.stack([d.reshape(-1) for d in data])
    errs = []
    for k in (1, 3, 7, 12, 14):
        basis = fit_pca(data, k=k)
        rec = basis.reconstruct(basis.project(x))
        errs.append(float(np.linalg.norm(rec - x)))
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))


def test_near_full_rank_reconstruction(rng):
    data = [rng.normal(size=(8, 3)) for _ in range(12)]
    x = np.stack([d.reshape(-1) for d in data])
    basis = fit_pca(data, k=11)  # sample count - 1
    rec = basis.reconstruct(basis.project(x))
    assert np.abs(rec - x).max() < 1e-5


def test_pca_matches_covariance_eigendecomposition(rng):
    data = [rng.normal(size=(7, 3)) for _ in range(20)]
    x = np.stack([d.reshape(-1) for d in data])
    basis = fit_pca(data, k=5)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    np.testing.assert_allclose(basis.variance, evals[:5], rtol=1e-9)
    for i in range(5):
        dot = abs(float(basis.components[i] @ evecs[:, i]))
        assert abs(dot - 1.0) < 1e-6  # same axis up to sign
    # reconstruction agreement with the eigensolver basis
    proj_e = centered @ evecs[:, :5]
    rec_e = x.mean(axis=0) + proj_e @ evecs[:, :5].T
    rec_b = basis.reconstruct(basis.project(x))
    np.testing.assert_allclose(rec_b, rec_e, atol=1e-6)


def test_pca_k_exceeds_samples(rng):
    with pytest.raises(ValueError):
        fit_pca([rng.normal(size=(5, 3)) for _ in range(4)], k=5)


def test_pca_sign_deterministic(rng):
    data = [rng.normal(size=(9, 3)) for _ in range(12)]
    b1 = fit_pca(data, k=4)
    b2 = fit_pca(list(data), k=4)
    np.testing.assert_array_equal(b1.components, b2.components)
    for comp in b1.components:
        assert comp[np.argmax(np.abs(comp))] > 0


# ---- blendshape decode ----

def test_decode_zero_latent_gives_mean(rng):
    basis = fit_pca([rng.normal(size=(6, 3)) for _ in range(10)], k=4)
    out = blendshape_decode(np.zeros(4), basis)
    np.testing.assert_allclose(out.reshape(-1), basis.mean, atol=1e-12)


def test_decode_linearity(rng):
    basis = fit_pca([rng.normal(size=(6, 3)) for _ in range(10)], k=4)
    z1, z2 = rng.normal(size=4), rng.normal(size=4)
    lhs = blendshape_decode(z1 + z2, basis) + basis.mean.reshape(6, 3)
    rhs = blendshape_decode(z1, basis) + blendshape_decode(z2, basis)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_decode_latent_size_checked(rng):
    basis = fit_pca([rng.normal(size=(6, 3)) for _ in range(10)], k=4)
    with pytest.raises(ValueError):
        blendshape_decode(np.zeros(7), basis)


# ---- baseline training ----

@pytest.fixture(scope="module")
def tiny_data(template162):
    # 2 subjects x 2 expressions x 20 frames = 80 samples, enough for the
    # 64-component basis the baseline contract requires
    seqs, _ = synth_dataset(template162, n_subjects=2,
                            expressions=("happy", "surprise"), frames=20,
                            seed=8)
    return seqs


def test_train_baseline_and_generate(tiny_data, template162, tmp_path):
    cfg = TrainConfig(epochs=4, seed=2)
    params, history = train_baseline(tiny_data, cfg)
    assert len(history) == 4
    assert history[-1]["loss"] < history[0]["loss"] * 1.5  # sanity, not tuned
    seq = tiny_data[0]
    frames = generate_baseline(seq.neutral, seq.label, params)
    assert len(frames) == seq.n_frames
    assert np.array_equal(frames[0].faces, seq.neutral.faces)
    # checkpoint roundtrip is bit-exact
    path = tmp_path / "base.s4dt"
    save_baseline(path, params, meta={"hierarchy_hash": "h"})
    loaded, meta = load_baseline(path)
    assert meta["hierarchy_hash"] == "h"
    f2 = generate_baseline(seq.neutral, seq.label, loaded)
    for a, b in zip(frames, f2):
        np.testing.assert_array_equal(a.vertices, b.vertices)


def test_train_baseline_deterministic(tiny_data):
    cfg = TrainConfig(epochs=2, seed=5)
    _, h1 = train_baseline(tiny_data, cfg)
    _, h2 = train_baseline(tiny_data, cfg)
    assert h1 == h2
