import numpy as np
import pytest

from spiral4d.autodiff import Graph
from spiral4d.labels import MotionLabel, label_signal, synth_dataset
from spiral4d.model import (TrainConfig, decode_frame, decoder_channels,
                            encode, generate, init_generator, load_generator,
                            loss, save_generator, sequence_loss, train)
from spiral4d.autodiff import Tensor


@pytest.fixture(scope="module")
def setup(small_setup):
    template, hierarchy, tables = small_setup
    params = init_generator(hierarchy, tables, seed=0)
    return template, hierarchy, tables, params


def short_label(T=6, expression="happy", scale=1.0):
    a0 = max(1, T // 3)
    a1 = max(a0, (2 * T) // 3)
    return MotionLabel(expression=expression, frames=T, t_onset=0,
                       t_apex_start=min(a0, T - 1), t_apex_end=min(a1, T - 1),
                       t_offset_end=T - 1, scale=scale)


# ---- encode ----

def test_encode_zero_signal_zero_params(setup):
    template, hierarchy, tables, _ = setup
    params = init_generator(hierarchy, tables, seed=0)
    for t in (params.lstm.w_input, params.lstm.w_recur, params.lstm.bias):
        t.data[:] = 0
    zs = encode(Graph(record=False), np.zeros((6, 4), dtype=np.float32), params)
    for z in zs:
        np.testing.assert_array_equal(z.data, np.zeros((1, 64), dtype=np.float32))


def test_encode_causal_prefix(setup):
    _, _, _, params = setup
    sig = label_signal(short_label(8), np.float32)
    other = sig.copy()
    other[:, 5:] = 0.7  # differ only after t=4
    za = encode(Graph(record=False), sig, params)
    zb = encode(Graph(record=False), other, params)
    for t in range(5):
        np.testing.assert_array_equal(za[t].data, zb[t].data)
    assert not np.array_equal(za[6].data, zb[6].data)


# ---- decode ----

def test_decoder_channel_chain():
    assert decoder_channels(5) == [(64, 32), (32, 16), (16, 8), (8, 3)]
    assert decoder_channels(4) == [(64, 32), (32, 16), (16, 3)]
    assert decoder_channels(3) == [(64, 32), (32, 3)]
    assert decoder_channels(2) == [(64, 3)]


def test_decode_shape_trace(setup):
    template, hierarchy, tables, params = setup
    g = Graph(record=False)
    z = Tensor(np.zeros((1, 64), dtype=np.float32))
    out = decode_frame(g, z, hierarchy, tables, params)
    assert out.shape == (template.n_vertices, 3)


def test_zero_params_generate_reproduces_neutral_bitwise(setup):
    template, hierarchy, tables, _ = setup
    params = init_generator(hierarchy, tables, seed=1)
    for _, t in params.tensors():
        t.data[:] = 0
    frames = generate(template, short_label(5), params, hierarchy, tables)
    assert len(frames) == 5
    for f in frames:
        assert np.array_equal(f.vertices, template.vertices)
        assert np.array_equal(f.faces, template.faces)


def test_generate_frame_count_and_topology_check(setup, tetra):
    template, hierarchy, tables, params = setup
    frames = generate(template, short_label(7), params, hierarchy, tables)
    assert len(frames) == 7
    with pytest.raises(ValueError, match="topology"):
        generate(tetra, short_label(4), params, hierarchy, tables)


def test_generation_translation_equivariance(setup):
    template, hierarchy, tables, params = setup
    u = np.array([5.0, -3.0, 2.0])
    moved = template.with_vertices(template.vertices + u)
    f0 = generate(template, short_label(4), params, hierarchy, tables)
    f1 = generate(moved, short_label(4), params, hierarchy, tables)
    for a, b in zip(f0, f1):
        np.testing.assert_array_equal(b.vertices, a.vertices + u)


# ---- loss ----

def test_loss_zero_for_identical(rng):
    frames = [rng.normal(size=(10, 3)) for _ in range(4)]
    assert loss(frames, frames) == 0.0


def test_loss_constant_offset(rng):
    gt = [rng.normal(size=(10, 3)) for _ in range(4)]
    c = 0.75
    pred = [f + c for f in gt]
    assert abs(loss(pred, gt) - c) < 1e-12  # L_r = |c|, L_c = 0


def test_loss_linear_drift(rng):
    gt = [rng.normal(size=(8, 3)) for _ in range(5)]
    c = 0.4
    pred = [f + t * c for t, f in enumerate(gt)]
    t_mean = np.mean(np.arange(5))
    expect = c * t_mean + c  # L_r + L_c
    assert abs(loss(pred, gt) - expect) < 1e-9


def test_loss_shift_invariance(rng):
    gt = [rng.normal(size=(6, 3)) for _ in range(3)]
    pred = [f + rng.normal(size=(6, 3)) * 0.1 for f in gt]
    l0 = loss(pred, gt)
    shift = 13.5
    l1 = loss([p + shift for p in pred], [f + shift for f in gt])
    assert abs(l0 - l1) < 1e-9


def test_loss_empty_errors():
    with pytest.raises(ValueError):
        loss([], [])


def test_sequence_loss_matches_numeric(setup, rng):
    preds = [Tensor(rng.normal(size=(5, 3))) for _ in range(3)]
    gts = [rng.normal(size=(5, 3)) for _ in range(3)]
    out = sequence_loss(Graph(record=False), preds, gts)
    assert abs(float(out.data) - loss([p.data for p in preds], gts)) < 1e-12


# ---- train ----

def test_train_zero_epochs_returns_initial(setup, template162):
    template, hierarchy, tables, _ = setup
    seqs, _ = synth_dataset(template, n_subjects=1, expressions=("happy",),
                            frames=4, seed=0)
    cfg = TrainConfig(epochs=0, seed=3)
    params, history = train(seqs, cfg, hierarchy, tables)
    fresh = init_generator(hierarchy, tables, seed=3, dtype=cfg.dtype)
    assert history == []
    for (_, a), (_, b) in zip(params.tensors(), fresh.tensors()):
        np.testing.assert_array_equal(a.data, b.data)


def test_train_deterministic_history(setup):
    template, hierarchy, tables, _ = setup
    seqs, _ = synth_dataset(template, n_subjects=2,
                            expressions=("happy", "sad"), frames=5, seed=4)
    cfg = TrainConfig(epochs=3, seed=9)
    _, h1 = train(seqs, cfg, hierarchy, tables)
    _, h2 = train(seqs, cfg, hierarchy, tables)
    assert h1 == h2
    assert [h["epoch"] for h in h1] == [1, 2, 3]
    np.testing.assert_allclose(h1[1]["lr"], 0.001 * 0.99)


def test_train_loss_decreases(setup):
    template, hierarchy, tables, _ = setup
    seqs, _ = synth_dataset(template, n_subjects=1, expressions=("surprise",),
                            frames=6, seed=2)
    cfg = TrainConfig(epochs=25, seed=0)
    _, history = train(seqs, cfg, hierarchy, tables)
    assert history[-1]["loss"] < history[0]["loss"]


def test_checkpoint_roundtrip(setup, tmp_path):
    template, hierarchy, tables, params = setup
    path = tmp_path / "gen.s4dt"
    save_generator(path, params, meta={"hierarchy_hash": "abc"})
    loaded, meta = load_generator(path)
    assert meta["hierarchy_hash"] == "abc"
    assert loaded.level_sizes == params.level_sizes
    for (na, a), (nb, b) in zip(params.tensors(), loaded.tensors()):
        assert na == nb
        np.testing.assert_array_equal(a.data, b.data)
    lab = short_label(3)
    f0 = generate(template, lab, params, hierarchy, tables)
    f1 = generate(template, lab, loaded, hierarchy, tables)
    for a, b in zip(f0, f1):
        np.testing.assert_array_equal(a.vertices, b.vertices)
