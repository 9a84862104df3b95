import numpy as np
import pytest

from spiral4d import shapes
from spiral4d.labels import (EXPRESSIONS, SCALE_FLOOR, ExpressionFieldModel,
                             ExpressionSequence, ExpressionStats, MotionLabel,
                             amplitude, extremeness_scale, label_signal,
                             load_dataset, load_split, mean_abs_deformation,
                             save_dataset, split_sequences, synth_dataset,
                             temporal_subsample)


def canon_label(T=100, scale=1.0, expression="happy"):
    return MotionLabel(expression=expression, frames=T, t_onset=10,
                       t_apex_start=30, t_apex_end=80, t_offset_end=95,
                       scale=scale)


# ---- label signal ----

def test_signal_piecewise_values():
    e = label_signal(canon_label())
    row = EXPRESSIONS.index("happy")
    assert e[row, 55] == 1.0
    assert e[row, 20] == 0.5
    assert e[row, 5] == 0.0
    assert e[row, 98] == 0.0


def test_signal_scaling_is_linear():
    full = label_signal(canon_label(scale=1.0))
    half = label_signal(canon_label(scale=0.5))
    np.testing.assert_allclose(half, 0.5 * full, atol=1e-15)


def test_signal_one_hot_rows():
    e = label_signal(canon_label(expression="disgust"))
    nonzero_rows = {int(r) for r, t in zip(*np.nonzero(e))}
    assert nonzero_rows == {EXPRESSIONS.index("disgust")}


def test_amplitude_monotone_on_ramps():
    a = amplitude(canon_label())
    assert (np.diff(a[10:31]) >= 0).all()
    assert (np.diff(a[80:96]) <= 0).all()


def test_label_invariants_enforced():
    with pytest.raises(ValueError):
        MotionLabel("happy", 100, 30, 10, 80, 95)
    with pytest.raises(ValueError):
        MotionLabel("happy", 100, 10, 30, 80, 120)
    with pytest.raises(ValueError):
        MotionLabel("happy", 100, 10, 30, 80, 95, scale=0.0)
    with pytest.raises(ValueError):
        MotionLabel("bored", 100, 10, 30, 80, 95)


# ---- extremeness scale ----

@pytest.fixture
def stats():
    return ExpressionStats(mean={"happy": 2.0}, std={"happy": 0.5})


def test_scale_at_mean_is_half(stats):
    assert extremeness_scale(2.0, stats, "happy") == 0.5


def test_scale_clips_above(stats):
    assert extremeness_scale(2.5, stats, "happy") == 1.0
    assert extremeness_scale(9.0, stats, "happy") == 1.0


def test_scale_floor_below(stats):
    assert extremeness_scale(1.5, stats, "happy") == SCALE_FLOOR
    assert extremeness_scale(-5.0, stats, "happy") == SCALE_FLOOR


def test_scale_monotone(stats):
    values = [extremeness_scale(m, stats, "happy")
              for m in np.linspace(0.0, 4.0, 33)]
    assert (np.diff(values) >= 0).all()
    assert all(SCALE_FLOOR <= v <= 1.0 for v in values)


# ---- sequences ----

def make_sequence(mesh, disps, label, subject="s0"):
    frames = [mesh.with_vertices(mesh.vertices + d) for d in disps]
    return ExpressionSequence(neutral=mesh, frames=frames, label=label,
                              subject=subject)


def test_mean_abs_deformation_trivials(ico162):
    label = MotionLabel("happy", 3, 0, 1, 1, 2)
    zero = make_sequence(ico162, [np.zeros((162, 3))] * 3, label)
    assert mean_abs_deformation(zero) == 0.0
    one_mm = np.zeros((3, 162, 3))
    one_mm[:, :, 0] = 1.0
    seq = make_sequence(ico162, one_mm, label)
    assert abs(mean_abs_deformation(seq) - 1.0) < 1e-12


def test_topology_mismatch_rejected(ico162, tetra):
    label = MotionLabel("happy", 1, 0, 0, 0, 0)
    with pytest.raises(ValueError, match="topology"):
        ExpressionSequence(neutral=ico162, frames=[tetra], label=label,
                           subject="s")


def test_subsample_identity_and_counts(ico162):
    label = canon_label(T=100)
    seq = make_sequence(ico162, [np.zeros((162, 3))] * 100, label)
    assert temporal_subsample(seq, 1) is seq
    sub = temporal_subsample(seq, 5)
    assert sub.n_frames == 20
    lab = sub.label
    assert (lab.t_onset, lab.t_apex_start, lab.t_apex_end, lab.t_offset_end) \
        == (2, 6, 16, 19)
    # 60 fps capture, stride 5 -> effective 12 fps
    assert 60 / 5 == 12


# ---- synthetic dataset ----

@pytest.fixture(scope="module")
def synth(template162):
    return synth_dataset(template162, n_subjects=3, frames=12, seed=11)


def test_synth_counts_and_determinism(template162, synth):
    seqs, stats = synth
    assert len(seqs) == 3 * 6
    seqs2, stats2 = synth_dataset(template162, n_subjects=3, frames=12, seed=11)
    for a, b in zip(seqs, seqs2):
        assert a.subject == b.subject and a.label == b.label
        assert np.array_equal(a.neutral.vertices, b.neutral.vertices)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.vertices, fb.vertices)
    assert stats.mean == stats2.mean and stats.std == stats2.std


def test_synth_zero_amplitude_frames_near_identity(synth):
    seqs, _ = synth
    for seq in seqs[:4]:
        t0 = seq.frames[0].vertices - seq.neutral.vertices
        assert np.linalg.norm(t0, axis=1).mean() < 0.05  # noise only


def test_synth_apex_contains_peak_deformation(synth):
    seqs, _ = synth
    for seq in seqs:
        disp = np.linalg.norm(seq.displacements(), axis=2).mean(axis=1)
        peak = int(np.argmax(disp))
        assert seq.label.t_apex_start <= peak <= seq.label.t_apex_end


def test_synth_scales_in_range(synth):
    seqs, _ = synth
    for seq in seqs:
        assert SCALE_FLOOR <= seq.label.scale <= 1.0


def test_synth_m_matches_field_oracle(template162):
    # no subject perturbation: every frame is exactly the class field at the
    # realized amplitude, so m_i must match a numeric field integral
    seqs, _ = synth_dataset(template162, n_subjects=2, frames=15, seed=5,
                            perturbation_mm=0.0, noise_std=0.001)
    fields = ExpressionFieldModel(template162)

    def field_mean(expr, a):
        return np.linalg.norm(fields.deformation(expr, float(a)),
                              axis=1).mean()

    for seq in seqs:
        expr = seq.label.expression
        disp = np.linalg.norm(seq.displacements(), axis=2).mean(axis=1)
        apex_mid = (seq.label.t_apex_start + seq.label.t_apex_end) // 2
        target = disp[apex_mid]
        # invert the (monotone) amplitude -> mean-norm map at the apex
        lo, hi = 0.0, 1.5
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if field_mean(expr, mid) < target:
                lo = mid
            else:
                hi = mid
        g = 0.5 * (lo + hi)
        base = MotionLabel(expr, seq.label.frames, seq.label.t_onset,
                           seq.label.t_apex_start, seq.label.t_apex_end,
                           seq.label.t_offset_end)
        amp = g * amplitude(base)
        oracle = np.mean([field_mean(expr, a) for a in amp])
        m = mean_abs_deformation(seq)
        assert abs(m - oracle) / oracle < 0.02


# ---- dataset directory I/O ----

def test_dataset_roundtrip(tmp_path, template162):
    seqs, stats = synth_dataset(template162, n_subjects=2,
                                expressions=("happy", "sad"), frames=6, seed=2)
    root = tmp_path / "data"
    save_dataset(root, seqs, test_subjects=["subject_001"])
    loaded, lstats = load_dataset(root)
    assert len(loaded) == len(seqs)
    by_key = {(s.subject, s.label.expression): s for s in loaded}
    for seq in seqs:
        got = by_key[(seq.subject, seq.label.expression)]
        assert got.n_frames == seq.n_frames
        assert np.abs(got.neutral.vertices - seq.neutral.vertices).max() < 1e-6
        lab = got.label
        assert (lab.t_onset, lab.t_apex_start, lab.t_apex_end,
                lab.t_offset_end) == (seq.label.t_onset, seq.label.t_apex_start,
                                      seq.label.t_apex_end,
                                      seq.label.t_offset_end)
        # s recomputed from data must be close to the generator's labelling
        assert abs(lab.scale - seq.label.scale) < 0.05
    assert load_split(root) == {"subject_001"}
    train, test = split_sequences(loaded, load_split(root))
    assert {s.subject for s in train} == {"subject_000"}
    assert {s.subject for s in test} == {"subject_001"}


def test_single_sequence_directory(tmp_path, template162):
    seqs, _ = synth_dataset(template162, n_subjects=1,
                            expressions=("surprise",), frames=10, seed=0)
    root = tmp_path / "one"
    save_dataset(root, seqs)
    loaded, _ = load_dataset(root)
    assert len(loaded) == 1 and loaded[0].n_frames == 10


def test_loader_rejects_topology_mismatch(tmp_path, template162, tetra):
    from spiral4d.mesh import save_mesh
    seqs, _ = synth_dataset(template162, n_subjects=1,
                            expressions=("happy",), frames=3, seed=0)
    root = tmp_path / "bad"
    save_dataset(root, seqs)
    save_mesh(tetra, root / "subject_000" / "happy" / "frame_0001.obj")
    with pytest.raises(ValueError, match="frame_0001"):
        load_dataset(root)


def test_loader_requires_label_file(tmp_path, template162):
    seqs, _ = synth_dataset(template162, n_subjects=1,
                            expressions=("happy",), frames=3, seed=0)
    root = tmp_path / "nolabel"
    save_dataset(root, seqs)
    (root / "subject_000" / "happy" / "label.txt").unlink()
    with pytest.raises(FileNotFoundError, match="label"):
        load_dataset(root)
