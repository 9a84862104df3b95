"""Acceptance criteria suite.

Each criterion prints one PASS/FAIL line (run with -s to stream them, or
read the summary at the end of the pytest output). The training-based
criteria share session-scoped fixtures so the suite stays inside its
runtime budgets on a desktop CPU.
"""

import hashlib
import os
import time

import numpy as np
import pytest

from spiral4d import layers, shapes
from spiral4d.autodiff import (Graph, Tensor, finite_difference_grad,
                               max_relative_error)
from spiral4d.baseline import generate_baseline, train_baseline
from spiral4d.cli import main as cli_main
from spiral4d.evaluate import (ClassifierConfig, classify_and_report,
                               evaluate_models, per_frame_l1,
                               per_vertex_error, train_classifier)
from spiral4d.labels import (EXPRESSIONS, ExpressionSequence, ExpressionStats,
                             MotionLabel, extremeness_scale, label_signal,
                             split_sequences, synth_dataset)
from spiral4d.mesh import build_adjacency, save_mesh
from spiral4d.model import (TrainConfig, decode_frame, encode, generate,
                            init_generator, loss, sequence_loss, train)
from spiral4d.sampling import build_hierarchy
from spiral4d.spiral import build_spiral_table, k_ring

from conftest import make_tables
from test_layers import brute_force_spiral_conv
from test_spiral import bfs_layers

pytestmark = pytest.mark.acceptance


def report(criterion, passed, detail):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="session")
def tiny_setup():
    """N = 42 <= 50 hierarchy for the end-to-end gradient check."""
    mesh = shapes.icosphere(1)
    hierarchy = build_hierarchy(mesh, [4])
    tables = make_tables(mesh, hierarchy)
    return mesh, hierarchy, tables


OVERFIT_INTENSITY = 10.0
OVERFIT_TRAIN = dict(epochs=300, learning_rate=0.004, lr_decay=0.995,
                     weight_decay=0.0, seed=0)


@pytest.fixture(scope="session")
def overfit_run():
    """Criterion 5: memorize 4 sequences at N = 2562, T = 20, 300 epochs."""
    template = shapes.face_template(4)  # 2562 vertices
    hierarchy = build_hierarchy(template, [5, 5])
    tables = make_tables(template, hierarchy)
    seqs, _ = synth_dataset(template, n_subjects=1,
                            expressions=("happy", "sad", "surprise", "angry"),
                            frames=20, seed=42, intensity=OVERFIT_INTENSITY)
    t0 = time.time()
    params, history = train(seqs, TrainConfig(**OVERFIT_TRAIN), hierarchy,
                            tables)
    elapsed = time.time() - t0
    errors = [
        per_vertex_error(generate(s.neutral, s.label, params, hierarchy,
                                  tables), s.frames)
        for s in seqs
    ]
    return dict(history=history, errors=errors, elapsed=elapsed)


EXPERIMENT_REPS = 5
EXPERIMENT_EPOCHS = 45


@pytest.fixture(scope="session")
def experiment():
    """Criteria 6-8: 5 seeded repetitions of the 20-train / 5-test subject
    study with the proposed model and the PCA blendshape baseline trained
    under the identical protocol."""
    template = shapes.face_template(3)  # 642 vertices
    hierarchy = build_hierarchy(template, [5, 5])
    tables = make_tables(template, hierarchy)
    t0 = time.time()
    reps = []
    curve_model = None
    for rep in range(EXPERIMENT_REPS):
        seqs, _ = synth_dataset(template, n_subjects=25, frames=20,
                                seed=1000 + rep)
        subjects = sorted({s.subject for s in seqs})
        train_seqs, test_seqs = split_sequences(seqs, subjects[-5:])
        cfg = TrainConfig(epochs=EXPERIMENT_EPOCHS, seed=rep)
        params, _ = train(train_seqs, cfg, hierarchy, tables)
        bparams, _ = train_baseline(train_seqs, cfg)
        gens = {
            "proposed": lambda n, l, p=params: generate(n, l, p, hierarchy,
                                                        tables),
            "baseline": lambda n, l, p=bparams: generate_baseline(n, l, p),
        }
        ev = evaluate_models(test_seqs, gens)
        clf = train_classifier(train_seqs, ClassifierConfig(seed=rep))

        def regen(make):
            return [ExpressionSequence(neutral=s.neutral, frames=make(s),
                                       label=s.label, subject=s.subject)
                    for s in test_seqs]

        f1_gt = classify_and_report(clf, test_seqs)["macro"].f1
        f1_prop = classify_and_report(
            clf, regen(lambda s: gens["proposed"](s.neutral, s.label)))["macro"].f1
        f1_base = classify_and_report(
            clf, regen(lambda s: gens["baseline"](s.neutral, s.label)))["macro"].f1
        reps.append(dict(
            proposed=ev.totals["proposed"], baseline=ev.totals["baseline"],
            f1_gt=f1_gt, f1_prop=f1_prop, f1_base=f1_base,
        ))
        if rep == 0:
            curve_model = params
    return dict(reps=reps, elapsed=time.time() - t0, template=template,
                hierarchy=hierarchy, tables=tables, curve_model=curve_model)


# ------------------------------------------------- criterion 1: gradients

def test_criterion_1_gradient_fidelity(tiny_setup):
    mesh, hierarchy, tables = tiny_setup
    t0 = time.time()
    worst = 0.0

    def check(build, arrays):
        nonlocal worst
        g = Graph()
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        analytic = g.backward(build(g, ts), ts)

        def f(*xs):
            return float(build(Graph(record=False),
                               [Tensor(x) for x in xs]).data)

        numeric = finite_difference_grad(f, [a.copy() for a in arrays])
        worst = max(worst, max(max_relative_error(a, b)
                               for a, b in zip(analytic, numeric)))

    table = tables[-1]
    q = hierarchy.ups[0]
    for seed in range(5):
        rng = np.random.default_rng(seed)
        d_in, d_out, hidden = 3, 2, 5
        check(lambda g, t: g.mean(g.tanh(layers.spiral_conv(
                  g, t[0], table, layers.SpiralConvParams(t[1], t[2])))),
              [rng.normal(size=(mesh.n_vertices, d_in)),
               rng.normal(size=(table.length * d_in, d_out)),
               rng.normal(size=(d_out,))])
        check(lambda g, t: g.mean(g.sigmoid(layers.unpool(g, t[0], q))),
              [rng.normal(size=(q.shape[1], 3))])
        check(lambda g, t: g.mean(g.tanh(layers.dense(
                  g, t[0], layers.DenseParams(t[1], t[2])))),
              [rng.normal(size=(1, 6)), rng.normal(size=(6, 4)),
               rng.normal(size=(4,))])

        def lstm(g, t):
            h2, c2 = layers.lstm_step(g, t[0], t[1], t[2],
                                      layers.LstmParams(t[3], t[4], t[5]))
            return g.add(g.mean(h2), g.mean(c2))

        check(lstm, [rng.normal(size=(1, 6)), rng.normal(size=(1, hidden)),
                     rng.normal(size=(1, hidden)),
                     rng.normal(size=(4 * hidden, 6)),
                     rng.normal(size=(4 * hidden, hidden)),
                     rng.normal(size=(4 * hidden,))])

    # end-to-end loss on the tiny hierarchy, T = 3: full gradient via the
    # tape, finite differences on a coordinate subset of every parameter
    # plus random directional derivatives covering all coordinates at once
    for seed in range(5):
        rng = np.random.default_rng(50 + seed)
        gen = init_generator(hierarchy, tables, seed=seed, dtype=np.float64)
        sig = rng.uniform(0.0, 1.0, size=(6, 3))
        targets = [rng.normal(size=(mesh.n_vertices, 3)) for _ in range(3)]
        params = gen.parameters()

        def forward(g):
            zs = encode(g, sig, gen)
            preds = [decode_frame(g, z, hierarchy, tables, gen) for z in zs]
            return sequence_loss(g, preds, targets)

        g = Graph()
        analytic = g.backward(forward(g), params)

        def f_at(arrays):
            for p, x in zip(params, arrays):
                p.data = x
            return float(forward(Graph(record=False)).data)

        base = [p.data.copy() for p in params]
        h = 1e-5
        for pi, arr in enumerate(base):
            flat = arr.reshape(-1)
            coords = rng.choice(flat.size, size=min(12, flat.size),
                                replace=False)
            for ci in coords:
                orig = flat[ci]
                flat[ci] = orig + h
                fp = f_at(base)
                flat[ci] = orig - h
                fm = f_at(base)
                flat[ci] = orig
                fd = (fp - fm) / (2 * h)
                worst = max(worst, max_relative_error(
                    analytic[pi].reshape(-1)[ci], fd))
        for _ in range(3):  # directional checks sweep every coordinate
            dirs = [rng.normal(size=a.shape) for a in base]
            plus = [a + h * d for a, d in zip(base, dirs)]
            minus = [a - h * d for a, d in zip(base, dirs)]
            fd = (f_at(plus) - f_at(minus)) / (2 * h)
            an = sum(float((g_ * d).sum()) for g_, d in zip(analytic, dirs))
            worst = max(worst, max_relative_error(an, fd))
        f_at(base)

    elapsed = time.time() - t0
    report(1, worst < 1e-4 and elapsed < 60,
           f"max rel err {worst:.2e}, {elapsed:.1f}s")


# ------------------------------------------- criterion 2: operator oracles

def test_criterion_2_operator_oracles(ico162):
    t0 = time.time()
    rng = np.random.default_rng(0)

    table = build_spiral_table(ico162, k=1, reference_vertex=0)
    x = rng.normal(size=(ico162.n_vertices, 4))
    w = rng.normal(size=(table.length * 4, 3))
    b = rng.normal(size=(3,))
    out = layers.spiral_conv(Graph(record=False), Tensor(x), table,
                             layers.SpiralConvParams(Tensor(w), Tensor(b)))
    conv_err = np.abs(out.data - brute_force_spiral_conv(x, table, w, b)).max()

    adj = build_adjacency(ico162)  # N = 162 <= 200
    rings_ok = True
    for v in range(ico162.n_vertices):
        layers_bfs = bfs_layers(adj, v, 3)
        for k in range(4):
            rings_ok &= k_ring(adj, v, k) == layers_bfs[k]

    hierarchy = build_hierarchy(ico162, [5])
    q = hierarchy.ups[0]
    sums = np.zeros(q.shape[0])
    np.add.at(sums, q.rows, q.weights)
    sums_err = np.abs(sums - 1.0).max()
    dense_q = q.dense()
    one_hot_ok = all(
        dense_q[fi, ci] == 1.0 and np.count_nonzero(dense_q[fi]) == 1
        for ci, fi in enumerate(hierarchy.kept[0])
    )

    elapsed = time.time() - t0
    report(2, conv_err < 1e-9 and rings_ok and sums_err <= 1e-9
           and one_hot_ok and elapsed < 60,
           f"conv err {conv_err:.1e}, rings {'ok' if rings_ok else 'BAD'}, "
           f"row sums {sums_err:.1e}, one-hot {'ok' if one_hot_ok else 'BAD'}, "
           f"{elapsed:.1f}s")


# ------------------------------------------ criterion 3: Eq. 4/5 contracts

def test_criterion_3_generation_and_loss_units(small_setup):
    template, hierarchy, tables = small_setup
    params = init_generator(hierarchy, tables, seed=0)
    for _, t in params.tensors():
        t.data[:] = 0
    label = MotionLabel("happy", 5, 0, 1, 3, 4)
    frames = generate(template, label, params, hierarchy, tables)
    bitwise = all(np.array_equal(f.vertices, template.vertices)
                  for f in frames)

    rng = np.random.default_rng(0)
    gt = [rng.normal(size=(20, 3)) for _ in range(5)]
    zero = loss(gt, gt)
    c = 0.25  # dyadic so the mean of constants is exact
    offset = loss([f + c for f in gt], gt)
    drift = loss([f + t * 0.5 for t, f in enumerate(gt)], gt)
    coh = drift - 0.5 * np.mean(np.arange(5))  # subtract exact L_r
    ok = (bitwise and zero == 0.0 and offset == c
          and abs(coh - 0.5) < 1e-9)
    report(3, ok, f"bitwise {bitwise}, loss(x,x) {zero}, offset {offset}, "
                  f"drift L_c err {abs(coh - 0.5):.1e}")


# -------------------------------- criterion 4: Table-1 hierarchy pattern

@pytest.mark.slow
def test_criterion_4_hierarchy_shape_reproduction():
    t0 = time.time()
    mesh = shapes.icosphere(6, radius=85.0)  # 40962 >= 25k vertices
    hierarchy = build_hierarchy(mesh, [5, 5, 5, 5])
    sizes = hierarchy.sizes
    n = mesh.n_vertices
    sizes_ok = all(
        abs(sizes[k] - n / 5 ** (4 - k)) <= 0.10 * n / 5 ** (4 - k)
        for k in range(4)
    ) and sizes[4] == n

    tables = make_tables(mesh, hierarchy)
    params = init_generator(hierarchy, tables, seed=0)
    channels = [(c.weight.shape[0] // tables[i + 1].length, c.d_out)
                for i, c in enumerate(params.convs)]
    chain_ok = channels == [(64, 32), (32, 16), (16, 8), (8, 3)]

    g = Graph(record=False)
    z = Tensor(np.zeros((1, 64), dtype=np.float32))
    shapes_seen = []
    x = layers.dense(g, z, params.fc)
    x = g.reshape(x, (sizes[0], 64))
    shapes_seen.append(x.shape)
    for i, conv in enumerate(params.convs):
        x = layers.unpool(g, x, hierarchy.ups[i])
        x = layers.spiral_conv(g, x, tables[i + 1], conv)
        if i < len(params.convs) - 1:
            x = g.relu(x)
        shapes_seen.append(x.shape)
    trace_ok = (shapes_seen[0] == (sizes[0], 64)
                and shapes_seen[-1] == (n, 3)
                and all(s == (sizes[i + 1], channels[i][1])
                        for i, s in enumerate(shapes_seen[1:])))
    elapsed = time.time() - t0
    report(4, sizes_ok and chain_ok and trace_ok,
           f"sizes {sizes}, channels {channels}, trace tail {shapes_seen[-1]}"
           f", {elapsed:.0f}s")


# ----------------------------------------------- criterion 5: overfitting

@pytest.mark.slow
def test_criterion_5_overfit(overfit_run):
    history = overfit_run["history"]
    ratio = history[-1]["loss"] / history[0]["loss"]
    err = float(np.mean(overfit_run["errors"]))
    elapsed = overfit_run["elapsed"]
    report(5, ratio < 0.10 and err < 0.10 and elapsed < 15 * 60,
           f"loss ratio {ratio:.3f}, per-vertex {err:.4f} mm, "
           f"train {elapsed:.0f}s")


# ------------------------------- criterion 6: generalization vs blendshape

@pytest.mark.slow
def test_criterion_6_generalization_ordering(experiment):
    reps = experiment["reps"]
    wins = sum(1 for r in reps if r["proposed"] < r["baseline"])
    detail = ", ".join(f"{r['proposed']:.3f}<{r['baseline']:.3f}"
                       for r in reps)
    report(6, wins >= 4 and experiment["elapsed"] < 60 * 60,
           f"{wins}/5 wins ({detail}), {experiment['elapsed']:.0f}s total")


# ------------------------------------ criterion 7: classifier consistency

@pytest.mark.slow
def test_criterion_7_classifier_consistency(experiment):
    reps = experiment["reps"]
    good = sum(1 for r in reps
               if abs(r["f1_prop"] - r["f1_gt"]) <= 0.10
               and r["f1_prop"] > r["f1_base"])
    detail = ", ".join(
        f"gt {r['f1_gt']:.2f}/prop {r['f1_prop']:.2f}/base {r['f1_base']:.2f}"
        for r in reps)
    report(7, good >= 4, f"{good}/5 reps ({detail})")


# ------------------------------------------ criterion 8: per-frame curve

@pytest.mark.slow
def test_criterion_8_per_frame_curve(experiment):
    template = experiment["template"]
    hierarchy = experiment["hierarchy"]
    tables = experiment["tables"]
    params = experiment["curve_model"]
    phases = (2, 6, 16, 19)
    seqs, _ = synth_dataset(template, n_subjects=5, frames=20, seed=7777,
                            fixed_phases=phases)
    curves = []
    for s in seqs:
        pred = generate(s.neutral, s.label, params, hierarchy, tables)
        curves.append(per_frame_l1(pred, s.frames))
    curve = np.mean(np.stack(curves), axis=0)
    peak = int(np.argmax(curve))
    apex = curve[phases[1]: phases[2] + 1]
    plateau = float(apex.std() / apex.mean())
    report(8, phases[1] <= peak <= phases[2] and plateau < 0.5,
           f"peak frame {peak} in [{phases[1]}, {phases[2]}], "
           f"apex std/mean {plateau:.3f}")


# -------------------------------------- criterion 9: label/scale arithmetic

def test_criterion_9_label_scale_arithmetic():
    stats = ExpressionStats(mean={"happy": 3.0}, std={"happy": 0.75})
    eq6 = (extremeness_scale(3.0, stats, "happy") == 0.5
           and extremeness_scale(3.75, stats, "happy") == 1.0
           and extremeness_scale(10.0, stats, "happy") == 1.0
           and extremeness_scale(2.25, stats, "happy") == 0.05
           and extremeness_scale(0.0, stats, "happy") == 0.05)
    ok_signal = True
    for s in (1.0, 0.5, 0.3):
        label = MotionLabel("happy", 100, 10, 30, 80, 95, scale=s)
        e = label_signal(label)
        row = EXPRESSIONS.index("happy")
        ok_signal &= e[row, 55] == s and e[row, 20] == s / 2 and e[row, 5] == 0
    report(9, eq6 and ok_signal, f"eq6 {'ok' if eq6 else 'BAD'}, "
                                 f"signal {'ok' if ok_signal else 'BAD'}")


# ------------------------------------------- criterion 10: CLI determinism

def _tree_digest(root):
    digests = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            rel = os.path.relpath(p, root)
            digests[rel] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return digests


@pytest.mark.slow
def test_criterion_10_cli_determinism(tmp_path):
    ws = tmp_path
    template = ws / "template.obj"
    save_mesh(shapes.face_template(2), template)
    cache = ws / "h.s4d"
    data = ws / "data"
    ckpt = ws / "model.s4dt"
    bckpt = ws / "base.s4dt"

    commands = [
        ("precompute", ["precompute", "--template", str(template),
                        "--cache", str(cache), "--factors", "5,5"],
         [cache]),
        ("synth-data", ["synth-data", "--template", str(template),
                        "--dataset", str(data), "--subjects", "3",
                        "--test-subjects", "1", "--frames", "8",
                        "--seed", "7"], [data]),
        ("train", ["train", "--cache", str(cache), "--dataset", str(data),
                   "--checkpoint", str(ckpt), "--epochs", "2", "--seed", "1"],
         [ckpt, ws / "model.history.json", ws / "model.metrics.log"]),
        ("baseline", ["baseline", "--cache", str(cache), "--dataset",
                      str(data), "--checkpoint", str(bckpt), "--epochs", "2",
                      "--seed", "1"], [bckpt]),
        ("generate", ["generate", "--cache", str(cache), "--checkpoint",
                      str(ckpt), "--neutral", str(template), "--expression",
                      "happy", "--frames", "6", "--output", str(ws / "gen"),
                      "--seed", "0"], [ws / "gen"]),
        ("evaluate", ["evaluate", "--cache", str(cache), "--dataset",
                      str(data), "--checkpoint", str(ckpt),
                      "--baseline-checkpoint", str(bckpt), "--report",
                      str(ws / "rep")], [ws / "rep"]),
        ("classify", ["classify", "--dataset", str(data), "--cache",
                      str(cache), "--checkpoint", str(ckpt),
                      "--baseline-checkpoint", str(bckpt), "--report",
                      str(ws / "cls"), "--classifier-epochs", "2",
                      "--classifier-frames", "8", "--seed", "0"],
         [ws / "cls"]),
        ("interpolate", ["interpolate", "--cache", str(cache),
                         "--checkpoint", str(ckpt), "--neutral",
                         str(template), "--steps", "4", "--frames", "8",
                         "--output", str(ws / "intp")], [ws / "intp"]),
    ]

    failures = []
    for name, argv, artifacts in commands:
        assert cli_main(argv) == 0, f"{name} failed"
        first = {}
        for art in artifacts:
            if os.path.isdir(art):
                first[str(art)] = _tree_digest(art)
            else:
                first[str(art)] = hashlib.sha256(
                    open(art, "rb").read()).hexdigest()
        assert cli_main(argv) == 0, f"{name} re-run failed"
        for art in artifacts:
            if os.path.isdir(art):
                again = _tree_digest(art)
            else:
                again = hashlib.sha256(open(art, "rb").read()).hexdigest()
            if first[str(art)] != again:
                failures.append(name)
                break
    report(10, not failures,
           "all 8 commands bit-identical on re-run" if not failures
           else f"non-deterministic: {failures}")
