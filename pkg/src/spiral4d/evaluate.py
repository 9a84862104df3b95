"""Evaluation suite: per-vertex error, per-frame L1 curves, the sequence
classifier used to judge generated expressions, latent interpolation, and a
serializable report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import layers, model
from .autodiff import AdamState, Graph, Tensor, adam_step
from .baseline import PcaBasis, fit_pca
from .labels import EXPRESSIONS
from .mesh import Mesh


def _vertex_stack(frames) -> np.ndarray:
    return np.stack([
        np.asarray(f.vertices if isinstance(f, Mesh) else f, dtype=np.float64)
        for f in frames
    ])


def per_vertex_error(pred_frames, gt_frames) -> float:
    """Mean per-vertex Euclidean distance (mm) over all frames."""
    p = _vertex_stack(pred_frames)
    g = _vertex_stack(gt_frames)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=2).mean())


def per_frame_l1(pred_frames, gt_frames) -> np.ndarray:
    """Per-frame mean absolute coordinate error (mm), one value per frame."""
    p = _vertex_stack(pred_frames)
    g = _vertex_stack(gt_frames)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return np.abs(p - g).mean(axis=(1, 2))


# ---- sequence classifier ----

@dataclass
class ClassifierConfig:
    n_frames: int = 20  # sequences are resampled to this length
    n_components: int = 64
    hidden: tuple = (256, 64)
    epochs: int = 13
    learning_rate: float = 1e-3
    weight_decay: float = 5e-3
    seed: int = 0


@dataclass
class SequenceClassifier:
    """Frozen PCA frame encoder followed by three dense layers."""

    basis: PcaBasis
    dense_layers: list
    config: ClassifierConfig
    classes: tuple = EXPRESSIONS

    def parameters(self):
        out = []
        for d in self.dense_layers:
            out.extend([d.weight, d.bias])
        return out

    def features(self, seq) -> np.ndarray:
        """Concatenated PCA coefficients of the resampled deformation
        frames, the (1, n_frames * n_components) classifier input."""
        disp = seq.displacements().reshape(seq.n_frames, -1)
        idx = resample_indices(seq.n_frames, self.config.n_frames)
        coeffs = self.basis.project(disp[idx])
        return coeffs.reshape(1, -1)

    def logits(self, g: Graph, x: Tensor) -> Tensor:
        out = x
        last = len(self.dense_layers) - 1
        for i, d in enumerate(self.dense_layers):
            out = layers.dense(g, out, d)
            if i < last:
                out = g.relu(out)
        return out

    def probabilities(self, seq) -> np.ndarray:
        g = Graph(record=False)
        x = Tensor(self.features(seq).astype(self.dense_layers[0].weight.dtype))
        z = self.logits(g, x).data.reshape(-1).astype(np.float64)
        z = z - z.max()
        p = np.exp(z)
        return p / p.sum()

    def predict(self, seq) -> str:
        return self.classes[int(np.argmax(self.probabilities(seq)))]


def resample_indices(n_frames: int, target: int) -> np.ndarray:
    """Nearest-frame resampling of a sequence to a fixed frame count."""
    if n_frames < 1 or target < 1:
        raise ValueError("frame counts must be positive")
    return np.round(np.linspace(0.0, n_frames - 1, target)).astype(np.int64)


def train_classifier(train_sequences, config: ClassifierConfig | None = None,
                     log=None) -> SequenceClassifier:
    """Fit the PCA frame encoder on training deformations and train the
    dense head with cross-entropy. The class set is whatever expressions the
    training data contains (canonical order)."""
    config = config or ClassifierConfig()
    train_sequences = list(train_sequences)
    present = {s.label.expression for s in train_sequences}
    classes = tuple(e for e in EXPRESSIONS if e in present)
    if len(classes) < 2:
        raise ValueError("classifier needs at least two classes in training")
    frames = [d.reshape(-1) for s in train_sequences
              for d in s.displacements()]
    basis = fit_pca(frames, k=config.n_components)

    dtype = np.float32
    rng = np.random.default_rng(config.seed)
    sizes = [config.n_frames * config.n_components, *config.hidden,
             len(classes)]
    dense_layers = [layers.init_dense(sizes[i], sizes[i + 1], rng, dtype)
                    for i in range(len(sizes) - 1)]
    clf = SequenceClassifier(basis=basis, dense_layers=dense_layers,
                             config=config, classes=classes)

    feats = [clf.features(s).astype(dtype) for s in train_sequences]
    targets = [classes.index(s.label.expression) for s in train_sequences]
    tensors = clf.parameters()
    state = AdamState(tensors)
    for epoch in range(config.epochs):
        order = rng.permutation(len(feats))
        losses = []
        for si in order:
            g = Graph()
            logits = clf.logits(g, Tensor(feats[si]))
            loss = g.softmax_cross_entropy(logits, targets[si])
            grads = g.backward(loss, tensors)
            adam_step(tensors, grads, state, lr=config.learning_rate,
                      weight_decay=config.weight_decay)
            losses.append(float(loss.data))
        if log is not None:
            log(f"classifier epoch {epoch + 1:3d}  loss {np.mean(losses):.4f}")
    return clf


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


def classification_metrics(y_true, y_pred, classes=EXPRESSIONS):
    """Per-class precision/recall/F1 plus macro averages, from scratch."""
    per_class = {}
    for c in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[c] = ClassMetrics(precision=prec, recall=rec, f1=f1,
                                    support=tp + fn)
    macro = ClassMetrics(
        precision=float(np.mean([m.precision for m in per_class.values()])),
        recall=float(np.mean([m.recall for m in per_class.values()])),
        f1=float(np.mean([m.f1 for m in per_class.values()])),
        support=len(list(y_true)),
    )
    return per_class, macro


def classify_and_report(clf: SequenceClassifier, sequences):
    """Predict every sequence and tabulate metrics against its label.
    Raises when a sequence carries a class the classifier never saw."""
    y_true = [s.label.expression for s in sequences]
    unseen = sorted(set(y_true) - set(clf.classes))
    if unseen:
        raise ValueError(f"classes absent from training set: {unseen}")
    y_pred = [clf.predict(s) for s in sequences]
    per_class, macro = classification_metrics(y_true, y_pred, clf.classes)
    return {"per_class": per_class, "macro": macro,
            "y_true": y_true, "y_pred": y_pred}


# ---- latent interpolation ----

def interpolate_latents(z_a, z_b, steps: int, neutral: Mesh, params,
                        hierarchy, tables):
    """Decode steps latents sampled uniformly on the segment from z_a to
    z_b (endpoints included), each added to the neutral identity."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    z_a = np.asarray(z_a, dtype=np.float64).reshape(1, -1)
    z_b = np.asarray(z_b, dtype=np.float64).reshape(1, -1)
    dtype = params.lstm.w_input.dtype
    g = Graph(record=False)
    frames = []
    for alpha in np.linspace(0.0, 1.0, steps):
        z = Tensor(((1.0 - alpha) * z_a + alpha * z_b).astype(dtype))
        disp = model.decode_frame(g, z, hierarchy, tables, params).data
        frames.append(Mesh(neutral.vertices + disp, neutral.faces))
    return frames


def apex_latent(label, params) -> np.ndarray:
    """Latent at the middle apex frame of a label's signal, the natural
    pick for interpolation endpoints."""
    from .labels import label_signal

    g = Graph(record=False)
    zs = model.encode(g, label_signal(label, params.lstm.w_input.dtype), params)
    mid = (label.t_apex_start + label.t_apex_end) // 2
    return zs[mid].data.reshape(-1).astype(np.float64)


# ---- evaluation report ----

@dataclass
class EvalReport:
    """Aggregated evaluation results; serializable as text and JSON."""

    per_expression: dict = field(default_factory=dict)  # name -> {model: mm}
    totals: dict = field(default_factory=dict)  # model -> mm
    curves: dict = field(default_factory=dict)  # model -> (T,) array
    classifier: dict = field(default_factory=dict)  # split -> metrics dict
    header: dict = field(default_factory=dict)

    def to_json_dict(self):
        out = {
            "header": self.header,
            "per_expression_error_mm": self.per_expression,
            "total_error_mm": self.totals,
            "per_frame_l1_mm": {k: list(map(float, v))
                                for k, v in self.curves.items()},
            "classifier": {},
        }
        for split, res in self.classifier.items():
            out["classifier"][split] = {
                "macro": vars(res["macro"]),
                "per_class": {c: vars(m) for c, m in res["per_class"].items()},
            }
        return out

    def to_text(self) -> str:
        lines = ["spiral4d evaluation report"]
        for k in sorted(self.header):
            lines.append(f"# {k} = {self.header[k]}")
        if self.totals:
            lines.append("")
            lines.append("mean per-vertex error (mm)")
            names = sorted(self.totals)
            lines.append("expression  " + "  ".join(f"{n:>10s}" for n in names))
            for expr in sorted(self.per_expression):
                row = self.per_expression[expr]
                lines.append(f"{expr:<10s}  " + "  ".join(
                    f"{row.get(n, float('nan')):10.4f}" for n in names))
            lines.append("total       " + "  ".join(
                f"{self.totals[n]:10.4f}" for n in names))
        for split, res in sorted(self.classifier.items()):
            lines.append("")
            lines.append(f"classifier on {split}: "
                         f"precision {res['macro'].precision:.3f}  "
                         f"recall {res['macro'].recall:.3f}  "
                         f"F1 {res['macro'].f1:.3f}")
            for c, m in res["per_class"].items():
                lines.append(f"  {c:<9s} P {m.precision:.3f}  R {m.recall:.3f}"
                             f"  F1 {m.f1:.3f}  n={m.support}")
        return "\n".join(lines) + "\n"

    def save(self, text_path, json_path=None):
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        if json_path:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def save_curve(path, curve):
    """Two-column (frame, value) text file for external plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, v in enumerate(np.asarray(curve, dtype=np.float64)):
            fh.write(f"{t} {v:.9g}\n")


def evaluate_models(test_sequences, generators, curve_align=True):
    """Per-vertex error per expression and total for each named generator.

    generators: dict name -> callable(neutral, label) -> frames. Also
    returns the mean per-frame L1 curve per generator (sequences averaged
    where frame counts agree)."""
    per_expr_acc = {}
    frame_curves = {name: [] for name in generators}
    errors = {name: [] for name in generators}
    for seq in test_sequences:
        for name, gen in generators.items():
            pred = gen(seq.neutral, seq.label)
            err = per_vertex_error(pred, seq.frames)
            errors[name].append(err)
            per_expr_acc.setdefault(seq.label.expression, {}).setdefault(
                name, []).append(err)
            frame_curves[name].append(per_frame_l1(pred, seq.frames))
    report = EvalReport()
    for expr, by_model in per_expr_acc.items():
        report.per_expression[expr] = {
            name: float(np.mean(v)) for name, v in by_model.items()
        }
    for name, v in errors.items():
        report.totals[name] = float(np.mean(v))
    if curve_align:
        for name, curves in frame_curves.items():
            lengths = {len(c) for c in curves}
            if len(lengths) == 1:
                report.curves[name] = np.mean(np.stack(curves), axis=0)
    return report
