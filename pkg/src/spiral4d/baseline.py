"""PCA blendshape baseline: motion deformations of the training set are
reduced to a 64-component linear basis, and the same LSTM encoder is trained
(identical loss, optimizer, and schedule) to drive that frozen linear decoder
instead of the spiral mesh decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers, model
from .autodiff import Graph, Tensor, load_tensors, save_tensors
from .labels import MotionLabel, label_signal
from .mesh import Mesh


@dataclass
class PcaBasis:
    """Top-k orthonormal deformation fields (flattened N*3) with the data
    mean and per-component variance."""

    mean: np.ndarray  # (N*3,)
    components: np.ndarray  # (k, N*3)
    variance: np.ndarray  # (k,)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.components.shape[1] // 3

    def project(self, fields) -> np.ndarray:
        """Coefficients of (S, N*3) (or (N*3,)) deformations in the basis."""
        x = np.atleast_2d(np.asarray(fields, dtype=np.float64))
        return (x - self.mean) @ self.components.T

    def reconstruct(self, coeffs) -> np.ndarray:
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
        return self.mean + coeffs @ self.components


def fit_pca(deformations, k: int = 64) -> PcaBasis:
    """PCA of deformation fields, components ordered by descending variance.

    Sign convention: each component's largest-magnitude entry is positive
    (first such entry on ties), which makes the basis deterministic.
    """
    x = np.stack([np.asarray(d, dtype=np.float64).reshape(-1) for d in deformations])
    n = x.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds sample count {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    variance = (svals[:k] ** 2) / max(n - 1, 1)
    for i in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaBasis(mean=mean, components=np.ascontiguousarray(comps),
                    variance=variance)


def blendshape_decode(z, basis: PcaBasis) -> np.ndarray:
    """Linear decoder: mean + sum_i z_i * component_i, as an (N, 3) field."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != basis.n_components:
        raise ValueError(f"latent size {z.shape[0]} != basis {basis.n_components}")
    return basis.reconstruct(z).reshape(basis.n_vertices, 3)


@dataclass
class BaselineParams:
    """Trained LSTM encoder plus the frozen blendshape basis."""

    lstm: layers.LstmParams
    basis: PcaBasis

    def parameters(self):
        return [self.lstm.w_input, self.lstm.w_recur, self.lstm.bias]


def _decode_tensors(basis: PcaBasis, dtype):
    comp = Tensor(np.ascontiguousarray(basis.components, dtype=dtype))
    mean = Tensor(np.ascontiguousarray(basis.mean, dtype=dtype))
    return comp, mean


def baseline_decode_frame(g: Graph, z: Tensor, comp: Tensor, mean: Tensor,
                          n_vertices: int) -> Tensor:
    out = g.add(g.matmul(z, comp), mean)
    return g.reshape(out, (n_vertices, 3))


def train_baseline(dataset, config: model.TrainConfig, basis: PcaBasis | None = None,
                   log=None):
    """Fit the basis on the training deformations (unless given) and train
    the LSTM encoder against the frozen linear decoder under the same
    protocol as the spiral model. Returns (BaselineParams, history)."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    dtype = config.dtype
    if basis is None:
        frames = [d for s in dataset for d in s.displacements()]
        basis = fit_pca(frames, k=model.LATENT_SIZE)
    n_vertices = basis.n_vertices
    rng = np.random.default_rng(config.seed)
    lstm = layers.init_lstm(model.SIGNAL_SIZE, model.LATENT_SIZE, rng, dtype)
    params = BaselineParams(lstm=lstm, basis=basis)
    comp, mean = _decode_tensors(basis, dtype)

    signals = [label_signal(s.label, dtype) for s in dataset]
    targets = [
        [np.ascontiguousarray(d, dtype=dtype) for d in s.displacements(dtype)]
        for s in dataset
    ]

    def forward(g, signal, target_frames):
        zs = model.encode(g, signal, lstm)
        preds = [baseline_decode_frame(g, z, comp, mean, n_vertices) for z in zs]
        return model.sequence_loss(g, preds, target_frames)

    history = model.run_training(dataset, config, signals, targets, forward,
                                 params.parameters(), log=log)
    return params, history


def generate_baseline(neutral: Mesh, label: MotionLabel, params: BaselineParams):
    """Frames synthesized by the blendshape decoder: neutral + decode(z_t)."""
    if neutral.n_vertices != params.basis.n_vertices:
        raise ValueError("neutral mesh does not match the basis vertex count")
    dtype = params.lstm.w_input.dtype
    g = Graph(record=False)
    zs = model.encode(g, label_signal(label, dtype), params.lstm)
    frames = []
    for z in zs:
        disp = blendshape_decode(z.data.astype(np.float64), params.basis)
        frames.append(Mesh(neutral.vertices + disp, neutral.faces))
    return frames


def save_baseline(path, params: BaselineParams, meta=None):
    named = {
        "lstm.w_input": params.lstm.w_input.data,
        "lstm.w_recur": params.lstm.w_recur.data,
        "lstm.bias": params.lstm.bias.data,
        "basis.mean": params.basis.mean,
        "basis.components": params.basis.components,
        "basis.variance": params.basis.variance,
    }
    full_meta = {"model": "pca_baseline"}
    full_meta.update(meta or {})
    save_tensors(path, named, full_meta)


def load_baseline(path):
    named, meta = load_tensors(path)
    if meta.get("model") != "pca_baseline":
        raise ValueError(f"{path}: not a baseline checkpoint")
    params = BaselineParams(
        lstm=layers.LstmParams(
            w_input=Tensor(named["lstm.w_input"], requires_grad=True),
            w_recur=Tensor(named["lstm.w_recur"], requires_grad=True),
            bias=Tensor(named["lstm.bias"], requires_grad=True),
        ),
        basis=PcaBasis(mean=named["basis.mean"],
                       components=named["basis.components"],
                       variance=named["basis.variance"]),
    )
    return params, meta
