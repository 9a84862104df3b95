"""The expression generator: an LSTM encoder maps the 6-row motion signal to
a 64-d latent per frame, and a spiral-convolution mesh decoder maps each
latent to a per-vertex displacement that is added to the neutral identity.

Training minimizes the reconstruction L1 plus the temporal-coherence L1 of
consecutive-frame differences, one Adam step per sequence, with a per-epoch
multiplicative learning-rate decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .autodiff import (AdamState, Graph, Tensor, adam_step, load_tensors,
                       save_tensors)
from .labels import MotionLabel, label_signal
from .mesh import Mesh

LATENT_SIZE = 64
SIGNAL_SIZE = 6

# Table-1 style channel profile; vertex counts come from the hierarchy
CHANNEL_CHAIN = (64, 32, 16, 8)


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    lr_decay: float = 0.99
    weight_decay: float = 5e-5
    seed: int = 0
    precision: str = "single"  # "single" or "double"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr decay must be in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


def decoder_channels(n_levels: int):
    """(in, out) channel pairs for the conv after each unpooling, ending in
    3 output coordinates. Follows the 64/32/16/8/3 profile, truncated to the
    hierarchy depth."""
    n_convs = n_levels - 1
    if n_convs < 1:
        raise ValueError("hierarchy needs at least two levels")
    chain = list(CHANNEL_CHAIN)
    while len(chain) < n_convs:
        chain.append(chain[-1])
    ins = chain[:n_convs]
    outs = chain[1:n_convs] + [3]
    return list(zip(ins, outs))


@dataclass
class GeneratorParams:
    """All trainable weights plus the structural metadata they assume."""

    lstm: layers.LstmParams
    fc: layers.DenseParams
    convs: list
    level_sizes: list = field(default_factory=list)
    spiral_lengths: list = field(default_factory=list)

    def tensors(self):
        """Flat (name, Tensor) list in a fixed order."""
        out = [
            ("lstm.w_input", self.lstm.w_input),
            ("lstm.w_recur", self.lstm.w_recur),
            ("lstm.bias", self.lstm.bias),
            ("fc.weight", self.fc.weight),
            ("fc.bias", self.fc.bias),
        ]
        for i, conv in enumerate(self.convs):
            out.append((f"conv{i}.weight", conv.weight))
            out.append((f"conv{i}.bias", conv.bias))
        return out

    def parameters(self):
        return [t for _, t in self.tensors()]


def init_generator(hierarchy, tables, seed=0, dtype=np.float32) -> GeneratorParams:
    """Fresh parameters sized to a hierarchy and its spiral tables."""
    _check_tables(hierarchy, tables)
    rng = np.random.default_rng(seed)
    n0 = hierarchy.levels[0].n_vertices
    channels = decoder_channels(hierarchy.n_levels)
    convs = []
    for i, (c_in, c_out) in enumerate(channels):
        length = tables[i + 1].length
        convs.append(layers.init_spiral_conv(length, c_in, c_out, rng, dtype))
    return GeneratorParams(
        lstm=layers.init_lstm(SIGNAL_SIZE, LATENT_SIZE, rng, dtype),
        fc=layers.init_dense(LATENT_SIZE, n0 * channels[0][0], rng, dtype),
        convs=convs,
        level_sizes=[m.n_vertices for m in hierarchy.levels],
        spiral_lengths=[t.length for t in tables],
    )


def _check_tables(hierarchy, tables):
    if len(tables) != hierarchy.n_levels:
        raise ValueError("one spiral table per hierarchy level is required")
    for t, m in zip(tables, hierarchy.levels):
        if t.n_vertices != m.n_vertices:
            raise ValueError("spiral table does not match hierarchy level size")


def encode(g: Graph, signal, params):
    """Run the LSTM over the (6, T) signal; returns the T hidden states,
    each a (1, 64) tensor (initial h = c = 0). params may be GeneratorParams
    or a bare LstmParams."""
    lstm = params.lstm if hasattr(params, "lstm") else params
    signal = np.asarray(signal)
    if signal.ndim != 2 or signal.shape[0] != SIGNAL_SIZE:
        raise ValueError(f"signal must be (6, T), got {signal.shape}")
    dtype = lstm.w_input.dtype
    hidden = lstm.hidden_size
    h = Tensor(np.zeros((1, hidden), dtype=dtype))
    c = Tensor(np.zeros((1, hidden), dtype=dtype))
    zs = []
    for t in range(signal.shape[1]):
        x = Tensor(np.ascontiguousarray(signal[:, t].reshape(1, -1), dtype=dtype))
        h, c = layers.lstm_step(g, x, h, c, lstm)
        zs.append(h)
    return zs


def decode_frame(g: Graph, z: Tensor, hierarchy, tables,
                 params: GeneratorParams) -> Tensor:
    """Latent (1, 64) -> (N, 3) displacement: dense, reshape to the coarsest
    level, then unpool + spiral conv per level (ReLU between, none after the
    final conv so displacements keep their sign)."""
    n0 = hierarchy.levels[0].n_vertices
    c0 = decoder_channels(hierarchy.n_levels)[0][0]
    x = layers.dense(g, z, params.fc)
    x = g.reshape(x, (n0, c0))
    last = len(params.convs) - 1
    for i, conv in enumerate(params.convs):
        x = layers.unpool(g, x, hierarchy.ups[i])
        x = layers.spiral_conv(g, x, tables[i + 1], conv)
        if i < last:
            x = g.relu(x)
    return x


def generate(neutral: Mesh, label: MotionLabel, params: GeneratorParams,
             hierarchy, tables):
    """Synthesize the T frames for a neutral identity and a motion label:
    frame_t = neutral + decoder(z_t)."""
    fine = hierarchy.levels[-1]
    if not np.array_equal(neutral.faces, fine.faces):
        raise ValueError("neutral mesh does not share the hierarchy topology")
    dtype = params.lstm.w_input.dtype
    g = Graph(record=False)
    zs = encode(g, label_signal(label, dtype), params)
    frames = []
    for z in zs:
        disp = decode_frame(g, z, hierarchy, tables, params).data
        frames.append(Mesh(neutral.vertices + disp, neutral.faces))
    return frames


def sequence_loss(g: Graph, preds, targets) -> Tensor:
    """Eq-style loss on aligned frame sequences (tensors vs arrays):
    mean reconstruction L1 plus mean temporal-coherence L1 of the
    consecutive-frame differences."""
    if len(preds) == 0 or len(preds) != len(targets):
        raise ValueError("need equal, nonzero frame counts")
    t_count = len(preds)
    dtype = preds[0].dtype
    consts = [Tensor(np.ascontiguousarray(t, dtype=dtype)) for t in targets]
    total = None
    for p, c in zip(preds, consts):
        term = g.l1_loss(p, c)
        total = term if total is None else g.add(total, term)
    loss = g.scale(total, 1.0 / t_count)
    if t_count > 1:
        coh = None
        for t in range(1, t_count):
            dp = g.sub(preds[t], preds[t - 1])
            dc = Tensor(consts[t].data - consts[t - 1].data)
            term = g.l1_loss(dp, dc)
            coh = term if coh is None else g.add(coh, term)
        loss = g.add(loss, g.scale(coh, 1.0 / (t_count - 1)))
    return loss


def loss(pred_frames, gt_frames) -> float:
    """Numeric Eq-5 loss between two mesh (or vertex-array) sequences."""
    preds = [np.asarray(f.vertices if isinstance(f, Mesh) else f) for f in pred_frames]
    gts = [np.asarray(f.vertices if isinstance(f, Mesh) else f) for f in gt_frames]
    g = Graph(record=False)
    out = sequence_loss(g, [Tensor(p) for p in preds], gts)
    return float(out.data)


def run_training(dataset, config: TrainConfig, signals, targets, forward,
                 tensors, log=None):
    """Shared training loop: per epoch, seeded shuffle and one Adam step per
    sequence; learning rate multiplies by lr_decay after each epoch.
    forward(g, signal, target_frames) must return the scalar loss tensor."""
    state = AdamState(tensors)
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(signals))
        losses = []
        for si in order:
            g = Graph()
            out = forward(g, signals[si], targets[si])
            value = float(out.data)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, sequence {int(si)} "
                    f"({dataset[si].subject}/{dataset[si].label.expression})"
                )
            grads = g.backward(out, tensors)
            adam_step(tensors, grads, state, lr=lr,
                      weight_decay=config.weight_decay)
            losses.append(value)
        mean_loss = float(np.mean(losses))
        history.append({"epoch": epoch + 1, "lr": lr, "loss": mean_loss})
        if log is not None:
            log(f"epoch {epoch + 1:4d}  lr {lr:.6g}  loss {mean_loss:.6f}")
        lr *= config.lr_decay
    return history


def train(dataset, config: TrainConfig, hierarchy, tables,
          params: GeneratorParams | None = None, log=None):
    """Train the generator: per epoch, shuffle sequences (seeded) and take
    one Adam step per sequence on the full-sequence loss. Returns (params,
    history) where history records per-epoch mean loss and learning rate.

    The per-frame targets are the displacement fields from each sequence's
    neutral, which gives exactly the same loss value as comparing absolute
    frames (the added identity cancels in both terms).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    dtype = config.dtype
    if params is None:
        params = init_generator(hierarchy, tables, seed=config.seed, dtype=dtype)
    fine = hierarchy.levels[-1]
    for seq in dataset:
        if not np.array_equal(seq.neutral.faces, fine.faces):
            raise ValueError(f"sequence {seq.subject} does not match hierarchy")
    signals = [label_signal(s.label, dtype) for s in dataset]
    targets = [
        [np.ascontiguousarray(d, dtype=dtype) for d in s.displacements(dtype)]
        for s in dataset
    ]

    def forward(g, signal, target_frames):
        zs = encode(g, signal, params)
        preds = [decode_frame(g, z, hierarchy, tables, params) for z in zs]
        return sequence_loss(g, preds, target_frames)

    history = run_training(dataset, config, signals, targets, forward,
                           params.parameters(), log=log)
    return params, history


# ---- checkpoints ----

def save_generator(path, params: GeneratorParams, meta=None):
    named = {name: t.data for name, t in params.tensors()}
    named["level_sizes"] = np.asarray(params.level_sizes, dtype=np.int64)
    named["spiral_lengths"] = np.asarray(params.spiral_lengths, dtype=np.int64)
    full_meta = {"model": "spiral_generator", "n_convs": str(len(params.convs))}
    full_meta.update(meta or {})
    save_tensors(path, named, full_meta)


def load_generator(path):
    """Returns (params, meta). Structural arrays are restored so callers can
    validate the checkpoint against a hierarchy."""
    named, meta = load_tensors(path)
    if meta.get("model") != "spiral_generator":
        raise ValueError(f"{path}: not a spiral generator checkpoint")
    n_convs = int(meta["n_convs"])
    convs = [
        layers.SpiralConvParams(
            weight=Tensor(named[f"conv{i}.weight"], requires_grad=True),
            bias=Tensor(named[f"conv{i}.bias"], requires_grad=True),
        )
        for i in range(n_convs)
    ]
    params = GeneratorParams(
        lstm=layers.LstmParams(
            w_input=Tensor(named["lstm.w_input"], requires_grad=True),
            w_recur=Tensor(named["lstm.w_recur"], requires_grad=True),
            bias=Tensor(named["lstm.bias"], requires_grad=True),
        ),
        fc=layers.DenseParams(
            weight=Tensor(named["fc.weight"], requires_grad=True),
            bias=Tensor(named["fc.bias"], requires_grad=True),
        ),
        convs=convs,
        level_sizes=named["level_sizes"].tolist(),
        spiral_lengths=named["spiral_lengths"].tolist(),
    )
    return params, meta
