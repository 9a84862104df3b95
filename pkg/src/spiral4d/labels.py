"""Expression motion labels, extremeness scaling, temporal subsampling, the
dataset directory loader, and a synthetic 4D expression generator that stands
in for a captured dataset at desk scale.

A motion label splits a sequence into neutral / onset / apex / offset phases;
the conditioning signal carries a one-hot expression row whose amplitude
ramps 0 -> s over the onset, holds s across the apex, and decays to 0 over
the offset. The scale s in (0, 1] reflects how extreme the take is relative
to the per-expression deformation statistics.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .mesh import Mesh, load_mesh, save_mesh

EXPRESSIONS = ("happy", "sad", "surprise", "angry", "disgust", "fear")

SCALE_FLOOR = 0.05


@dataclass(frozen=True)
class MotionLabel:
    """Phase timestamps (frame indices) and extremeness scale of a take."""

    expression: str
    frames: int
    t_onset: int
    t_apex_start: int
    t_apex_end: int
    t_offset_end: int
    scale: float = 1.0

    def __post_init__(self):
        if self.expression not in EXPRESSIONS:
            raise ValueError(f"unknown expression {self.expression!r}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        ts = (self.t_onset, self.t_apex_start, self.t_apex_end, self.t_offset_end)
        if not (0 <= ts[0] <= ts[1] <= ts[2] <= ts[3] <= self.frames - 1):
            raise ValueError(f"phase timestamps out of order: {ts} (T={self.frames})")
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")

    @property
    def expression_index(self) -> int:
        return EXPRESSIONS.index(self.expression)


def amplitude(label: MotionLabel) -> np.ndarray:
    """Per-frame amplitude a(t): 0 before onset, linear up to s at apex
    start, s across the apex, linear back to 0 at offset end."""
    t = np.arange(label.frames, dtype=np.float64)
    a = np.zeros(label.frames)
    if label.t_apex_start > label.t_onset:
        seg = (t - label.t_onset) / (label.t_apex_start - label.t_onset)
        a = np.where((t >= label.t_onset) & (t < label.t_apex_start), seg, a)
    a = np.where((t >= label.t_apex_start) & (t <= label.t_apex_end), 1.0, a)
    if label.t_offset_end > label.t_apex_end:
        seg = (label.t_offset_end - t) / (label.t_offset_end - label.t_apex_end)
        a = np.where((t > label.t_apex_end) & (t <= label.t_offset_end), seg, a)
    return label.scale * a


def label_signal(label: MotionLabel, dtype=np.float64) -> np.ndarray:
    """The 6 x T conditioning signal: the labelled expression row carries the
    amplitude curve, all other rows are zero."""
    e = np.zeros((len(EXPRESSIONS), label.frames), dtype=dtype)
    e[label.expression_index] = amplitude(label).astype(dtype)
    return e


@dataclass
class ExpressionStats:
    """Per-expression mean/std of the mean absolute deformation (mm)."""

    mean: dict
    std: dict

    @classmethod
    def from_values(cls, values_by_expression, min_std=1e-6):
        mean, std = {}, {}
        for e, vals in values_by_expression.items():
            vals = np.asarray(vals, dtype=np.float64)
            mean[e] = float(vals.mean())
            std[e] = max(float(vals.std()), min_std)
        return cls(mean=mean, std=std)


def extremeness_scale(m_i: float, stats: ExpressionStats, expression: str) -> float:
    """s = (clip((m - mu)/sigma, -1, 1) + 1) / 2, floored at SCALE_FLOOR so
    the scale stays in (0, 1]."""
    sigma = stats.std[expression]
    if sigma <= 0:
        raise ValueError("expression deformation std must be positive")
    z = (m_i - stats.mean[expression]) / sigma
    s = (float(np.clip(z, -1.0, 1.0)) + 1.0) / 2.0
    return min(1.0, max(SCALE_FLOOR, s))


@dataclass
class ExpressionSequence:
    """A labelled 4D take: neutral identity mesh plus T frames sharing its
    topology."""

    neutral: Mesh
    frames: list
    label: MotionLabel
    subject: str

    def __post_init__(self):
        if len(self.frames) != self.label.frames:
            raise ValueError("frame count does not match label")
        for i, f in enumerate(self.frames):
            if not np.array_equal(f.faces, self.neutral.faces):
                raise ValueError(f"frame {i} does not share the neutral topology")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def displacements(self, dtype=np.float64) -> np.ndarray:
        """(T, N, 3) stack of per-frame deformation from the neutral."""
        out = np.stack([f.vertices - self.neutral.vertices for f in self.frames])
        return out.astype(dtype)


def mean_abs_deformation(seq: ExpressionSequence) -> float:
    """Mean over frames and vertices of the per-vertex Euclidean displacement
    from the neutral (mm)."""
    disp = seq.displacements()
    return float(np.linalg.norm(disp, axis=2).mean())


def temporal_subsample(seq: ExpressionSequence, stride: int) -> ExpressionSequence:
    """Keep frames 0, stride, 2*stride, ... and rescale the label timestamps
    by 1/stride (rounded, order re-enforced)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return seq
    frames = seq.frames[::stride]
    new_t = len(frames)
    ts = [int(round(t / stride)) for t in (
        seq.label.t_onset, seq.label.t_apex_start,
        seq.label.t_apex_end, seq.label.t_offset_end,
    )]
    ts = np.minimum(np.maximum.accumulate(ts), new_t - 1).tolist()
    label = replace(seq.label, frames=new_t, t_onset=ts[0], t_apex_start=ts[1],
                    t_apex_end=ts[2], t_offset_end=ts[3])
    return ExpressionSequence(neutral=seq.neutral, frames=frames, label=label,
                              subject=seq.subject)


# ---- synthetic dataset ----

def _normalized_coords(template: Mesh) -> np.ndarray:
    v = template.vertices
    center = 0.5 * (v.max(axis=0) + v.min(axis=0))
    half = np.maximum(0.5 * (v.max(axis=0) - v.min(axis=0)), 1e-12)
    return (v - center) / half


def _bump(u, center, sigma):
    d2 = np.sum((u - np.asarray(center)) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * sigma**2))


def _dir(x, y, z):
    d = np.array([x, y, z], dtype=np.float64)
    return d / np.linalg.norm(d)


class ExpressionFieldModel:
    """Deterministic per-expression deformation fields on a template.

    Each expression has a static field (fixed facial-region displacements)
    plus a travelling component whose bump centres move with the amplitude,
    so the swept deformation family is not contained in a small linear
    subspace. Regions are defined in template-normalized coordinates with
    +z the facial direction and +y up.
    """

    def __init__(self, template: Mesh, intensity: float = 1.0):
        self.template = template
        self.u = _normalized_coords(template)
        self.front = intensity * np.clip(self.u[:, 2], 0.0, 1.0)[:, None]

    def _pair(self, x, y, z, sigma, d, mirror_x=True):
        """Symmetric pair of Gaussian bumps (or a single centred bump)."""
        out = _bump(self.u, (x, y, z), sigma)[:, None] * _dir(*d)
        if mirror_x and x != 0.0:
            dm = (-d[0], d[1], d[2])
            out = out + _bump(self.u, (-x, y, z), sigma)[:, None] * _dir(*dm)
        return out

    def static_field(self, expression: str) -> np.ndarray:
        """(N, 3) displacement in mm at unit amplitude, fixed shape."""
        p = self._pair
        if expression == "happy":
            f = 4.2 * p(0.45, -0.38, 0.55, 0.22, (0.35, 0.75, 0.35)) \
                + 2.2 * p(0.50, -0.02, 0.55, 0.25, (0.0, 0.6, 0.45), mirror_x=False) \
                + 2.2 * p(-0.50, -0.02, 0.55, 0.25, (0.0, 0.6, 0.45), mirror_x=False)
        elif expression == "sad":
            f = 3.6 * p(0.42, -0.42, 0.55, 0.20, (0.05, -1.0, 0.1)) \
                + 2.4 * p(0.10, 0.32, 0.70, 0.16, (0.0, 1.0, 0.25))
        elif expression == "surprise":
            f = 4.5 * p(0.22, 0.42, 0.60, 0.20, (0.0, 1.0, 0.2)) \
                + 3.5 * p(0.0, -0.55, 0.50, 0.28, (0.0, -1.0, 0.15), mirror_x=False)
        elif expression == "angry":
            f = 4.0 * p(0.20, 0.38, 0.65, 0.18, (-0.3, -1.0, 0.15)) \
                + 1.8 * p(0.0, 0.18, 0.80, 0.15, (0.0, 0.0, 1.0), mirror_x=False)
        elif expression == "disgust":
            f = 3.8 * p(0.0, -0.22, 0.75, 0.20, (0.0, 1.0, 0.35), mirror_x=False) \
                + 2.2 * p(0.16, 0.02, 0.70, 0.16, (0.0, 0.4, 0.8))
        elif expression == "fear":
            f = 3.0 * p(0.28, 0.45, 0.55, 0.24, (0.0, 1.0, 0.15)) \
                + 2.5 * p(0.42, -0.44, 0.50, 0.20, (1.0, 0.05, 0.1))
        else:
            raise ValueError(f"unknown expression {expression!r}")
        return f * self.front

    def moving_field(self, expression: str, a: float) -> np.ndarray:
        """(N, 3) travelling component at amplitude a; zero at a = 0."""
        p = self._pair
        if expression == "happy":
            xc = 0.12 + 0.50 * a
            f = 3.0 * p(xc, -0.42, 0.60, 0.16, (0.55, 0.45, 0.3))
        elif expression == "sad":
            yc = -0.45 - 0.30 * a
            f = 2.6 * p(0.0, yc, 0.65, 0.18, (0.0, -0.8, -0.3), mirror_x=False)
        elif expression == "surprise":
            yc = -0.50 - 0.35 * a
            f = 3.2 * p(0.0, yc, 0.50, 0.20, (0.0, -1.0, 0.1), mirror_x=False)
        elif expression == "angry":
            xc = 0.32 - 0.22 * a
            f = 2.8 * p(xc, 0.40, 0.60, 0.14, (-0.6, -0.5, 0.2))
        elif expression == "disgust":
            yc = -0.28 + 0.30 * a
            f = 2.6 * p(0.0, yc, 0.70, 0.16, (0.0, 0.9, 0.3), mirror_x=False)
        elif expression == "fear":
            xc = 0.15 + 0.45 * a
            f = 2.8 * p(xc, -0.46, 0.50, 0.15, (0.9, 0.1, 0.1))
        else:
            raise ValueError(f"unknown expression {expression!r}")
        return a * f * self.front

    def deformation(self, expression: str, a: float) -> np.ndarray:
        """Full class deformation at amplitude a (mm)."""
        return a * self.static_field(expression) + self.moving_field(expression, a)

    def rbf_warp(self, rng, n_centers, magnitude_mm, sigma=0.5) -> np.ndarray:
        """Smooth random field: Gaussian RBFs at random sphere points with
        normal weights. Used for subject identity and take perturbations."""
        centers = rng.normal(size=(n_centers, 3))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        weights = rng.normal(scale=magnitude_mm, size=(n_centers, 3))
        out = np.zeros_like(self.u)
        for c, w in zip(centers, weights):
            out += _bump(self.u, c, sigma)[:, None] * w
        return out


def synth_dataset(template: Mesh, n_subjects: int, expressions=EXPRESSIONS,
                  frames: int = 60, seed: int = 0, fixed_phases=None,
                  noise_std: float = 0.01, identity_mm: float = 1.6,
                  perturbation_mm: float = 0.35, intensity: float = 1.0):
    """Generate a deterministic synthetic 4D dataset.

    Each subject is the template plus a smooth low-frequency identity warp;
    each take applies the expression's deformation field (its strength
    multiplied by `intensity`) scaled by the amplitude curve, a small
    subject-specific perturbation, and Gaussian vertex noise. Scales are
    then labelled via the extremeness statistics of the generated
    collection. Returns (sequences, stats).
    """
    if n_subjects < 1:
        raise ValueError("need at least one subject")
    expressions = list(expressions)
    fields = ExpressionFieldModel(template, intensity=intensity)
    root_rng = np.random.default_rng(seed)
    subject_seeds = root_rng.integers(0, 2**63 - 1, size=n_subjects)

    raw = []
    for si in range(n_subjects):
        srng = np.random.default_rng(int(subject_seeds[si]))
        identity = template.with_vertices(
            template.vertices + fields.rbf_warp(srng, 12, identity_mm)
        )
        for e in expressions:
            pert = fields.rbf_warp(srng, 8, perturbation_mm, sigma=0.35)
            extremeness = srng.uniform(0.55, 1.0)
            if fixed_phases is not None:
                ph = tuple(fixed_phases)
            else:
                ph = _random_phases(srng, frames)
            base = MotionLabel(expression=e, frames=frames, t_onset=ph[0],
                               t_apex_start=ph[1], t_apex_end=ph[2],
                               t_offset_end=ph[3], scale=1.0)
            amp = extremeness * amplitude(base)
            seq_frames = []
            for t in range(frames):
                disp = fields.deformation(e, float(amp[t])) + amp[t] * pert
                noise = srng.normal(scale=noise_std, size=identity.vertices.shape)
                seq_frames.append(identity.with_vertices(
                    identity.vertices + disp + noise
                ))
            raw.append((f"subject_{si:03d}", identity, base, seq_frames))

    by_expr = {e: [] for e in expressions}
    m_values = []
    for subject, identity, base, seq_frames in raw:
        disp = np.stack([f.vertices - identity.vertices for f in seq_frames])
        m_i = float(np.linalg.norm(disp, axis=2).mean())
        m_values.append(m_i)
        by_expr[base.expression].append(m_i)
    stats = ExpressionStats.from_values(by_expr)

    sequences = []
    for (subject, identity, base, seq_frames), m_i in zip(raw, m_values):
        s = extremeness_scale(m_i, stats, base.expression)
        label = replace(base, scale=s)
        sequences.append(ExpressionSequence(neutral=identity, frames=seq_frames,
                                            label=label, subject=subject))
    return sequences, stats


def _random_phases(rng, frames):
    on = int(rng.integers(round(0.06 * frames), round(0.15 * frames) + 1))
    a0 = int(rng.integers(round(0.28 * frames), round(0.40 * frames) + 1))
    a1 = int(rng.integers(round(0.68 * frames), round(0.80 * frames) + 1))
    off = int(rng.integers(round(0.88 * frames), round(0.96 * frames) + 1))
    ts = np.minimum(np.maximum.accumulate([on, a0, a1, off]), frames - 1)
    return tuple(int(t) for t in ts)


# ---- dataset directory I/O ----

_FRAME_RE = re.compile(r"^frame_(\d{4})\.obj$")


def save_dataset(root, sequences, test_subjects=()):
    """Write sequences as root/<subject>/<expression>/frame_%04d.obj plus a
    label file per take, a neutral.obj per subject, and a split file naming
    the held-out test subjects."""
    os.makedirs(root, exist_ok=True)
    seen_neutral = set()
    for seq in sequences:
        sdir = os.path.join(root, seq.subject)
        os.makedirs(sdir, exist_ok=True)
        if seq.subject not in seen_neutral:
            save_mesh(seq.neutral, os.path.join(sdir, "neutral.obj"))
            seen_neutral.add(seq.subject)
        edir = os.path.join(sdir, seq.label.expression)
        os.makedirs(edir, exist_ok=True)
        lab = seq.label
        with open(os.path.join(edir, "label.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"{lab.expression} {lab.t_onset} {lab.t_apex_start} "
                     f"{lab.t_apex_end} {lab.t_offset_end}\n")
        for t, frame in enumerate(seq.frames):
            save_mesh(frame, os.path.join(edir, f"frame_{t:04d}.obj"))
    with open(os.path.join(root, "split.txt"), "w", encoding="utf-8") as fh:
        for s in sorted(test_subjects):
            fh.write(f"{s}\n")


def load_dataset(root):
    """Load every take under root; shared topology is verified and the
    extremeness scale is recomputed from the loaded collection's statistics.
    Returns (sequences, stats)."""
    subjects = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not subjects:
        raise FileNotFoundError(f"no subject directories under {root}")
    entries = []
    for subject in subjects:
        sdir = os.path.join(root, subject)
        neutral_path = os.path.join(sdir, "neutral.obj")
        neutral = load_mesh(neutral_path) if os.path.exists(neutral_path) else None
        for expr in sorted(os.listdir(sdir)):
            edir = os.path.join(sdir, expr)
            if not os.path.isdir(edir):
                continue
            label_path = os.path.join(edir, "label.txt")
            if not os.path.exists(label_path):
                raise FileNotFoundError(f"missing label file {label_path}")
            frame_files = sorted(f for f in os.listdir(edir) if _FRAME_RE.match(f))
            if not frame_files:
                raise FileNotFoundError(f"no frames under {edir}")
            frames = [load_mesh(os.path.join(edir, f)) for f in frame_files]
            base = frames[0] if neutral is None else neutral
            for name, frame in zip(frame_files, frames):
                if not np.array_equal(frame.faces, base.faces):
                    raise ValueError(
                        f"topology mismatch in {os.path.join(edir, name)}"
                    )
            with open(label_path, "r", encoding="utf-8") as fh:
                parts = fh.readline().split()
            if len(parts) != 5 or parts[0] != expr:
                raise ValueError(f"malformed label file {label_path}")
            ts = [int(x) for x in parts[1:]]
            label = MotionLabel(expression=expr, frames=len(frames),
                                t_onset=ts[0], t_apex_start=ts[1],
                                t_apex_end=ts[2], t_offset_end=ts[3], scale=1.0)
            entries.append(ExpressionSequence(
                neutral=base, frames=frames, label=label, subject=subject
            ))
    by_expr = {}
    m_values = []
    for seq in entries:
        m_i = mean_abs_deformation(seq)
        m_values.append(m_i)
        by_expr.setdefault(seq.label.expression, []).append(m_i)
    stats = ExpressionStats.from_values(by_expr)
    sequences = []
    for seq, m_i in zip(entries, m_values):
        s = extremeness_scale(m_i, stats, seq.label.expression)
        sequences.append(ExpressionSequence(
            neutral=seq.neutral, frames=seq.frames,
            label=replace(seq.label, scale=s), subject=seq.subject,
        ))
    return sequences, stats


def load_split(root) -> set:
    """Held-out subject ids from root/split.txt (empty if absent)."""
    path = os.path.join(root, "split.txt")
    if not os.path.exists(path):
        return set()
    with open(path, "r", encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def split_sequences(sequences, test_subjects):
    """Partition into (train, test) by subject id."""
    test_subjects = set(test_subjects)
    train = [s for s in sequences if s.subject not in test_subjects]
    test = [s for s in sequences if s.subject in test_subjects]
    return train, test
