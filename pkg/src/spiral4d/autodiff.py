"""Minimal reverse-mode automatic differentiation over dense real tensors.

A Graph records operations on a tape; backward() of a scalar output walks the
tape in reverse and accumulates analytic gradients. The operation set is
exactly what the expression model and its evaluation need; no general
broadcasting (the single exception is adding a bias vector to matrix rows).
Double precision is used for gradient checks, single precision for training.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.special import expit

from . import kernels


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step encounters a NaN or infinite gradient."""


class Tensor:
    """Dense tensor node. data is a numpy array; grad is filled by
    Graph.backward for tensors with requires_grad."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", param" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    __slots__ = ("out_id", "inputs", "backward")

    def __init__(self, out_id, inputs, backward):
        self.out_id = out_id
        self.inputs = inputs
        self.backward = backward


class Graph:
    """Operation tape. With record=False the same ops run forward-only
    (inference), skipping the tape."""

    def __init__(self, record=True):
        self.record = record
        self._tape = []

    def _emit(self, out, inputs, backward):
        if self.record:
            self._tape.append(_Node(id(out), inputs, backward))
        return out

    # ---- operations ----

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape[-1] != b.data.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)

        def backward(g):
            return [(a, g @ b.data.T), (b, a.data.T @ g)]

        return self._emit(out, (a, b), backward)

    def matmul_t(self, a: Tensor, b: Tensor) -> Tensor:
        """a @ b.T, so row-major weight matrices multiply row vectors."""
        if a.data.shape[-1] != b.data.shape[-1]:
            raise ValueError(f"matmul_t shape mismatch: {a.shape} @ {b.shape}.T")
        out = Tensor(a.data @ b.data.T)

        def backward(g):
            return [(a, g @ b.data), (b, g.T @ a.data)]

        return self._emit(out, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; b may also be a vector added to every row of a."""
        if a.data.shape == b.data.shape:
            out = Tensor(a.data + b.data)

            def backward(g):
                return [(a, g), (b, g)]

        elif a.data.ndim == 2 and b.data.shape == (a.data.shape[1],):
            out = Tensor(a.data + b.data)

            def backward(g):
                return [(a, g), (b, g.sum(axis=0))]

        else:
            raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
        return self._emit(out, (a, b), backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")
        out = Tensor(a.data - b.data)

        def backward(g):
            return [(a, g), (b, -g)]

        return self._emit(out, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
        out = Tensor(a.data * b.data)

        def backward(g):
            return [(a, g * b.data), (b, g * a.data)]

        return self._emit(out, (a, b), backward)

    def scale(self, a: Tensor, s: float) -> Tensor:
        s = float(s)
        out = Tensor(a.data * np.asarray(s, dtype=a.data.dtype))

        def backward(g):
            return [(a, g * s)]

        return self._emit(out, (a,), backward)

    def gather_rows(self, x: Tensor, idx) -> Tensor:
        """Rows x[idx[j]]; an index of -1 yields a zero row (PAD contract)."""
        idx = np.ascontiguousarray(np.asarray(idx, dtype=np.int64).ravel())
        if idx.size and (idx.min() < -1 or idx.max() >= x.data.shape[0]):
            raise IndexError("gather_rows index out of range")
        out = Tensor(kernels.gather_rows(x.data, idx))
        n = x.data.shape[0]

        def backward(g):
            return [(x, kernels.scatter_add_rows(np.ascontiguousarray(g), idx, n))]

        return self._emit(out, (x,), backward)

    def concat_rows(self, tensors) -> Tensor:
        tensors = list(tensors)
        out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
        sizes = [t.data.shape[0] for t in tensors]

        def backward(g):
            grads = []
            ofs = 0
            for t, s in zip(tensors, sizes):
                grads.append((t, g[ofs : ofs + s]))
                ofs += s
            return grads

        return self._emit(out, tuple(tensors), backward)

    def reshape(self, x: Tensor, shape) -> Tensor:
        shape = tuple(shape)
        out = Tensor(x.data.reshape(shape))

        def backward(g):
            return [(x, g.reshape(x.data.shape))]

        return self._emit(out, (x,), backward)

    def relu(self, x: Tensor) -> Tensor:
        out = Tensor(np.maximum(x.data, 0))

        def backward(g):
            return [(x, g * (x.data > 0))]

        return self._emit(out, (x,), backward)

    def sigmoid(self, x: Tensor) -> Tensor:
        y = expit(x.data)
        out = Tensor(y)

        def backward(g):
            return [(x, g * y * (1 - y))]

        return self._emit(out, (x,), backward)

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        out = Tensor(y)

        def backward(g):
            return [(x, g * (1 - y * y))]

        return self._emit(out, (x,), backward)

    def mean(self, x: Tensor) -> Tensor:
        out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))
        inv = 1.0 / x.data.size

        def backward(g):
            return [(x, np.full_like(x.data, g * inv))]

        return self._emit(out, (x,), backward)

    def l1_loss(self, a: Tensor, b: Tensor) -> Tensor:
        """Mean absolute difference over all elements. The subgradient at 0
        is taken as 0."""
        if a.data.shape != b.data.shape:
            raise ValueError(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
        diff = a.data - b.data
        out = Tensor(np.asarray(np.abs(diff).mean(), dtype=a.data.dtype))
        inv = 1.0 / diff.size

        def backward(g):
            s = np.sign(diff) * (g * inv)
            return [(a, s), (b, -s)]

        return self._emit(out, (a, b), backward)

    def upsample(self, x: Tensor, q) -> Tensor:
        """Sparse unpooling product q @ x; q is a sampling.SparseMatrix. The
        gradient is multiplication by the transpose."""
        w = q.weights_as(x.data.dtype)
        out = Tensor(kernels.spmm(q.rows, q.cols, w, x.data, q.shape[0],
                                  q.row_starts))
        n_cols = q.shape[1]

        def backward(g):
            return [(x, kernels.spmm_adjoint(q.rows, q.cols, w,
                                             np.ascontiguousarray(g), n_cols,
                                             q.col_perm, q.col_starts))]

        return self._emit(out, (x,), backward)

    def softmax_cross_entropy(self, logits: Tensor, target: int) -> Tensor:
        """Cross-entropy of a single (1, C) logit row against a class index."""
        z = logits.data.reshape(-1)
        target = int(target)
        if not 0 <= target < z.size:
            raise IndexError("target class out of range")
        m = z.max()
        lse = m + np.log(np.exp(z - m).sum())
        out = Tensor(np.asarray(lse - z[target], dtype=z.dtype))
        p = np.exp(z - lse)

        def backward(g):
            gz = p.copy()
            gz[target] -= 1.0
            return [(logits, (g * gz).reshape(logits.data.shape))]

        return self._emit(out, (logits,), backward)

    # ---- reverse pass ----

    def backward(self, output: Tensor, params):
        """Gradients of a scalar output for every tensor in params.

        Returns the list of gradient arrays aligned with params (zeros for
        parameters the output does not depend on) and fills each param's
        .grad."""
        if not self.record:
            raise RuntimeError("cannot backward through a non-recording graph")
        if output.data.shape != ():
            raise ValueError(f"backward needs a scalar output, got {output.shape}")
        params = list(params)
        grads = {id(output): np.asarray(1.0, dtype=output.data.dtype)}
        for node in reversed(self._tape):
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            for tensor, contrib in node.backward(g):
                tid = id(tensor)
                if tid in grads:
                    grads[tid] = grads[tid] + contrib
                else:
                    grads[tid] = contrib
        out = []
        for p in params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            else:
                g = np.asarray(g, dtype=p.data.dtype).reshape(p.data.shape)
            if p.requires_grad:
                p.grad = g
            out.append(g)
        return out


# ---- optimizer ----

class AdamState:
    """First/second moment buffers and step counter for a parameter list."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999,
              eps=1e-8, weight_decay=0.0):
    """One Adam update with bias correction. Weight decay is applied as the
    gradient augmentation g + weight_decay * theta. A non-finite gradient
    rejects the whole step (no state is mutated) and raises."""
    params = list(params)
    grads = list(grads)
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for parameter {i}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            g = g + weight_decay * p.data
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# ---- finite-difference verification hook ----

def finite_difference_grad(f, arrays, h=1e-5):
    """Central finite differences of a scalar function of numpy arrays,
    one gradient array per input. Used to verify analytic gradients."""
    grads = []
    for k, x in enumerate(arrays):
        g = np.zeros_like(x, dtype=np.float64)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(a, b, floor=1e-2):
    """max |a-b| / max(|a|, |b|, floor), the metric for gradient checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


# ---- named-tensor checkpoint container ----

_MAGIC = b"S4DTENS\x01"
_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8"}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1,
                np.dtype(np.int64): 2}


def save_tensors(path, named, meta=None):
    """Write named numpy arrays plus string metadata to a little-endian
    binary container; reload is bit-exact."""
    meta = meta or {}
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        for k in sorted(meta):
            kb = k.encode("utf-8")
            vb = str(meta[k]).encode("utf-8")
            fh.write(struct.pack("<I", len(kb)) + kb)
            fh.write(struct.pack("<I", len(vb)) + vb)
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            arr = np.asarray(arr)
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes())


def load_tensors(path):
    """Inverse of save_tensors: returns (dict name -> array, meta dict)."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a spiral4d tensor container")
        (n_meta,) = struct.unpack("<I", fh.read(4))
        meta = {}
        for _ in range(n_meta):
            (klen,) = struct.unpack("<I", fh.read(4))
            key = fh.read(klen).decode("utf-8")
            (vlen,) = struct.unpack("<I", fh.read(4))
            meta[key] = fh.read(vlen).decode("utf-8")
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        named = {}
        for _ in range(n_tensors):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            dtype = np.dtype(_DTYPES[code])
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            named[name] = data.reshape(shape).copy()
        return named, meta
