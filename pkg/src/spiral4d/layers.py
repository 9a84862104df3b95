"""Neural building blocks composed from autodiff operations: spiral
convolution, mesh unpooling, dense layers, and an LSTM cell.

All layers are pure functions of (inputs, params); parameter containers are
plain dataclasses of Tensors so the optimizer can walk them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor
from .spiral import SpiralTable


@dataclass
class SpiralConvParams:
    """Weights of one spiral convolution: weight stacks the per-position
    filters into an (L * d_in, d_out) matrix, bias is (d_out,)."""

    weight: Tensor
    bias: Tensor

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseParams:
    weight: Tensor  # (d_in, d_out)
    bias: Tensor  # (d_out,)


@dataclass
class LstmParams:
    """Single-layer LSTM weights, gate order (input, forget, cell, output)
    stacked along the first axis."""

    w_input: Tensor  # (4h, d_in)
    w_recur: Tensor  # (4h, h)
    bias: Tensor  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.w_recur.shape[1]


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_spiral_conv(length, d_in, d_out, rng, dtype=np.float32) -> SpiralConvParams:
    bound = 1.0 / np.sqrt(length * d_in)
    return SpiralConvParams(
        weight=Tensor(_uniform(rng, bound, (length * d_in, d_out), dtype),
                      requires_grad=True),
        bias=Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
    )


def init_dense(d_in, d_out, rng, dtype=np.float32) -> DenseParams:
    bound = 1.0 / np.sqrt(d_in)
    return DenseParams(
        weight=Tensor(_uniform(rng, bound, (d_in, d_out), dtype), requires_grad=True),
        bias=Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
    )


def init_lstm(d_in, hidden, rng, dtype=np.float32) -> LstmParams:
    """Uniform +-1/sqrt(fan_in) weights; forget-gate bias starts at 1."""
    bias = np.zeros(4 * hidden, dtype=dtype)
    bias[hidden : 2 * hidden] = 1.0
    return LstmParams(
        w_input=Tensor(_uniform(rng, 1.0 / np.sqrt(d_in), (4 * hidden, d_in), dtype),
                       requires_grad=True),
        w_recur=Tensor(_uniform(rng, 1.0 / np.sqrt(hidden), (4 * hidden, hidden), dtype),
                       requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def spiral_conv(g: Graph, x: Tensor, table: SpiralTable,
                params: SpiralConvParams) -> Tensor:
    """f*(v) = sum_j f(S_j(v)) W_j + b over the fixed spiral ordering; PAD
    slots contribute zero features."""
    n, length = table.indices.shape
    d_in = x.shape[1]
    if params.weight.shape[0] != length * d_in:
        raise ValueError(
            f"spiral_conv weight rows {params.weight.shape[0]} != L*d_in "
            f"{length}*{d_in}"
        )
    gathered = g.gather_rows(x, table.indices.reshape(-1))
    flat = g.reshape(gathered, (n, length * d_in))
    return g.add(g.matmul(flat, params.weight), params.bias)


def unpool(g: Graph, x: Tensor, q) -> Tensor:
    """Sparse unpooling to the finer level (gradient applies the transpose)."""
    return g.upsample(x, q)


def dense(g: Graph, x: Tensor, params: DenseParams) -> Tensor:
    return g.add(g.matmul(x, params.weight), params.bias)


_GATES = {name: np.array([i], dtype=np.int64)
          for i, name in enumerate(("input", "forget", "cell", "output"))}


def lstm_step(g: Graph, x: Tensor, h: Tensor, c: Tensor,
              params: LstmParams):
    """One LSTM step. x, h, c are (1, d) rows; returns (h', c')."""
    hidden = params.hidden_size
    pre = g.add(
        g.add(g.matmul_t(x, params.w_input), g.matmul_t(h, params.w_recur)),
        params.bias,
    )
    pre4 = g.reshape(pre, (4, hidden))
    gate_i = g.sigmoid(g.gather_rows(pre4, _GATES["input"]))
    gate_f = g.sigmoid(g.gather_rows(pre4, _GATES["forget"]))
    gate_g = g.tanh(g.gather_rows(pre4, _GATES["cell"]))
    gate_o = g.sigmoid(g.gather_rows(pre4, _GATES["output"]))
    c_new = g.add(g.mul(gate_f, c), g.mul(gate_i, gate_g))
    h_new = g.mul(gate_o, g.tanh(c_new))
    return h_new, c_new
