"""Trainable layers: dense transform, embedding table, LSTM cell, tiny conv encoder."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (Tensor, add, channel_bias, conv2d, embedding_lookup, flatten,
                     matmul, max_pool2, mul, relu, sigmoid, slice1d, tanh)


def uniform_param(rng: np.random.Generator, shape, init_range: float) -> Tensor:
    """Fresh trainable tensor drawn from U(-init_range, +init_range)."""
    return Tensor(rng.uniform(-init_range, init_range, size=shape), requires_grad=True)


class Dense:
    """y = activation(W x + b), activation being 'relu' or None."""

    def __init__(self, out_dim: int, in_dim: int, *, rng: np.random.Generator,
                 init_range: float = 0.08, bias: bool = True, activation: str | None = None):
        if activation not in (None, "relu"):
            raise ConfigError(f"unsupported dense activation {activation!r}")
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.weight = uniform_param(rng, (out_dim, in_dim), init_range)
        self.bias = uniform_param(rng, (out_dim,), init_range) if bias else None
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(self.weight, x)
        if self.bias is not None:
            y = add(y, self.bias)
        if self.activation == "relu":
            y = relu(y)
        return y

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            out[f"{prefix}.bias"] = self.bias
        return out


class EmbeddingTable:
    """Token id to dense vector lookup over a [vocab, dim] table."""

    def __init__(self, vocab_size: int, embed_dim: int, *, rng: np.random.Generator,
                 init_range: float = 0.08):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.table = uniform_param(rng, (vocab_size, embed_dim), init_range)

    def __call__(self, token_id: int) -> Tensor:
        return embedding_lookup(self.table, token_id)

    def named_params(self, prefix: str = "embedding") -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


class LSTMState(NamedTuple):
    h: Tensor
    c: Tensor

    @staticmethod
    def zeros(hidden_dim: int) -> "LSTMState":
        return LSTMState(Tensor(np.zeros(hidden_dim)), Tensor(np.zeros(hidden_dim)))


class LSTMCell:
    """One LSTM cell; gate rows are ordered input, forget, candidate, output."""

    def __init__(self, input_dim: int, hidden_dim: int, *, rng: np.random.Generator,
                 init_range: float = 0.08, forget_gate_bias: float = 1.0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_input = uniform_param(rng, (4 * hidden_dim, input_dim), init_range)
        self.w_hidden = uniform_param(rng, (4 * hidden_dim, hidden_dim), init_range)
        self.bias = uniform_param(rng, (4 * hidden_dim,), init_range)
        # biasing the forget gate open eases gradient flow through long unrolls
        self.bias.data[hidden_dim:2 * hidden_dim] = forget_gate_bias

    def step(self, state: LSTMState, x: Tensor) -> LSTMState:
        if x.data.shape != (self.input_dim,):
            raise ShapeError(
                f"lstm input of shape {x.data.shape} does not match cell width ({self.input_dim},)")
        hd = self.hidden_dim
        gates = add(add(matmul(self.w_input, x), matmul(self.w_hidden, state.h)), self.bias)
        i = sigmoid(slice1d(gates, 0, hd))
        f = sigmoid(slice1d(gates, hd, 2 * hd))
        g = tanh(slice1d(gates, 2 * hd, 3 * hd))
        o = sigmoid(slice1d(gates, 3 * hd, 4 * hd))
        c_next = add(mul(f, state.c), mul(i, g))
        h_next = mul(o, tanh(c_next))
        return LSTMState(h_next, c_next)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_input": self.w_input,
            f"{prefix}.w_hidden": self.w_hidden,
            f"{prefix}.bias": self.bias,
        }


def lstm_step(cell: LSTMCell, state: LSTMState, x: Tensor) -> LSTMState:
    return cell.step(state, x)


class TinyConvEncoder:
    """Small trainable image encoder: two conv/relu/pool stages and a dense head.

    Input is fixed at 3x32x32; the stage arithmetic below pins the flattened
    width (32 -> 30 -> 15 -> 13 -> 6 spatially).
    """

    IMAGE_SHAPE = (3, 32, 32)
    _FLAT = 16 * 6 * 6

    def __init__(self, out_dim: int = 64, *, rng: np.random.Generator, init_range: float = 0.08):
        self.out_dim = out_dim
        self.conv1_kernels = uniform_param(rng, (8, 3, 3, 3), init_range)
        self.conv1_bias = uniform_param(rng, (8,), init_range)
        self.conv2_kernels = uniform_param(rng, (16, 8, 3, 3), init_range)
        self.conv2_bias = uniform_param(rng, (16,), init_range)
        self.fc = Dense(out_dim, self._FLAT, rng=rng, init_range=init_range)

    def __call__(self, image: Tensor) -> Tensor:
        if image.data.shape != self.IMAGE_SHAPE:
            raise ShapeError(
                f"encoder expects an image of shape {self.IMAGE_SHAPE}, got {image.data.shape}")
        y = max_pool2(relu(channel_bias(conv2d(image, self.conv1_kernels), self.conv1_bias)))
        y = max_pool2(relu(channel_bias(conv2d(y, self.conv2_kernels), self.conv2_bias)))
        return self.fc(flatten(y))

    def named_params(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = {
            f"{prefix}.conv1.kernels": self.conv1_kernels,
            f"{prefix}.conv1.bias": self.conv1_bias,
            f"{prefix}.conv2.kernels": self.conv2_kernels,
            f"{prefix}.conv2.bias": self.conv2_bias,
        }
        out.update(self.fc.named_params(f"{prefix}.fc"))
        return out
