"""Feed-forward and recurrent building blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from iol.diff_engine import tensor as T
from iol.diff_engine.tensor import Tensor


class ParamTensor(Tensor):
    """A named leaf tensor that collects gradients."""

    __slots__ = ()

    def __init__(self, values, name: str):
        super().__init__(np.array(values, dtype=np.float64), requires_grad=True, name=name)

    @property
    def values(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else self.grad


@dataclass
class MLP:
    """Affine layers with tanh between them and a linear output."""

    weights: list[ParamTensor]
    biases: list[ParamTensor]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[ParamTensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(sizes: list[int], rng: np.random.Generator, name: str) -> MLP:
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least input and output sizes")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(ParamTensor(rng.uniform(-bound, bound, (fan_in, fan_out)), f"{name}.W{i}"))
        biases.append(ParamTensor(rng.uniform(-bound, bound, fan_out), f"{name}.b{i}"))
    return MLP(weights, biases)


def mlp_forward(layers: MLP, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != layers.in_dim:
        raise ValueError(f"MLP expects input width {layers.in_dim}, got {x.shape[-1]}")
    last = len(layers.weights) - 1
    for i, (w, b) in enumerate(zip(layers.weights, layers.biases)):
        x = T.linear(x, w, b)
        if i < last:
            x = T.tanh(x)
    return x


@dataclass
class LSTMCell:
    """Gate layout along the packed axis: input, forget, output, candidate."""

    weight: ParamTensor  # (input + hidden, 4 * hidden)
    bias: ParamTensor  # (4 * hidden,)

    @property
    def hidden(self) -> int:
        return self.bias.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.weight.shape[0] - self.hidden

    def parameters(self) -> list[ParamTensor]:
        return [self.weight, self.bias]

    def zero_state(self, batch: int | None = None) -> tuple[Tensor, Tensor]:
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def init_lstm(input_dim: int, hidden: int, rng: np.random.Generator, name: str,
              forget_bias: float = 1.0) -> LSTMCell:
    bound = 1.0 / np.sqrt(hidden)
    weight = rng.uniform(-bound, bound, (input_dim + hidden, 4 * hidden))
    bias = rng.uniform(-bound, bound, 4 * hidden)
    bias[hidden:2 * hidden] += forget_bias
    return LSTMCell(ParamTensor(weight, f"{name}.W"), ParamTensor(bias, f"{name}.b"))


def recurrent_step(cell: LSTMCell, state: tuple[Tensor, Tensor], x) -> tuple[Tensor, Tensor]:
    h, c = state
    x = T.as_tensor(x)
    if x.shape[-1] != cell.input_dim or h.shape[-1] != cell.hidden:
        raise ValueError(
            f"LSTM cell expects input {cell.input_dim} / state {cell.hidden}, "
            f"got {x.shape[-1]} / {h.shape[-1]}"
        )
    n = cell.hidden
    gates = T.linear(T.concat([x, h], axis=-1), cell.weight, cell.bias)
    i = T.sigmoid(gates[..., 0:n])
    f = T.sigmoid(gates[..., n:2 * n])
    o = T.sigmoid(gates[..., 2 * n:3 * n])
    g = T.tanh(gates[..., 3 * n:4 * n])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new
