"""Diagonal Gaussians: construction from network heads, sampling, KL."""

from __future__ import annotations

import numpy as np

from iol.diff_engine import tensor as T
from iol.diff_engine.tensor import Tensor

STD_FLOOR = 1e-4


class DiagGaussian:
    """Mean and standard-deviation vectors of a factorised Gaussian.

    Plain arrays are accepted and their std is clamped to ``STD_FLOOR``;
    tensors produced by :func:`from_heads` already respect the floor.
    """

    __slots__ = ("mean", "std")

    def __init__(self, mean, std):
        if not isinstance(std, Tensor):
            std = np.maximum(np.asarray(std, dtype=np.float64), STD_FLOOR)
        self.mean = T.as_tensor(mean)
        self.std = T.as_tensor(std)
        if self.mean.shape != self.std.shape:
            raise ValueError(f"mean shape {self.mean.shape} != std shape {self.std.shape}")
        if not (np.all(np.isfinite(self.mean.data)) and np.all(np.isfinite(self.std.data))):
            raise FloatingPointError("non-finite Gaussian parameters")

    def __repr__(self) -> str:
        return f"DiagGaussian(mean={self.mean.data!r}, std={self.std.data!r})"

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        return cls(np.zeros(dim), np.ones(dim))


def std_from_raw(raw) -> Tensor:
    return T.softplus(raw) + STD_FLOOR


def from_heads(out: Tensor, dim: int) -> DiagGaussian:
    """Split a network output ``[mean_raw, std_raw]`` into a Gaussian."""
    if out.shape[-1] != 2 * dim:
        raise ValueError(f"expected head width {2 * dim}, got {out.shape[-1]}")
    return DiagGaussian(out[..., :dim], std_from_raw(out[..., dim:]))


def gaussian_sample_reparam(g: DiagGaussian, rng: np.random.Generator) -> Tensor:
    eps = rng.standard_normal(g.mean.shape)
    return g.mean + g.std * eps


def kl_diag(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {q.mean.shape[-1]} vs {p.mean.shape[-1]}")
    var_ratio = T.square(q.std / p.std)
    mean_term = T.square((q.mean - p.mean) / p.std)
    per_coord = 0.5 * (var_ratio + mean_term - 1.0) - T.log(q.std / p.std)
    return T.sum_(per_coord, axis=-1)
