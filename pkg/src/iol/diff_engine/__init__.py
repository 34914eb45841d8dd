"""Minimal differentiable numerics: tape autodiff, layers, Gaussians, Adam."""

from iol.diff_engine.gaussian import (
    STD_FLOOR,
    DiagGaussian,
    from_heads,
    gaussian_sample_reparam,
    kl_diag,
    std_from_raw,
)
from iol.diff_engine.gradcheck import grad_check
from iol.diff_engine.nn import (
    MLP,
    LSTMCell,
    ParamTensor,
    init_lstm,
    init_mlp,
    mlp_forward,
    recurrent_step,
)
from iol.diff_engine.optim import (
    AdamState,
    NonFiniteGradientError,
    adam_step,
    clip_grad_norm,
    collect_grads,
)
from iol.diff_engine.tensor import Tensor, no_grad

__all__ = [
    "STD_FLOOR",
    "AdamState",
    "DiagGaussian",
    "LSTMCell",
    "MLP",
    "NonFiniteGradientError",
    "ParamTensor",
    "Tensor",
    "adam_step",
    "clip_grad_norm",
    "collect_grads",
    "from_heads",
    "gaussian_sample_reparam",
    "grad_check",
    "init_lstm",
    "init_mlp",
    "kl_diag",
    "mlp_forward",
    "no_grad",
    "recurrent_step",
    "std_from_raw",
]
