"""Latent-memory state-space model of an online-learning agent.

Generative side (parameters theta):
    m_1 ~ N(0, I)
    m_t ~ N(mu_t, diag(sigma_t^2)),  (mu_t, sigma_t) = transition([m_{t-1}, x_{t-1}, a_{t-1}, y_{t-1}])
    omega1_t = decoder(m_t),  omega0_t = 0
    tau_t = <x_t, omega1_t>,  P(a_t = 1) = sigmoid(alpha * (tau_t - beta))

Inference side (parameters phi): a backward LSTM summarises h_{t:T} into b_t;
q(m_1) = init_head(b_1) and q(m_t | m_{t-1}) = head([m_{t-1}, b_{t-1}]).

Everything below is batched over trajectories of equal length; the
single-trajectory functions wrap the batched ones.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from iol.diff_engine import tensor as T
from iol.diff_engine.gaussian import DiagGaussian, from_heads, kl_diag
from iol.diff_engine.nn import (
    MLP,
    LSTMCell,
    ParamTensor,
    init_lstm,
    init_mlp,
    mlp_forward,
    recurrent_step,
)
from iol.diff_engine.tensor import Tensor, no_grad, np_sigmoid
from iol.trajectory_store import StepRecord, TrajectoryRecord

SUMMARY_OFFSETS = ("prev", "current")


class NumericalError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    d: int
    memory_dim: int = 16
    hidden: int = 64
    lstm_hidden: int = 64
    summary_offset: str = "prev"
    forget_bias: float = 1.0
    # transition mean = m_{t-1} + net output instead of the net output alone
    residual_transition: bool = False
    init_alpha: float = 1.0
    init_beta: float = 0.0

    def __post_init__(self):
        if self.d < 1 or self.memory_dim < 1 or self.hidden < 1 or self.lstm_hidden < 1:
            raise ValueError("model dimensions must be positive")
        if self.summary_offset not in SUMMARY_OFFSETS:
            raise ValueError(f"summary_offset must be one of {SUMMARY_OFFSETS}")
        if self.init_alpha <= 0:
            raise ValueError("init_alpha must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenerativeParams:
    transition_net: MLP
    decoder_net: MLP
    alpha_raw: ParamTensor
    beta: ParamTensor
    memory_dim: int
    residual: bool = False

    @property
    def alpha(self) -> float:
        return float(np.logaddexp(0.0, self.alpha_raw.data))

    def parameters(self) -> list[ParamTensor]:
        return (
            self.transition_net.parameters()
            + self.decoder_net.parameters()
            + [self.alpha_raw, self.beta]
        )


@dataclass
class InferenceParams:
    backward_cell: LSTMCell
    head_net: MLP
    init_head: MLP
    summary_offset: str = "prev"

    def parameters(self) -> list[ParamTensor]:
        return (
            self.backward_cell.parameters()
            + self.head_net.parameters()
            + self.init_head.parameters()
        )


@dataclass
class IOLModel:
    config: ModelConfig
    gen: GenerativeParams
    inf: InferenceParams

    def parameters(self) -> list[ParamTensor]:
        return self.gen.parameters() + self.inf.parameters()


@dataclass(frozen=True)
class EffectBelief:
    t: int
    omega1: np.ndarray
    mu1: float
    mu0: float
    tau: float
    pi: float
    memory_mean: np.ndarray | None = None
    memory_std: np.ndarray | None = None


def init_model(config: ModelConfig, seed: int = 0) -> IOLModel:
    rng = np.random.default_rng(seed)
    mem, d, h = config.memory_dim, config.d, config.hidden
    step_width = d + 2
    gen = GenerativeParams(
        transition_net=init_mlp([mem + step_width, h, 2 * mem], rng, "gen.transition"),
        decoder_net=init_mlp([mem, h, d], rng, "gen.decoder"),
        alpha_raw=ParamTensor(np.log(np.expm1(config.init_alpha)), "gen.alpha_raw"),
        beta=ParamTensor(config.init_beta, "gen.beta"),
        memory_dim=mem,
        residual=config.residual_transition,
    )
    inf = InferenceParams(
        backward_cell=init_lstm(step_width, config.lstm_hidden, rng, "inf.backward",
                                forget_bias=config.forget_bias),
        head_net=init_mlp([mem + config.lstm_hidden, h, 2 * mem], rng, "inf.head"),
        init_head=init_mlp([config.lstm_hidden, h, 2 * mem], rng, "inf.init_head"),
        summary_offset=config.summary_offset,
    )
    return IOLModel(config, gen, inf)


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    ids: list[str]
    x: np.ndarray  # (B, T, d)
    a: np.ndarray  # (B, T)
    y: np.ndarray  # (B, T)

    @classmethod
    def from_records(cls, records: Sequence[TrajectoryRecord]) -> "Batch":
        lengths = {r.T for r in records}
        if len(lengths) != 1:
            raise ValueError("a batch needs trajectories of equal length")
        return cls(
            [r.id for r in records],
            np.stack([r.x for r in records]),
            np.stack([r.a for r in records]).astype(np.float64),
            np.stack([r.y for r in records]),
        )

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def horizon(self) -> int:
        return self.x.shape[1]

    def steps(self) -> np.ndarray:
        """Per-step model inputs [x, a, y], shape (B, T, d + 2)."""
        return np.concatenate([self.x, self.a[..., None], self.y[..., None]], axis=-1)

    def repeat(self, k: int) -> "Batch":
        if k == 1:
            return self
        return Batch(self.ids * k, np.tile(self.x, (k, 1, 1)), np.tile(self.a, (k, 1)),
                     np.tile(self.y, (k, 1)))


def group_by_length(records: Sequence[TrajectoryRecord]) -> dict[int, list[TrajectoryRecord]]:
    groups: dict[int, list[TrajectoryRecord]] = {}
    for r in records:
        groups.setdefault(r.T, []).append(r)
    return dict(sorted(groups.items()))


def iter_batches(records, batch_size: int, rng: np.random.Generator | None = None):
    """Yield equal-length batches; shuffled within and across lengths if ``rng`` is given."""
    chunks = []
    for _, group in group_by_length(records).items():
        order = np.arange(len(group)) if rng is None else rng.permutation(len(group))
        for start in range(0, len(group), batch_size):
            chunks.append([group[i] for i in order[start:start + batch_size]])
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for chunk in chunks:
        yield Batch.from_records(chunk)


# ------------------------------------------------------------------ model pieces


def prior_initial(gen: GenerativeParams) -> DiagGaussian:
    return DiagGaussian.standard(gen.memory_dim)


def _transition(gen: GenerativeParams, m_prev, step_prev: np.ndarray) -> DiagGaussian:
    out = mlp_forward(gen.transition_net, T.concat([m_prev, step_prev], axis=-1))
    g = from_heads(out, gen.memory_dim)
    if gen.residual:
        g = DiagGaussian(T.add(g.mean, m_prev), g.std)
    return g


def memory_transition(gen: GenerativeParams, m_prev, step_prev: StepRecord) -> DiagGaussian:
    """Next-memory distribution from the previous memory and the last observed step.

    Only step t-1 enters; the current context is deliberately not an argument.
    """
    m_prev = T.as_tensor(m_prev)
    if m_prev.shape[-1] != gen.memory_dim:
        raise ValueError(f"memory has width {m_prev.shape[-1]}, expected {gen.memory_dim}")
    step = np.concatenate([np.asarray(step_prev.x, dtype=np.float64),
                           [float(step_prev.a), float(step_prev.y)]])
    expected = gen.transition_net.in_dim - gen.memory_dim
    if step.shape[0] != expected:
        raise ValueError(f"step has width {step.shape[0]}, expected {expected}")
    return _transition(gen, m_prev, step)


def _decode(gen: GenerativeParams, m, x: np.ndarray) -> tuple[Tensor, Tensor]:
    omega1 = mlp_forward(gen.decoder_net, m)
    return omega1, T.rowdot(omega1, x)


def _treatment_logit(gen: GenerativeParams, tau) -> Tensor:
    return T.softplus(gen.alpha_raw) * (tau - gen.beta)


def decode_effect(gen: GenerativeParams, m, x, t: int = 0) -> EffectBelief:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (gen.decoder_net.out_dim,):
        raise ValueError(f"context has shape {x.shape}, expected ({gen.decoder_net.out_dim},)")
    with no_grad():
        omega1, tau = _decode(gen, T.as_tensor(m), x)
        pi = np_sigmoid(_treatment_logit(gen, tau).data)
    mu1 = float(tau.data)
    return EffectBelief(t, omega1.data.copy(), mu1, 0.0, mu1 - 0.0, float(pi))


def _action_loglik(gen: GenerativeParams, tau, a: np.ndarray) -> Tensor:
    sign = 2.0 * np.asarray(a, dtype=np.float64) - 1.0
    return T.log_sigmoid(_treatment_logit(gen, tau) * sign)


def action_likelihood(gen: GenerativeParams, tau: float, a: int) -> float:
    with no_grad():
        return float(_action_loglik(gen, T.as_tensor(float(tau)), np.float64(a)).data)


def _summaries(inf: InferenceParams, steps: np.ndarray) -> list[Tensor]:
    """b_t for t = 0..T-1, where b_t summarises steps t..T-1."""
    n_steps = steps.shape[-2]
    batch = steps.shape[0] if steps.ndim == 3 else None
    h, c = inf.backward_cell.zero_state(batch)
    out: list[Tensor] = [None] * n_steps  # type: ignore[list-item]
    for t in range(n_steps - 1, -1, -1):
        h, c = recurrent_step(inf.backward_cell, (h, c), steps[..., t, :])
        out[t] = h
    return out


def backward_summaries(inf: InferenceParams, traj: TrajectoryRecord) -> list[np.ndarray]:
    with no_grad():
        return [b.data.copy() for b in _summaries(inf, Batch.from_records([traj]).steps()[0])]


def _posterior(inf: InferenceParams, m_prev, b) -> DiagGaussian:
    mem = inf.init_head.out_dim // 2
    if m_prev is None:
        return from_heads(mlp_forward(inf.init_head, b), mem)
    return from_heads(mlp_forward(inf.head_net, T.concat([m_prev, b], axis=-1)), mem)


def posterior_step(inf: InferenceParams, m_prev, b) -> DiagGaussian:
    """q(m_t | m_{t-1}, b); ``m_prev`` is None at the first step."""
    b = T.as_tensor(b)
    if b.shape[-1] != inf.backward_cell.hidden:
        raise ValueError(f"summary has width {b.shape[-1]}, expected {inf.backward_cell.hidden}")
    if m_prev is not None:
        m_prev = T.as_tensor(m_prev)
        expected = inf.head_net.in_dim - inf.backward_cell.hidden
        if m_prev.shape[-1] != expected:
            raise ValueError(f"memory has width {m_prev.shape[-1]}, expected {expected}")
    return _posterior(inf, m_prev, b)


def _summary_index(inf: InferenceParams, t: int) -> int:
    return t - 1 if inf.summary_offset == "prev" else t


# ------------------------------------------------------------------ ELBO


def _check_finite(t: int, *tensors: Tensor) -> None:
    for x in tensors:
        if not np.all(np.isfinite(x.data)):
            raise NumericalError(f"non-finite value in ELBO at step {t}")


def elbo_terms(model: IOLModel, batch: Batch, rng: np.random.Generator,
               mc_samples: int = 1) -> tuple[Tensor, Tensor]:
    """Per-trajectory negative log-likelihood and KL, each of shape (B,).

    Both are Monte Carlo averages over ``mc_samples`` ancestral posterior
    draws; ELBO = -(nll + kl).
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    gen, inf = model.gen, model.inf
    n, horizon = batch.size, batch.horizon
    rep = batch.repeat(mc_samples)
    steps = rep.steps()
    summaries = _summaries(inf, steps)
    prior = prior_initial(gen)
    nll: Tensor | float = 0.0
    kl: Tensor | float = 0.0
    m_prev = None
    for t in range(horizon):
        try:
            if t == 0:
                q = _posterior(inf, None, summaries[0])
                p = prior
            else:
                q = _posterior(inf, m_prev, summaries[_summary_index(inf, t)])
                p = _transition(gen, m_prev, steps[:, t - 1])
        except FloatingPointError as exc:
            raise NumericalError(f"non-finite value in ELBO at step {t}: {exc}") from exc
        kl_t = kl_diag(q, p)
        m = q.mean + q.std * rng.standard_normal(q.mean.shape)
        _, tau = _decode(gen, m, rep.x[:, t])
        ll_t = _action_loglik(gen, tau, rep.a[:, t])
        _check_finite(t, kl_t, ll_t)
        kl = kl + kl_t
        nll = nll - ll_t
        m_prev = m
    if mc_samples > 1:
        nll = T.mean(T.reshape(nll, (mc_samples, n)), axis=0)
        kl = T.mean(T.reshape(kl, (mc_samples, n)), axis=0)
    return nll, kl


def elbo(gen: GenerativeParams, inf: InferenceParams, traj: TrajectoryRecord,
         rng: np.random.Generator, mc_samples: int = 1) -> tuple[Tensor, dict]:
    """ELBO of one trajectory (differentiable) with its nll/kl breakdown."""
    config = ModelConfig(d=traj.d, memory_dim=gen.memory_dim, summary_offset=inf.summary_offset)
    nll, kl = elbo_terms(IOLModel(config, gen, inf), Batch.from_records([traj]), rng, mc_samples)
    value = T.neg(T.sum_(nll + kl))
    return value, {"nll": float(nll.data[0]), "kl": float(kl.data[0])}


# ------------------------------------------------------------------ inference


@dataclass
class BatchBeliefs:
    omega1: np.ndarray  # (B, T, d)
    tau: np.ndarray  # (B, T)
    pi: np.ndarray  # (B, T)
    memory_mean: np.ndarray  # (B, T, memory_dim)
    memory_std: np.ndarray  # (B, T, memory_dim)


def posterior_mean_path(model: IOLModel, batch: Batch) -> BatchBeliefs:
    """Ancestral pass through posterior means (no sampling)."""
    gen, inf = model.gen, model.inf
    with no_grad():
        steps = batch.steps()
        summaries = _summaries(inf, steps)
        means, stds, omegas, taus = [], [], [], []
        m_prev = None
        for t in range(batch.horizon):
            b = summaries[0] if t == 0 else summaries[_summary_index(inf, t)]
            q = _posterior(inf, m_prev, b)
            m_prev = q.mean
            omega1, tau = _decode(gen, q.mean, batch.x[:, t])
            means.append(q.mean.data)
            stds.append(q.std.data)
            omegas.append(omega1.data)
            taus.append(tau.data)
        tau = np.stack(taus, axis=1)
        pi = np_sigmoid(gen.alpha * (tau - float(gen.beta.data)))
    return BatchBeliefs(np.stack(omegas, axis=1), tau, pi,
                        np.stack(means, axis=1), np.stack(stds, axis=1))


def predictive_action_probs(model: IOLModel, batch: Batch) -> np.ndarray:
    """P(a_t = 1 | h_{1:t-1}, x_t) for every step, without looking at a_t.

    The memory at step t is the transition mean applied to the posterior-mean
    memory inferred from the prefix h_{1:t-1} alone; step 1 uses the prior mean.
    """
    gen = model.gen
    steps = batch.steps()
    probs = np.empty((batch.size, batch.horizon))
    with no_grad():
        for t in range(batch.horizon):
            if t == 0:
                m = np.zeros((batch.size, gen.memory_dim))
            else:
                prefix = Batch(batch.ids, batch.x[:, :t], batch.a[:, :t], batch.y[:, :t])
                m_last = posterior_mean_path(model, prefix).memory_mean[:, -1]
                m = _transition(gen, Tensor(m_last), steps[:, t - 1]).mean.data
            _, tau = _decode(gen, Tensor(m), batch.x[:, t])
            probs[:, t] = np_sigmoid(gen.alpha * (tau.data - float(gen.beta.data)))
    return probs


def log_marginal_mc(model: IOLModel, traj: TrajectoryRecord, n_samples: int,
                    rng: np.random.Generator, chunk: int = 100_000) -> tuple[float, float]:
    """Monte Carlo log p(a | x, y) by ancestral sampling of memories from the prior.

    Returns the estimate and its delta-method standard error.
    """
    gen = model.gen
    b = Batch.from_records([traj])
    steps = b.steps()[0]
    log_w = []
    with no_grad():
        remaining = n_samples
        while remaining > 0:
            k = min(chunk, remaining)
            remaining -= k
            m = rng.standard_normal((k, gen.memory_dim))
            lw = np.zeros(k)
            for t in range(traj.T):
                if t > 0:
                    p = _transition(gen, Tensor(m), np.broadcast_to(steps[t - 1], (k, steps.shape[1])))
                    m = p.mean.data + p.std.data * rng.standard_normal(m.shape)
                _, tau = _decode(gen, Tensor(m), np.broadcast_to(traj.x[t], (k, traj.d)))
                lw += _action_loglik(gen, tau, np.full(k, traj.a[t], dtype=np.float64)).data
            log_w.append(lw)
    lw = np.concatenate(log_w)
    top = lw.max()
    w = np.exp(lw - top)
    mean_w = w.mean()
    estimate = float(top + np.log(mean_w))
    se = float(w.std(ddof=1) / (np.sqrt(len(w)) * mean_w))
    return estimate, se
