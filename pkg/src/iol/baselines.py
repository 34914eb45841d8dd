"""Stationary comparison policies trained on pooled steps.

None of these look at trajectory structure: every step is treated as an
independent (context, action[, outcome]) example.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from iol.diff_engine import tensor as T
from iol.diff_engine.nn import MLP, init_mlp, mlp_forward
from iol.diff_engine.optim import AdamState, adam_step, collect_grads
from iol.diff_engine.tensor import Tensor, no_grad, np_sigmoid
from iol.trajectory_store import TrajectoryRecord, ValidationError

BASELINES = ("bc-linear", "bc-deep", "rcal", "cirl")


@dataclass
class StepTable:
    x: np.ndarray  # (N, d)
    a: np.ndarray  # (N,)
    y: np.ndarray  # (N,)
    traj: np.ndarray  # (N,) trajectory id per step
    t: np.ndarray  # (N,) step index within its trajectory

    def __len__(self) -> int:
        return self.a.shape[0]


def pool_steps(records: Sequence[TrajectoryRecord]) -> StepTable:
    if not records:
        raise ValidationError("no trajectories to pool")
    return StepTable(
        np.concatenate([r.x for r in records]),
        np.concatenate([r.a for r in records]),
        np.concatenate([r.y for r in records]),
        np.concatenate([np.full(r.T, r.id, dtype=object) for r in records]),
        np.concatenate([np.arange(r.T) for r in records]),
    )


def _require_both_classes(a: np.ndarray) -> None:
    if np.unique(a).size < 2:
        raise ValidationError("training actions contain a single class")


# ------------------------------------------------------------------ BC-Linear


@dataclass
class LinearPolicy:
    weights: np.ndarray
    intercept: float
    iterations: int = 0

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.weights + self.intercept

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return np_sigmoid(self.logits(x))


def _logistic_loss(z: np.ndarray, w: np.ndarray, a: np.ndarray) -> float:
    s = z @ w
    return float(np.mean(np.logaddexp(0.0, s) - a * s))


def fit_bc_linear(x: np.ndarray, a: np.ndarray, tol: float = 1e-8,
                  max_iter: int = 20_000) -> LinearPolicy:
    """Unregularised logistic regression by gradient descent with backtracking.

    Stops once the loss improves by less than ``tol`` in one step.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _require_both_classes(a)
    z = np.hstack([x, np.ones((x.shape[0], 1))])
    w = np.zeros(z.shape[1])
    loss = _logistic_loss(z, w, a)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        grad = z.T @ (np_sigmoid(z @ w) - a) / z.shape[0]
        gg = float(grad @ grad)
        step = min(step * 2.0, 1e3)
        while True:
            cand = w - step * grad
            new_loss = _logistic_loss(z, cand, a)
            if new_loss <= loss - 0.5 * step * gg or step < 1e-12:
                break
            step *= 0.5
        improvement = loss - new_loss
        w, loss = cand, new_loss
        if improvement < tol:
            break
    return LinearPolicy(w[:-1].copy(), float(w[-1]), it)


# ------------------------------------------------------------------ MLP classifiers


@dataclass
class NetPolicy:
    """Policy sigmoid(score(x)); two-output nets score as head1 - head0."""

    net: MLP
    two_head: bool = False

    def _score(self, x) -> Tensor:
        out = mlp_forward(self.net, x)
        if self.two_head:
            return out[..., 1] - out[..., 0]
        return out[..., 0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self._score(np.asarray(x, dtype=np.float64)).data

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return np_sigmoid(self.logits(x))


def classifier_loss(policy: NetPolicy, x: np.ndarray, a: np.ndarray, reward_l1: float = 0.0) -> Tensor:
    """Mean cross-entropy, plus ``reward_l1`` * mean |score| (the implied reward gap)."""
    score = policy._score(x)
    sign = 2.0 * np.asarray(a, dtype=np.float64) - 1.0
    loss = -T.mean(T.log_sigmoid(score * sign))
    if reward_l1:
        loss = loss + reward_l1 * T.mean(T.abs_(score))
    return loss


def _train_net(policy: NetPolicy, x, a, reward_l1: float, seed: int, epochs: int,
               batch_size: int, lr: float, tol: float) -> NetPolicy:
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    params = policy.net.parameters()
    state = AdamState()
    rng = np.random.default_rng([seed, 7])
    previous = np.inf
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], batch_size):
            idx = order[start:start + batch_size]
            for p in params:
                p.zero_grad()
            classifier_loss(policy, x[idx], a[idx], reward_l1).backward()
            adam_step(params, collect_grads(params), state, lr)
        with no_grad():
            current = float(classifier_loss(policy, x, a, reward_l1).data)
        if abs(previous - current) < tol:
            break
        previous = current
    return policy


def fit_bc_deep(x, a, hidden: int = 64, seed: int = 0, epochs: int = 30,
                batch_size: int = 256, lr: float = 3e-3, tol: float = 1e-8) -> NetPolicy:
    _require_both_classes(np.asarray(a))
    net = init_mlp([np.asarray(x).shape[1], hidden, 1], np.random.default_rng(seed), "bc_deep")
    return _train_net(NetPolicy(net), x, a, 0.0, seed, epochs, batch_size, lr, tol)


def fit_rcal(x, a, reward_l1: float = 0.01, hidden: int = 64, seed: int = 0, epochs: int = 30,
             batch_size: int = 256, lr: float = 3e-3, tol: float = 1e-8) -> NetPolicy:
    """Two-head Q network; the Q gap is the implied reward and is L1-penalised."""
    _require_both_classes(np.asarray(a))
    net = init_mlp([np.asarray(x).shape[1], hidden, 2], np.random.default_rng(seed), "rcal")
    return _train_net(NetPolicy(net, two_head=True), x, a, reward_l1, seed, epochs,
                      batch_size, lr, tol)


# ------------------------------------------------------------------ CIRL bandit adaptation


@dataclass
class CatePolicy:
    """Acts on an estimated true treatment effect: treat iff tau_hat(x) > 0."""

    coef1: np.ndarray  # includes trailing intercept
    coef0: np.ndarray

    def tau_hat(self, x: np.ndarray) -> np.ndarray:
        z = np.hstack([np.asarray(x), np.ones((np.asarray(x).shape[0], 1))])
        return z @ (self.coef1 - self.coef0)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return np_sigmoid(self.tau_hat(x))

    def act(self, x: np.ndarray) -> np.ndarray:
        return (self.tau_hat(x) > 0).astype(np.int64)


def _ridge(x: np.ndarray, y: np.ndarray, penalty: float) -> np.ndarray:
    z = np.hstack([x, np.ones((x.shape[0], 1))])
    return np.linalg.solve(z.T @ z + penalty * np.eye(z.shape[1]), z.T @ y)


def fit_cirl_bandit(x, a, y, penalty: float = 1e-3) -> CatePolicy:
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a)
    y = np.asarray(y, dtype=np.float64)
    for arm in (0, 1):
        if not np.any(a == arm):
            raise ValidationError(f"arm {arm} never observed; cannot estimate its outcome surface")
    return CatePolicy(_ridge(x[a == 1], y[a == 1], penalty), _ridge(x[a == 0], y[a == 0], penalty))


def fit_baseline(name: str, train: StepTable, seed: int = 0):
    if name == "bc-linear":
        return fit_bc_linear(train.x, train.a)
    if name == "bc-deep":
        return fit_bc_deep(train.x, train.a, seed=seed)
    if name == "rcal":
        return fit_rcal(train.x, train.a, seed=seed)
    if name == "cirl":
        return fit_cirl_bandit(train.x, train.a, train.y)
    raise ValidationError(f"unknown baseline {name!r}; valid names: {', '.join(BASELINES)}")
