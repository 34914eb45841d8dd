"""Online-learning agents in a linear environment, with ground-truth beliefs.

The agent believes each arm's outcome is linear in the context, acts through
a sigmoid of its perceived effect and updates the taken arm's weights by
online gradient descent on squared error.  The simulator records, for every
step, the weights and perceived effect the agent held *when it acted*.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from iol._json import dumps
from iol.diff_engine.tensor import np_sigmoid
from iol.trajectory_store import TrajectoryRecord, ValidationError

PRIOR_MODES = ("shared", "per_trajectory")


@dataclass(frozen=True)
class Environment:
    d: int
    w1_true: np.ndarray
    w0_true: np.ndarray
    noise_std: float = 0.5

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.d)

    def outcome(self, x: np.ndarray, a: int, rng: np.random.Generator) -> float:
        w = self.w1_true if a == 1 else self.w0_true
        noise = self.noise_std * rng.standard_normal() if self.noise_std > 0 else 0.0
        return float(x @ w + noise)


@dataclass(frozen=True)
class AgentState:
    w1: np.ndarray
    w0: np.ndarray
    lr: float
    alpha: float = 1.0
    beta: float = 0.0

    def perceived_effect(self, x: np.ndarray) -> float:
        return float(x @ self.w1 - x @ self.w0)


@dataclass(frozen=True)
class BeliefStep:
    tau: float
    w1: np.ndarray
    w0: np.ndarray


BeliefLog = dict[str, list[BeliefStep]]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def make_environment(d: int, seed, noise_std: float = 0.5) -> Environment:
    if d < 1:
        raise ValueError("d must be at least 1")
    rng = _rng(seed)
    w1 = rng.standard_normal(d)
    w0 = rng.standard_normal(d)
    return Environment(d, w1, w0, float(noise_std))


def make_agent(d: int, lr: float, seed, alpha: float = 1.0, beta: float = 0.0) -> AgentState:
    """Agent whose initial believed weights are drawn from N(0, I)."""
    rng = _rng(seed)
    w1 = rng.standard_normal(d)
    w0 = rng.standard_normal(d)
    return AgentState(w1, w0, float(lr), alpha, beta)


def true_cate(env: Environment, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (env.d,):
        raise ValueError(f"context has shape {x.shape}, expected ({env.d},)")
    return float(x @ (env.w1_true - env.w0_true))


def agent_act(agent: AgentState, x, rng: np.random.Generator) -> tuple[int, float]:
    tau = agent.perceived_effect(np.asarray(x, dtype=np.float64))
    p = float(np_sigmoid(agent.alpha * (tau - agent.beta)))
    a = int(rng.random() < p)
    return a, p


def agent_update(agent: AgentState, x, a: int, y: float) -> AgentState:
    """Online gradient step on the taken arm: w_a <- w_a - lr * (y_hat - y) * x."""
    x = np.asarray(x, dtype=np.float64)
    if a == 1:
        residual = float(x @ agent.w1) - y
        return replace(agent, w1=agent.w1 - agent.lr * residual * x)
    if a == 0:
        residual = float(x @ agent.w0) - y
        return replace(agent, w0=agent.w0 - agent.lr * residual * x)
    raise ValueError(f"action must be 0 or 1, got {a!r}")


def simulate(
    env: Environment,
    agent_init: AgentState,
    n_traj: int,
    horizon: int,
    seed: int,
    prior: str = "shared",
) -> tuple[list[TrajectoryRecord], BeliefLog]:
    """Roll out ``n_traj`` independent agents for ``horizon`` steps each.

    ``prior="shared"`` starts every trajectory from ``agent_init``'s weights;
    ``"per_trajectory"`` draws fresh N(0, I) weights for each one.  Each
    trajectory has its own generator seeded from ``(seed, i)``, so results do
    not depend on the order trajectories are produced in.
    """
    if n_traj < 1 or horizon < 1:
        raise ValueError("n_traj and horizon must be at least 1")
    if prior not in PRIOR_MODES:
        raise ValueError(f"prior must be one of {PRIOR_MODES}, got {prior!r}")
    width = len(str(n_traj - 1))
    corpus, beliefs = [], {}
    for i in range(n_traj):
        rng = _rng([seed, i])
        agent = agent_init
        if prior == "per_trajectory":
            agent = replace(agent, w1=rng.standard_normal(env.d), w0=rng.standard_normal(env.d))
        xs = np.empty((horizon, env.d))
        acts = np.empty(horizon, dtype=np.int64)
        ys = np.empty(horizon)
        log = []
        for t in range(horizon):
            x = env.sample_context(rng)
            a, _ = agent_act(agent, x, rng)
            y = env.outcome(x, a, rng)
            log.append(BeliefStep(agent.perceived_effect(x), agent.w1.copy(), agent.w0.copy()))
            agent = agent_update(agent, x, a, y)
            xs[t], acts[t], ys[t] = x, a, y
        tid = f"traj{i:0{width}d}"
        corpus.append(TrajectoryRecord(tid, xs, acts, ys))
        beliefs[tid] = log
    return corpus, beliefs


def shift_oracle(x: np.ndarray, a: int, y: float, step: BeliefStep, lr: float) -> float:
    """Change in perceived effect at ``x`` caused by one OGD update.

    Treated arm: -lr * (y_hat - y) * <x, x>; the untreated arm enters the
    effect with the opposite sign.
    """
    w = step.w1 if a == 1 else step.w0
    move = -lr * (float(x @ w) - y) * float(x @ x)
    return move if a == 1 else -move


# ------------------------------------------------------------------ beliefs log I/O


def save_beliefs_jsonl(beliefs: BeliefLog, path) -> None:
    with open(path, "w") as fh:
        for tid, steps in beliefs.items():
            obj = {
                "id": tid,
                "steps": [
                    {"tau_true_belief": s.tau, "w1": s.w1, "w0": s.w0} for s in steps
                ],
            }
            fh.write(dumps(obj) + "\n")


def load_beliefs_jsonl(path) -> BeliefLog:
    out: BeliefLog = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out[obj["id"]] = [
                BeliefStep(
                    float(s["tau_true_belief"]),
                    np.asarray(s["w1"], dtype=np.float64),
                    np.asarray(s["w0"], dtype=np.float64),
                )
                for s in obj["steps"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"beliefs line {lineno}: {exc}") from exc
    return out


def belief_taus(beliefs: BeliefLog, ids: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    keys = beliefs.keys() if ids is None else ids
    return {k: np.array([s.tau for s in beliefs[k]]) for k in keys}
