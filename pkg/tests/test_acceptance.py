"""End-to-end acceptance checks.

Every check records a PASS/FAIL line; the lines are printed together in the
terminal summary.  The nonstationary corpus is simulated, trained on and
analysed once per session through the command implementations, using
``configs/acceptance.toml``.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from iol.cli import cmd_analyze, cmd_evaluate, cmd_simulate, cmd_train, load_split
from iol.config import load_config, override
from iol.diff_engine import DiagGaussian, Tensor, grad_check, kl_diag
from iol.forward_sim import load_beliefs_jsonl
from iol.metrics import average_precision, roc_auc
from iol.model import (
    Batch,
    ModelConfig,
    action_likelihood,
    elbo,
    init_model,
    iter_batches,
    log_marginal_mc,
    memory_transition,
    posterior_mean_path,
)
from iol.persist import load_checkpoint
from iol.trainer import TrainConfig, infer_beliefs, train
from iol.trajectory_store import DatasetSplit, StandardizationParams, TrajectoryRecord, load_jsonl, save_jsonl

from conftest import ACCEPTANCE_LINES, random_records

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "acceptance.toml"
BUDGET_SECONDS = 30 * 60


def record(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def run_pipeline(root: Path, learning_rate: float | None = None, beliefs: bool = True) -> dict:
    config = load_config(CONFIG)
    if learning_rate is not None:
        override(config, "sim.lambda", learning_rate)
    started = time.perf_counter()
    cmd_simulate(config, root / "sim")
    data = root / "sim" / "corpus.jsonl"
    cmd_train(config, data, root / "train")
    ckpt = root / "train" / "checkpoint.json"
    analysis = cmd_analyze(config, ckpt, data, root / "analyze",
                           beliefs=root / "sim" / "beliefs.jsonl" if beliefs else None)
    elapsed = time.perf_counter() - started
    cmd_evaluate(config, ckpt, data, root / "evaluate")
    return {
        "config": config,
        "root": root,
        "elapsed": elapsed,
        "recovery": analysis.get("recovery"),
        "metrics": json.loads((root / "evaluate" / "metrics.json").read_text()),
        "report": json.loads((root / "train" / "report.json").read_text()),
        "checkpoint": load_checkpoint(ckpt),
        "dataset": load_split(config, data),
    }


@pytest.fixture(scope="module")
def nonstationary(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("nonstationary"))


@pytest.fixture(scope="module")
def stationary(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("stationary"), learning_rate=0.0, beliefs=False)


@pytest.mark.slow
def test_belief_recovery(nonstationary):
    rec = nonstationary["recovery"]
    minutes = nonstationary["elapsed"] / 60
    ok = (rec["n_trajectories"] == 200 and rec["iol"] >= 0.95 and rec["cirl_stationary"] <= 0.60
          and nonstationary["elapsed"] <= BUDGET_SECONDS)
    record(1, ok, f"IOL recovery {rec['iol']:.4f} (>= 0.95), stationary CIRL {rec['cirl_stationary']:.4f} "
                  f"(<= 0.60), {rec['n_trajectories']} held-out trajectories, {minutes:.1f} min")
    assert rec["n_trajectories"] == 200
    assert nonstationary["elapsed"] <= BUDGET_SECONDS
    assert rec["iol"] >= 0.95
    assert rec["cirl_stationary"] <= 0.60


@pytest.mark.slow
def test_action_matching_dominance(nonstationary):
    aucs = {m: r["auc"] for m, r in nonstationary["metrics"].items()}
    iol = aucs.pop("iol")
    assert set(aucs) == {"bc-linear", "bc-deep", "rcal", "cirl"}
    margin = iol - aucs["bc-linear"]
    ok = margin >= 0.03 and iol > max(aucs.values())
    others = ", ".join(f"{m} {v:.4f}" for m, v in aucs.items())
    record(2, ok, f"IOL AUC {iol:.4f}, margin over BC-Linear {margin:+.4f} (>= 0.03); {others}")
    assert iol > max(aucs.values())
    assert margin >= 0.03


@pytest.mark.slow
def test_stationary_sanity(stationary):
    aucs = {m: r["auc"] for m, r in stationary["metrics"].items()}
    # generating policy: the agent's own action probability at every held-out step
    log = load_beliefs_jsonl(stationary["root"] / "sim" / "beliefs.jsonl")
    test = stationary["dataset"].test
    truth_p = np.concatenate([1 / (1 + np.exp(-np.array([s.tau for s in log[r.id]]))) for r in test])
    actions = np.concatenate([r.a for r in test])
    generating = roc_auc(truth_p, actions)
    ratio = aucs["bc-linear"] / generating
    gap = abs(aucs["iol"] - aucs["bc-linear"])
    ok = ratio >= 0.95 and gap <= 0.02
    record(3, ok, f"BC-Linear AUC {aucs['bc-linear']:.4f} = {ratio:.4f} x generating {generating:.4f} "
                  f"(>= 0.95); |IOL - BC-Linear| {gap:.4f} (<= 0.02)")
    assert ratio >= 0.95
    assert gap <= 0.02


def test_gradient_correctness():
    started = time.perf_counter()
    # compact widths keep the 1-minute budget; at the default widths the only entries above
    # 1e-3 are gradients below 1e-7, where central differences are roundoff-limited
    model = init_model(ModelConfig(d=3, memory_dim=2, hidden=16, lstm_hidden=16), seed=0)
    traj = random_records(1, d=3, horizon=(3, 3), seed=4)[0]

    def f():
        value, _ = elbo(model.gen, model.inf, traj, np.random.default_rng(0), mc_samples=1)
        return value
    worst = grad_check(f, model.parameters())
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-3 and elapsed <= 60
    n = sum(p.data.size for p in model.parameters())
    record(4, ok, f"max relative error {worst:.2e} over {n} parameters (<= 1e-3), {elapsed:.1f} s")
    assert worst <= 1e-3
    assert elapsed <= 60


def test_elbo_bound():
    rng = np.random.default_rng(0)
    corpus = [TrajectoryRecord(f"t{i}", rng.normal(size=(2, 2)), rng.integers(0, 2, 2), rng.normal(size=2))
              for i in range(64)]
    data = DatasetSplit(corpus, [], [], StandardizationParams.identity(2))
    model, _, _ = train(data, TrainConfig(epochs=20, lr=1e-2, batch_size=16, seed=0),
                        ModelConfig(d=2, memory_dim=1, hidden=8, lstm_hidden=8))
    worst = -np.inf
    for traj in corpus[:3]:
        value, _ = elbo(model.gen, model.inf, traj, np.random.default_rng(1), mc_samples=10_000)
        estimate, se = log_marginal_mc(model, traj, 1_000_000, np.random.default_rng(2))
        worst = max(worst, float(value.data) - (estimate + 3 * se))
    ok = worst <= 0
    record(5, ok, f"max over 3 trajectories of ELBO - (log p + 3 SE) = {worst:.4f} (<= 0)")
    assert worst <= 0


def kl_by_quadrature(mq, sq, mp, sp):
    total = 0.0
    for a, b, c, d in zip(mq, sq, mp, sp):
        def integrand(z):
            return norm.pdf(z, a, b) * (norm.logpdf(z, a, b) - norm.logpdf(z, c, d))
        value, _ = integrate.quad(integrand, a - 12 * b, a + 12 * b, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += value
    return total


def test_kl_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        k = int(rng.integers(1, 5))
        mq, mp = rng.normal(size=k), rng.normal(size=k)
        sq, sp = rng.uniform(0.3, 2.0, k), rng.uniform(0.3, 2.0, k)
        ours = float(kl_diag(DiagGaussian(Tensor(mq), Tensor(sq)), DiagGaussian(Tensor(mp), Tensor(sp))).data)
        worst = max(worst, abs(ours - kl_by_quadrature(mq, sq, mp, sp)))
    ok = worst <= 1e-6
    record(6, ok, f"max |KL - quadrature| on 10 pairs {worst:.2e} (<= 1e-6)")
    assert worst <= 1e-6


def test_metric_oracles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 6, n) / 5.0 if rng.random() < 0.5 else rng.random(n)
        pos, neg = scores[labels == 1], scores[labels == 0]
        auc = np.mean((pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :]))
        aps = np.mean([labels[scores >= s].mean() for s in pos])
        worst = max(worst, abs(roc_auc(scores, labels) - auc), abs(average_precision(scores, labels) - aps))
    ok = worst <= 1e-9
    record(7, ok, f"max deviation from brute force on 100 sets {worst:.2e} (<= 1e-9)")
    assert worst <= 1e-9


@pytest.mark.slow
def test_model_invariants(nonstationary):
    model = nonstationary["checkpoint"].model
    test = nonstationary["dataset"].test
    mu0_zero = all(b.mu0 == 0.0 for r in test for b in infer_beliefs(model, r))
    alpha = model.gen.alpha
    grid = np.linspace(-5, 5, 1001)
    probs = np.exp([action_likelihood(model.gen, t, 1) for t in grid])
    increasing = bool(np.all(np.diff(probs) > 0))
    # the transition into step t reads only step t-1; perturbing x_t must change nothing
    worst = 0.0
    for r in test[:20]:
        memory = posterior_mean_path(model, Batch.from_records([r])).memory_mean[0]
        for t in range(1, r.T):
            g1 = memory_transition(model.gen, memory[t - 1], r.steps[t - 1])
            moved_x = r.x.copy()
            moved_x[t] += 10.0
            g2 = memory_transition(model.gen, memory[t - 1], TrajectoryRecord(r.id, moved_x, r.a, r.y).steps[t - 1])
            worst = max(worst, float(np.max(np.abs(g1.mean.data - g2.mean.data))),
                        float(np.max(np.abs(g1.std.data - g2.std.data))))
    ok = mu0_zero and alpha > 0 and increasing and worst == 0.0
    record(8, ok, f"mu0 == 0 on every step: {mu0_zero}; alpha {alpha:.4f} > 0; "
                  f"pi strictly increasing: {increasing}; transition change under x_t perturbation {worst}")
    assert mu0_zero and alpha > 0 and increasing and worst == 0.0


@pytest.mark.slow
def test_determinism_and_round_trip(tmp_path):
    config = load_config(CONFIG)
    # a reduced corpus keeps two full pipeline runs cheap; every output file is compared
    for key, value in (("sim.n_traj", 100), ("sim.horizon", 10), ("train.epochs", 3)):
        override(config, key, value)
    for name in ("first", "second"):
        out = tmp_path / name
        cmd_simulate(config, out / "sim")
        data = out / "sim" / "corpus.jsonl"
        cmd_train(config, data, out / "train")
        cmd_analyze(config, out / "train" / "checkpoint.json", data, out / "analyze",
                    beliefs=out / "sim" / "beliefs.jsonl")
    files = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*")
                   if p.suffix in (".csv", ".jsonl"))
    differing = [str(f) for f in files
                 if (tmp_path / "first" / f).read_bytes() != (tmp_path / "second" / f).read_bytes()]

    records = random_records(1000, d=4, horizon=(1, 20), seed=0)
    save_jsonl(records, tmp_path / "rt.jsonl")
    round_trip = load_jsonl(tmp_path / "rt.jsonl") == records
    ok = not differing and round_trip and len(files) == 5
    record(9, ok, f"{len(files)} CSV/JSONL outputs compared, differing: {differing or 'none'}; "
                  f"JSONL round trip on 1000 trajectories identical: {round_trip}")
    assert len(files) == 5
    assert not differing
    assert round_trip


@pytest.mark.slow
def test_training_health(nonstationary):
    report = nonstationary["report"]
    objective = np.asarray(report["step_objective"])
    nll = np.asarray(report["step_nll"])
    window = 50
    smoothed = np.convolve(objective, np.ones(window) / window, mode="valid")
    rises = np.diff(smoothed)
    monotone = bool(np.all(rises <= 0))
    # initial: the first logged step, scored before any parameter update; final: last window
    ratio = nll[-window:].mean() / nll[0]
    ok = monotone and ratio <= 0.8
    record(10, ok, f"window-50 smoothed objective non-increasing: {monotone} "
                   f"({int(np.sum(rises > 0))} of {rises.size} steps rise, largest rise {rises.max():.4f}); "
                   f"final/initial NLL {nll[-window:].mean():.3f}/{nll[0]:.3f} = {ratio:.4f} (<= 0.8)")
    assert ratio <= 0.8
    assert monotone
