"""``iol`` command line: simulate -> train -> evaluate -> analyze.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from iol import __version__
from iol._json import dumps
from iol.analysis import (
    export_beliefs_csv,
    export_shifts_csv,
    export_weights_csv,
    policy_shift_series,
    reference_panel,
    sign_agreement,
    weight_timeline_from_omegas,
    shift_series_from_omegas,
)
from iol.baselines import BASELINES, CatePolicy, fit_baseline, fit_cirl_bandit, pool_steps
from iol.config import ConfigError, RunConfig, load_config, override
from iol.forward_sim import (
    load_beliefs_jsonl,
    make_agent,
    make_environment,
    save_beliefs_jsonl,
    simulate,
)
from iol.metrics import evaluate
from iol.model import ModelConfig, NumericalError, iter_batches, predictive_action_probs
from iol.persist import Checkpoint, load_checkpoint, save_checkpoint
from iol.trainer import TrainConfig, infer_all, train
from iol.trajectory_store import (
    DatasetSplit,
    ValidationError,
    load_records,
    save_jsonl,
    split,
)

log = logging.getLogger("iol")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


# ------------------------------------------------------------------ helpers


def prepare_out_dir(out_dir, force: bool) -> Path:
    out = Path(out_dir)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"iol {__version__}" + (f" ({rev})" if rev else "")


def write_manifest(out: Path, command: str, config: RunConfig, seed: int, inputs: dict,
                   outputs: list[str], started: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "build": _build_id(),
        "config": config.to_dict(),
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": outputs,
        "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _split_raw(config: RunConfig, records) -> DatasetSplit:
    return split(records, tuple(config.data.fractions), seed=config.data.split_seed,
                 standardize_data=False)


def load_split(config: RunConfig, data_path, standardization=None) -> DatasetSplit:
    records = load_records(data_path, config.data.format)
    if not records:
        raise ValidationError(f"{data_path} holds no trajectories")
    if standardization is None:
        return split(records, tuple(config.data.fractions), seed=config.data.split_seed)
    raw = _split_raw(config, records)
    return DatasetSplit(
        standardization.apply(raw.train),
        standardization.apply(raw.validation),
        standardization.apply(raw.test),
        standardization,
    )


def train_config(config: RunConfig) -> TrainConfig:
    t = config.train
    return TrainConfig(
        lr=t.lr, epochs=t.epochs, batch_size=t.batch_size, mc_samples=t.mc_samples, seed=t.seed,
        clip_norm=t.clip_norm, patience=t.patience, kl_warmup_epochs=t.kl_warmup_epochs,
        lr_schedule=t.lr_schedule, min_lr_ratio=t.min_lr_ratio,
    )


def model_config(config: RunConfig, d: int) -> ModelConfig:
    m = config.model
    return ModelConfig(d=d, memory_dim=m.memory_dim, hidden=m.hidden, lstm_hidden=m.lstm_hidden,
                       summary_offset=m.summary_offset, forget_bias=m.forget_bias,
                       residual_transition=m.residual_transition)


def iol_probabilities(model, records) -> np.ndarray:
    """Leak-free P(a_t=1) for every step, flattened in record order."""
    by_id = {}
    for batch in iter_batches(records, 256):
        probs = predictive_action_probs(model, batch)
        for i, tid in enumerate(batch.ids):
            by_id[tid] = probs[i]
    return np.concatenate([by_id[r.id] for r in records])


# ------------------------------------------------------------------ commands


def cmd_simulate(config: RunConfig, out_dir, force: bool = False) -> dict:
    started = time.time()
    out = prepare_out_dir(out_dir, force)
    s = config.sim
    env = make_environment(s.context_dim, [s.seed, 0], s.noise_std)
    agent = make_agent(s.context_dim, s.learning_rate, [s.seed, 1])
    corpus, beliefs = simulate(env, agent, s.n_traj, s.horizon, s.seed, prior=s.agent_prior)
    save_jsonl(corpus, out / "corpus.jsonl")
    save_beliefs_jsonl(beliefs, out / "beliefs.jsonl")
    truth = {
        "w1_true": env.w1_true, "w0_true": env.w0_true, "noise_std": env.noise_std,
        "agent_prior_w1": agent.w1, "agent_prior_w0": agent.w0, "agent_prior": s.agent_prior,
        "lambda": s.learning_rate,
    }
    (out / "environment.json").write_text(dumps(truth) + "\n")
    outputs = ["corpus.jsonl", "beliefs.jsonl", "environment.json"]
    write_manifest(out, "simulate", config, s.seed, {}, outputs, started)
    return {name: out / name for name in outputs}


def cmd_train(config: RunConfig, data, out_dir, checkpoint=None, resume: bool = False,
              force: bool = False) -> dict:
    started = time.time()
    out = prepare_out_dir(out_dir, force)
    previous = None
    if resume:
        if checkpoint is None:
            raise ValidationError("--resume needs --checkpoint")
        previous = load_checkpoint(checkpoint)
        dataset = load_split(config, data, previous.standardization)
    else:
        dataset = load_split(config, data)
    model, report, optimizer = train(
        dataset,
        train_config(config),
        model_config(config, dataset.d),
        model=previous.model if previous else None,
        optimizer=previous.optimizer if previous else None,
        history=previous.report if previous else None,
        log=log.info,
    )
    data_info = {"split_seed": config.data.split_seed, "fractions": list(config.data.fractions)}
    save_checkpoint(out / "checkpoint.json",
                    Checkpoint(model, dataset.standardization, optimizer, report, data_info))
    (out / "report.json").write_text(dumps(report.to_dict(include_timing=False)) + "\n")
    write_manifest(out, "train", config, config.train.seed,
                   {"data": data, "checkpoint": checkpoint}, ["checkpoint.json", "report.json"],
                   started, {"train_wall_clock_seconds": round(report.wall_clock, 3)})
    return {"checkpoint": out / "checkpoint.json", "report": out / "report.json"}


def cmd_evaluate(config: RunConfig, checkpoint, data, out_dir, baselines=None,
                 force: bool = False) -> dict:
    started = time.time()
    names = list(config.evaluate.baselines if baselines is None else baselines)
    unknown = [n for n in names if n not in BASELINES]
    if unknown:
        raise ValidationError(
            f"unknown baseline(s) {', '.join(unknown)}; valid names: {', '.join(BASELINES)}"
        )
    out = prepare_out_dir(out_dir, force)
    ckpt = load_checkpoint(checkpoint)
    dataset = load_split(config, data, ckpt.standardization)
    if not dataset.test:
        raise ValidationError("test split is empty")
    test = pool_steps(dataset.test)
    e = config.evaluate
    rows = {"iol": evaluate(iol_probabilities(ckpt.model, dataset.test), test.a, test.traj,
                            e.repetitions, e.seed)}
    train_steps = pool_steps(dataset.train)
    for name in names:
        policy = fit_baseline(name, train_steps, seed=e.seed)
        rows[name] = evaluate(policy.predict_proba(test.x), test.a, test.traj, e.repetitions, e.seed)
    header = ["method", "acc", "auc", "aps", "nll", "acc_std", "auc_std", "aps_std", "nll_std"]
    lines = [",".join(header)]
    for method, rep in rows.items():
        d = rep.to_dict()
        vals = [d[k] for k in header[1:]]
        lines.append(",".join([method] + ["" if v is None else format(v, ".17g") for v in vals]))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    (out / "metrics.json").write_text(dumps({m: r.to_dict() for m, r in rows.items()}) + "\n")
    write_manifest(out, "evaluate", config, e.seed, {"data": data, "checkpoint": checkpoint},
                   ["metrics.csv", "metrics.json"], started)
    return {"metrics": out / "metrics.csv", "reports": rows}


def cmd_analyze(config: RunConfig, checkpoint, data, out_dir, beliefs=None,
                force: bool = False) -> dict:
    started = time.time()
    a = config.analyze
    if a.split not in ("train", "validation", "test", "all"):
        raise ConfigError(f"analyze.split must be train, validation, test or all, got {a.split!r}")
    out = prepare_out_dir(out_dir, force)
    ckpt = load_checkpoint(checkpoint)
    dataset = load_split(config, data, ckpt.standardization)
    if a.split == "all":
        records = dataset.train + dataset.validation + dataset.test
    else:
        records = getattr(dataset, a.split)
    if not records:
        raise ValidationError(f"{a.split} split is empty")
    inferred = infer_all(ckpt.model, records)
    omegas = {k: b.omega1 for k, b in inferred.items()}
    export_weights_csv(weight_timeline_from_omegas(omegas, a.n_bins), out / "weights.csv")
    panel = reference_panel(ckpt.model.config.d) if a.shift_mode == "panel" else None
    export_shifts_csv(shift_series_from_omegas(records, omegas, a.shift_mode, panel),
                      out / "shifts.csv")
    export_beliefs_csv(inferred, out / "beliefs.csv", ckpt.model.config.d)
    outputs = ["weights.csv", "shifts.csv", "beliefs.csv"]
    result = {name.split(".")[0]: out / name for name in outputs}
    if beliefs is not None:
        log_ = load_beliefs_jsonl(beliefs)
        truth = {}
        for r in records:
            if r.id not in log_:
                raise ValidationError(f"trajectory {r.id!r} missing from {beliefs}")
            truth[r.id] = np.array([s.tau for s in log_[r.id]])
        iol_score = sign_agreement({k: b.tau for k, b in inferred.items()}, truth)
        train_steps = pool_steps(dataset.train)
        cirl: CatePolicy = fit_cirl_bandit(train_steps.x, train_steps.a, train_steps.y)
        cirl_score = sign_agreement({r.id: cirl.tau_hat(r.x) for r in records}, truth)
        recovery = {
            "iol": iol_score,
            "cirl_stationary": cirl_score,
            "split": a.split,
            "n_trajectories": len(records),
            "n_steps": int(sum(r.T for r in records)),
        }
        (out / "recovery.json").write_text(dumps(recovery) + "\n")
        outputs.append("recovery.json")
        result["recovery"] = recovery
    write_manifest(out, "analyze", config, config.evaluate.seed,
                   {"data": data, "checkpoint": checkpoint, "beliefs": beliefs}, outputs, started)
    return result


# ------------------------------------------------------------------ argument parsing


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors, not argparse's default exit status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the command's seed")
        p.add_argument("--force", action="store_true", help="allow a non-empty output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    p = sub.add_parser("simulate", help="generate a corpus with ground-truth beliefs")
    common(p)
    p = sub.add_parser("train", help="fit the model to a corpus")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--checkpoint", type=Path, help="checkpoint to resume from")
    p.add_argument("--resume", action="store_true")
    p = sub.add_parser("evaluate", help="held-out action matching vs baselines")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--baselines", help="comma-separated subset of " + ",".join(BASELINES))
    p = sub.add_parser("analyze", help="export weight, shift and belief CSVs")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--beliefs", type=Path, help="simulator beliefs log for recovery scoring")
    p.add_argument("--n-bins", type=int)
    return parser


_SEED_KEYS = {"simulate": "sim.seed", "train": "train.seed", "evaluate": "evaluate.seed",
              "analyze": "evaluate.seed"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        override(config, key, _parse_value(value))
    if args.seed is not None:
        override(config, _SEED_KEYS[args.command], args.seed)
    if getattr(args, "format", None):
        override(config, "data.format", args.format)
    if getattr(args, "n_bins", None) is not None:
        override(config, "analyze.n_bins", args.n_bins)
    return config


def run(args) -> None:
    config = resolve_config(args)
    if args.command == "simulate":
        cmd_simulate(config, args.out, args.force)
    elif args.command == "train":
        cmd_train(config, args.data, args.out, args.checkpoint, args.resume, args.force)
    elif args.command == "evaluate":
        names = None
        if args.baselines is not None:
            names = [n.strip() for n in args.baselines.split(",") if n.strip()]
        cmd_evaluate(config, args.checkpoint, args.data, args.out, names, args.force)
    elif args.command == "analyze":
        cmd_analyze(config, args.checkpoint, args.data, args.out, args.beliefs, args.force)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"iol: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"iol: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"iol: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
