"""Post-hoc read-outs from inferred beliefs: weight timelines, policy shifts,
and sign agreement with a simulator's ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from iol._json import fmt_float
from iol.forward_sim import BeliefLog
from iol.trainer import TrajectoryBeliefs, infer_all
from iol.trajectory_store import TrajectoryRecord, ValidationError

SHIFT_MODES = ("at_context", "panel")


@dataclass
class WeightTimeline:
    labels: list[str]
    relative: np.ndarray  # (n_bins, d); NaN rows for empty bins
    counts: np.ndarray  # (n_bins,) steps per bin
    feature_names: list[str]

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0


@dataclass(frozen=True)
class ShiftSample:
    traj_id: str
    t: int
    action_taken: int
    outcome_bucket: str
    shift: float


def weight_timeline_from_omegas(omegas: Mapping[str, np.ndarray], n_bins: int,
                                feature_names: Sequence[str] | None = None) -> WeightTimeline:
    """Bin steps by index into ``n_bins`` equal-width bins over the longest
    horizon, average |omega1| per feature, and L1-normalise each bin."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    if not omegas:
        raise ValidationError("no trajectories to summarise")
    d = next(iter(omegas.values())).shape[1]
    horizon = max(o.shape[0] for o in omegas.values())
    sums = np.zeros((n_bins, d))
    counts = np.zeros(n_bins, dtype=np.int64)
    for omega in omegas.values():
        bins = np.arange(omega.shape[0]) * n_bins // horizon
        np.add.at(sums, bins, np.abs(omega))
        np.add.at(counts, bins, 1)
    relative = np.full((n_bins, d), np.nan)
    for k in np.flatnonzero(counts):
        mean_abs = sums[k] / counts[k]
        total = mean_abs.sum()
        relative[k] = mean_abs / total if total > 0 else np.full(d, 1.0 / d)
    # step t lands in bin t * n_bins // horizon, so bin k starts at ceil(k * horizon / n_bins)
    edges = [-(-k * horizon // n_bins) for k in range(n_bins + 1)]
    labels = [f"{edges[k]}-{edges[k + 1] - 1}" if counts[k] else f"empty_{k}" for k in range(n_bins)]
    names = list(feature_names) if feature_names is not None else [f"x_{j}" for j in range(d)]
    if len(names) != d:
        raise ValueError(f"{len(names)} feature names for {d} features")
    return WeightTimeline(labels, relative, counts, names)


def weight_timelines(model, records: Sequence[TrajectoryRecord], n_bins: int,
                     feature_names: Sequence[str] | None = None) -> WeightTimeline:
    beliefs = infer_all(model, records)
    return weight_timeline_from_omegas({k: b.omega1 for k, b in beliefs.items()}, n_bins,
                                       feature_names)


def outcome_bucket(y: float) -> str:
    return "positive" if y > 0 else "negative"


def shift_series_from_omegas(records: Sequence[TrajectoryRecord], omegas: Mapping[str, np.ndarray],
                             mode: str = "at_context",
                             panel: np.ndarray | None = None) -> list[ShiftSample]:
    """Change in perceived effect between consecutive steps.

    ``at_context``: tau_{t+1}(x_t) - tau_t(x_t), the move at the context just seen.
    ``panel``: the same difference averaged over a fixed set of reference contexts.
    """
    if mode not in SHIFT_MODES:
        raise ValueError(f"mode must be one of {SHIFT_MODES}")
    if mode == "panel" and panel is None:
        raise ValueError("panel mode needs reference contexts")
    out = []
    for r in records:
        omega = omegas[r.id]
        delta = np.diff(omega, axis=0)  # (T-1, d)
        if mode == "at_context":
            shifts = np.einsum("td,td->t", delta, r.x[:-1])
        else:
            shifts = delta @ np.asarray(panel).mean(axis=0)
        for t, s in enumerate(shifts):
            out.append(ShiftSample(r.id, t, int(r.a[t]), outcome_bucket(float(r.y[t])), float(s)))
    return out


def reference_panel(d: int, size: int = 128, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((size, d))


def policy_shift_series(model, records: Sequence[TrajectoryRecord], mode: str = "at_context",
                        panel: np.ndarray | None = None) -> list[ShiftSample]:
    beliefs = infer_all(model, records)
    if mode == "panel" and panel is None:
        panel = reference_panel(model.config.d)
    return shift_series_from_omegas(records, {k: b.omega1 for k, b in beliefs.items()}, mode, panel)


def sign_agreement(inferred: Mapping[str, np.ndarray], truth: Mapping[str, np.ndarray]) -> float:
    """Fraction of steps where the two perceived effects share a sign.

    Steps where either side is exactly zero are left out of the count.
    """
    agree = total = 0
    for tid, est in inferred.items():
        if tid not in truth:
            raise ValidationError(f"trajectory {tid!r} missing from the beliefs log")
        ref = np.asarray(truth[tid])
        est = np.asarray(est)
        if ref.shape != est.shape:
            raise ValidationError(
                f"trajectory {tid!r}: {est.shape[0]} inferred steps vs {ref.shape[0]} logged"
            )
        keep = (ref != 0) & (est != 0)
        agree += int(np.sum(np.sign(ref[keep]) == np.sign(est[keep])))
        total += int(keep.sum())
    if total == 0:
        raise ValidationError("no comparable steps")
    return agree / total


def belief_recovery_score(model, records: Sequence[TrajectoryRecord], beliefs_log: BeliefLog) -> float:
    inferred = infer_all(model, records)
    truth = {}
    for r in records:
        if r.id not in beliefs_log:
            raise ValidationError(f"trajectory {r.id!r} missing from the beliefs log")
        truth[r.id] = np.array([s.tau for s in beliefs_log[r.id]])
    return sign_agreement({k: b.tau for k, b in inferred.items()}, truth)


# ------------------------------------------------------------------ CSV export


def _write(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v: float) -> str:
    return "nan" if np.isnan(v) else fmt_float(v)


def export_weights_csv(timeline: WeightTimeline, path) -> None:
    rows = (
        [timeline.labels[k], j, timeline.feature_names[j], _num(timeline.relative[k, j])]
        for k in range(len(timeline.labels))
        for j in range(len(timeline.feature_names))
    )
    _write(path, ["bin", "feature_index", "feature_name", "relative_weight"], rows)


def export_shifts_csv(samples: Sequence[ShiftSample], path) -> None:
    ordered = sorted(samples, key=lambda s: (s.traj_id, s.t))
    rows = ([s.traj_id, s.t, s.action_taken, s.outcome_bucket, fmt_float(s.shift)] for s in ordered)
    _write(path, ["traj_id", "t", "action", "outcome_bucket", "shift"], rows)


def export_beliefs_csv(beliefs: Mapping[str, TrajectoryBeliefs], path, d: int | None = None) -> None:
    if d is None:
        d = next(iter(beliefs.values())).omega1.shape[1] if beliefs else 0
    rows = []
    for tid in sorted(beliefs):
        b = beliefs[tid]
        for t in range(b.tau.shape[0]):
            rows.append([tid, t, fmt_float(b.tau[t]), fmt_float(b.pi[t])]
                        + [fmt_float(v) for v in b.omega1[t]])
    _write(path, ["traj_id", "t", "tau_inferred", "pi"] + [f"omega_{j}" for j in range(d)], rows)


def export_csv(output, path, **kwargs) -> None:
    """Write any analysis output to its CSV schema."""
    if isinstance(output, WeightTimeline):
        export_weights_csv(output, path)
    elif isinstance(output, Mapping):
        export_beliefs_csv(output, path, **kwargs)
    elif isinstance(output, (list, tuple)):
        export_shifts_csv(output, path)
    else:
        raise TypeError(f"no CSV schema for {type(output).__name__}")
