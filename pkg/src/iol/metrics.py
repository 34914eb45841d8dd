"""Action-matching metrics: accuracy, ROC AUC, average precision, NLL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_CLIP = 1e-15


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if scores.size == 0:
        raise ValueError("empty evaluation set")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(values)]])
    ranks = np.empty(len(values))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney AUC; None when only one class is present."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    rank_sum = midranks(scores)[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float | None:
    """Area under the precision-recall step curve.

    Each distinct score is one threshold; precision is taken at every point
    where recall changes.  None when there are no positives.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        return None
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(l)[last_of_tie]
    predicted = last_of_tie + 1
    precision = tp / predicted
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def accuracy(probs, labels, threshold: float = 0.5) -> float:
    probs, labels = _check(probs, labels)
    return float(np.mean((probs >= threshold).astype(np.int64) == labels))


def log_loss(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log1p(-p)))


@dataclass(frozen=True)
class MetricValue:
    mean: float | None
    std: float | None


@dataclass(frozen=True)
class MetricReport:
    acc: MetricValue
    auc: MetricValue
    aps: MetricValue
    nll: MetricValue
    n: int
    repetitions: int = 1

    @property
    def auc_defined(self) -> bool:
        return self.auc.mean is not None

    def to_dict(self) -> dict:
        return {
            "acc": self.acc.mean, "acc_std": self.acc.std,
            "auc": self.auc.mean, "auc_std": self.auc.std,
            "aps": self.aps.mean, "aps_std": self.aps.std,
            "nll": self.nll.mean, "nll_std": self.nll.std,
            "n": self.n, "repetitions": self.repetitions,
            "auc_defined": self.auc_defined,
        }


def _aggregate(values: list[float | None]) -> MetricValue:
    if any(v is None for v in values):
        return MetricValue(None, None)
    arr = np.asarray(values, dtype=np.float64)
    return MetricValue(float(arr.mean()), float(arr.std()))


def evaluate(probs, labels, groups=None, repetitions: int = 1, seed: int = 0) -> MetricReport:
    """Score predicted P(a=1) against observed actions.

    With ``repetitions > 1`` the test set is resampled with replacement
    (whole ``groups`` at a time, e.g. trajectory ids, when given) and the
    report carries mean and std across resamples; repetition 0 is always the
    unresampled set.
    """
    probs, labels = _check(probs, labels)
    rng = np.random.default_rng(seed)
    if groups is not None:
        groups = np.asarray(groups)
        uniq, inverse = np.unique(groups, return_inverse=True)
        members = [np.flatnonzero(inverse == g) for g in range(len(uniq))]
    runs = {"acc": [], "auc": [], "aps": [], "nll": []}
    for r in range(repetitions):
        if r == 0:
            idx = np.arange(probs.size)
        elif groups is None:
            idx = rng.integers(0, probs.size, probs.size)
        else:
            picks = rng.integers(0, len(members), len(members))
            idx = np.concatenate([members[i] for i in picks])
        p, y = probs[idx], labels[idx]
        runs["acc"].append(accuracy(p, y))
        runs["auc"].append(roc_auc(p, y))
        runs["aps"].append(average_precision(p, y))
        runs["nll"].append(log_loss(p, y))
    return MetricReport(
        _aggregate(runs["acc"]), _aggregate(runs["auc"]), _aggregate(runs["aps"]),
        _aggregate(runs["nll"]), int(probs.size), repetitions,
    )
