"""Trajectory data model, JSONL/CSV ingestion, standardisation and splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from iol._json import fmt_float


class ValidationError(ValueError):
    """Input data violates the trajectory schema."""


@dataclass(frozen=True)
class StepRecord:
    x: tuple[float, ...]
    a: int
    y: float

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValidationError(f"action must be 0 or 1, got {self.a!r}")
        if not all(math.isfinite(v) for v in self.x) or not math.isfinite(self.y):
            raise ValidationError("non-finite value in step")


@dataclass(eq=False)
class TrajectoryRecord:
    """One agent's time-ordered (context, action, outcome) sequence.

    Stored column-wise: ``x`` is (T, d), ``a`` and ``y`` are (T,).
    """

    id: str
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValidationError(f"trajectory {self.id!r}: contexts must be a (T, d) array")
        n = self.x.shape[0]
        if n < 1:
            raise ValidationError(f"trajectory {self.id!r} has no steps")
        if self.a.shape != (n,) or self.y.shape != (n,):
            raise ValidationError(f"trajectory {self.id!r}: x, a, y lengths differ")
        if not np.all((self.a == 0) | (self.a == 1)):
            raise ValidationError(f"trajectory {self.id!r}: actions must be 0 or 1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValidationError(f"trajectory {self.id!r}: non-finite value")

    @classmethod
    def from_steps(cls, id: str, steps: Sequence[StepRecord]) -> "TrajectoryRecord":
        if not steps:
            raise ValidationError(f"trajectory {id!r} has no steps")
        d = len(steps[0].x)
        if any(len(s.x) != d for s in steps):
            raise ValidationError(f"trajectory {id!r}: context dimension varies across steps")
        return cls(
            id,
            np.array([s.x for s in steps], dtype=np.float64).reshape(len(steps), d),
            np.array([s.a for s in steps]),
            np.array([s.y for s in steps], dtype=np.float64),
        )

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def steps(self) -> list[StepRecord]:
        return [
            StepRecord(tuple(float(v) for v in xi), int(ai), float(yi))
            for xi, ai, yi in zip(self.x, self.a, self.y)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self) -> str:
        return f"TrajectoryRecord(id={self.id!r}, T={self.T}, d={self.d})"


def check_dimensions(records: Iterable[TrajectoryRecord]) -> int | None:
    d = None
    for r in records:
        if d is None:
            d = r.d
        elif r.d != d:
            raise ValidationError(f"trajectory {r.id!r} has d={r.d}, expected {d}")
    return d


# ------------------------------------------------------------------ JSONL


def _parse_trajectory(obj, lineno: int) -> TrajectoryRecord:
    if not isinstance(obj, dict) or "id" not in obj or "steps" not in obj:
        raise ValidationError(f"line {lineno}: expected an object with 'id' and 'steps'")
    tid = obj["id"]
    if not isinstance(tid, str):
        raise ValidationError(f"line {lineno}: id must be a string")
    try:
        steps = []
        for s in obj["steps"]:
            a = s["a"]
            if isinstance(a, bool) or not isinstance(a, int):
                raise ValidationError(f"trajectory {tid!r}: action must be the integer 0 or 1")
            steps.append(StepRecord(tuple(float(v) for v in s["x"]), a, float(s["y"])))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"line {lineno}: malformed step in trajectory {tid!r}: {exc}") from exc
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: trajectory {tid!r}: {exc}") from exc
    return TrajectoryRecord.from_steps(tid, steps)


def load_jsonl(path) -> list[TrajectoryRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: JSON parse error: {exc.msg}") from exc
            records.append(_parse_trajectory(obj, lineno))
    check_dimensions(records)
    return records


def trajectory_line(r: TrajectoryRecord) -> str:
    steps = ",".join(
        '{"x":[' + ",".join(fmt_float(v) for v in xi) + f'],"a":{int(ai)},"y":{fmt_float(yi)}}}'
        for xi, ai, yi in zip(r.x, r.a, r.y)
    )
    return f'{{"id":{json.dumps(r.id)},"steps":[{steps}]}}'


def save_jsonl(records: Iterable[TrajectoryRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(trajectory_line(r) + "\n")


# ------------------------------------------------------------------ CSV


def load_csv(path) -> list[TrajectoryRecord]:
    """Read the one-row-per-step export: id, t, x_0..x_{d-1}, a, y."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        xcols = [i for i, name in enumerate(header) if name.startswith("x_")]
        try:
            i_id, i_t, i_a, i_y = (header.index(k) for k in ("id", "t", "a", "y"))
        except ValueError as exc:
            raise ValidationError(f"CSV header missing a required column: {exc}") from exc
        rows: dict[str, list[tuple[int, StepRecord]]] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                step = StepRecord(
                    tuple(float(row[i]) for i in xcols), int(row[i_a]), float(row[i_y])
                )
                rows.setdefault(row[i_id], []).append((int(row[i_t]), step))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    records = [
        TrajectoryRecord.from_steps(tid, [s for _, s in sorted(steps, key=lambda p: p[0])])
        for tid, steps in rows.items()
    ]
    check_dimensions(records)
    return records


def save_csv(records: Sequence[TrajectoryRecord], path) -> None:
    d = check_dimensions(records) or 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t"] + [f"x_{j}" for j in range(d)] + ["a", "y"])
        for r in records:
            for t in range(r.T):
                w.writerow([r.id, t] + [fmt_float(v) for v in r.x[t]] + [int(r.a[t]), fmt_float(r.y[t])])


def load_records(path, fmt: str = "jsonl") -> list[TrajectoryRecord]:
    if fmt == "jsonl":
        return load_jsonl(path)
    if fmt == "csv":
        return load_csv(path)
    raise ValidationError(f"unknown data format {fmt!r} (expected jsonl or csv)")


# ------------------------------------------------------------------ standardisation


@dataclass
class StandardizationParams:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    binary_y: bool

    def apply(self, records: Iterable[TrajectoryRecord]) -> list[TrajectoryRecord]:
        return [
            replace(r, x=(r.x - self.x_mean) / self.x_std, y=(r.y - self.y_mean) / self.y_std)
            for r in records
        ]

    def invert(self, records: Iterable[TrajectoryRecord]) -> list[TrajectoryRecord]:
        return [
            replace(r, x=r.x * self.x_std + self.x_mean, y=r.y * self.y_std + self.y_mean)
            for r in records
        ]

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "binary_y": self.binary_y,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationParams":
        return cls(
            np.asarray(d["x_mean"], dtype=np.float64),
            np.asarray(d["x_std"], dtype=np.float64),
            float(d["y_mean"]),
            float(d["y_std"]),
            bool(d["binary_y"]),
        )

    @classmethod
    def identity(cls, d: int) -> "StandardizationParams":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0, False)


def fit_standardization(fit_on: Sequence[TrajectoryRecord]) -> StandardizationParams:
    if not fit_on:
        raise ValidationError("cannot fit standardisation on an empty set")
    check_dimensions(fit_on)
    x = np.concatenate([r.x for r in fit_on])
    y = np.concatenate([r.y for r in fit_on])
    x_mean = x.mean(axis=0)
    x_std = x.std(axis=0)
    x_std[~(x_std > 0)] = 1.0
    binary = bool(np.all((y == 0.0) | (y == 1.0)))
    if binary:
        return StandardizationParams(x_mean, x_std, 0.0, 1.0, True)
    y_std = float(y.std())
    return StandardizationParams(x_mean, x_std, float(y.mean()), y_std if y_std > 0 else 1.0, False)


def standardize(records, fit_on) -> tuple[list[TrajectoryRecord], StandardizationParams]:
    params = fit_standardization(fit_on)
    return params.apply(records), params


# ------------------------------------------------------------------ splitting


@dataclass
class DatasetSplit:
    train: list[TrajectoryRecord]
    validation: list[TrajectoryRecord]
    test: list[TrajectoryRecord]
    standardization: StandardizationParams = field(repr=False)

    @property
    def d(self) -> int:
        return self.train[0].d


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValidationError("split fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must sum to 1, got {sum(fractions)!r}")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(
    records: Sequence[TrajectoryRecord],
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    standardize_data: bool = True,
) -> DatasetSplit:
    """Partition trajectories by id; standardisation is fitted on train only."""
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("trajectory ids must be unique")
    n_train, n_val, _ = split_sizes(len(records), fractions)
    order = np.random.default_rng(seed).permutation(len(records))
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train:n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val:]]
    if standardize_data and train:
        params = fit_standardization(train)
    else:
        params = StandardizationParams.identity(check_dimensions(records) or 0)
    return DatasetSplit(params.apply(train), params.apply(val), params.apply(test), params)
