"""Shared domain types: trajectories, per-arm statistics and seeded random streams."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "OptimistError",
    "ConfigError",
    "DataError",
    "InsufficientDataError",
    "HorizonExceededError",
    "SimulationError",
    "Trajectory",
    "ArmStats",
    "SeedSpec",
    "compute_arm_stats",
    "rng_stream",
    "child_seed",
    "read_trajectory_csv",
    "write_trajectory_csv",
]

MAX_SEED = 2**64 - 1


class OptimistError(Exception):
    """Base class for all package errors."""


class ConfigError(OptimistError, ValueError):
    """Invalid parameters or configuration."""


class DataError(OptimistError, ValueError):
    """Malformed or inconsistent input data."""


class InsufficientDataError(DataError):
    """An arm needed for inference has too few observations."""


class HorizonExceededError(OptimistError, RuntimeError):
    """A design was asked to act beyond its configured horizon."""


class SimulationError(OptimistError, RuntimeError):
    """Resimulation produced too many unusable replicates."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An observed (or simulated) history of arm pulls.

    Arms are 1-based, matching the CSV format. Record ``t`` (1-based) is
    implicit in array position.
    """

    arms: np.ndarray
    outcomes: np.ndarray
    K: int

    def __post_init__(self):
        arms = np.asarray(self.arms, dtype=np.int64).reshape(-1)
        outcomes = np.asarray(self.outcomes, dtype=np.float64).reshape(-1)
        if self.K < 1:
            raise DataError(f"K must be >= 1, got {self.K}")
        if arms.shape != outcomes.shape:
            raise DataError("arms and outcomes must have equal length")
        if arms.size and (arms.min() < 1 or arms.max() > self.K):
            bad = int(np.flatnonzero((arms < 1) | (arms > self.K))[0])
            raise DataError(
                f"arm index {int(arms[bad])} at t={bad + 1} outside [1, {self.K}]"
            )
        if not np.all(np.isfinite(outcomes)):
            raise DataError("outcomes must be finite")
        arms.setflags(write=False)
        outcomes.setflags(write=False)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def T(self) -> int:
        return int(self.arms.size)

    @classmethod
    def from_records(cls, records: Iterable[Sequence], K: int) -> "Trajectory":
        """Build from ``(t, arm, outcome)`` triples, checking that t runs 1..T."""
        records = list(records)
        for i, rec in enumerate(records, start=1):
            if int(rec[0]) != i:
                raise DataError(f"record {i} has t={rec[0]}; times must be exactly 1..T")
        arms = [int(r[1]) for r in records]
        outcomes = [float(r[2]) for r in records]
        return cls(np.array(arms, dtype=np.int64), np.array(outcomes, dtype=np.float64), K)

    def records(self):
        return [(t + 1, int(a), float(x)) for t, (a, x) in enumerate(zip(self.arms, self.outcomes))]

    def __len__(self):
        return self.T

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.K == other.K
            and np.array_equal(self.arms, other.arms)
            and np.array_equal(self.outcomes, other.outcomes)
        )

    __hash__ = None


@dataclass(frozen=True)
class ArmStats:
    """Pull counts, sample means and divide-by-N variances per arm.

    ``mean`` and ``varhat`` are masked arrays; an arm with zero pulls is
    masked (undefined) rather than NaN.
    """

    pulls: np.ndarray
    mean: np.ma.MaskedArray
    varhat: np.ma.MaskedArray

    @property
    def K(self) -> int:
        return int(self.pulls.size)


def compute_arm_stats(h: Trajectory) -> ArmStats:
    """Per-arm pulls, sample mean and plug-in variance (divide by N).

    Uses a two-pass scheme with exactly rounded sums (``math.fsum``), so the
    result does not depend on the order of outcomes within an arm.
    """
    K = h.K
    pulls = np.bincount(h.arms - 1, minlength=K).astype(np.int64) if h.T else np.zeros(K, np.int64)
    mean = np.zeros(K)
    var = np.zeros(K)
    if h.T:
        order = np.argsort(h.arms, kind="stable")
        groups = np.split(h.outcomes[order], np.cumsum(pulls)[:-1])
        for a, xs in enumerate(groups):
            if xs.size == 0:
                continue
            m = math.fsum(xs) / xs.size
            dev = xs - m
            mean[a] = m
            var[a] = math.fsum(dev * dev) / xs.size
    undefined = pulls == 0
    return ArmStats(
        pulls=pulls,
        mean=np.ma.masked_array(mean, mask=undefined.copy()),
        varhat=np.ma.masked_array(var, mask=undefined.copy()),
    )


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one independent random stream: ``(master_seed, stream_id)``."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= MAX_SEED:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if int(self.stream_id) < 0:
            raise ConfigError(f"stream_id must be nonnegative, got {self.stream_id}")


def rng_stream(spec: SeedSpec) -> np.random.Generator:
    """Return the random stream for ``spec``.

    The bit generator is Philox-4x64-10 (counter based) keyed through
    ``SeedSequence(master_seed, spawn_key=(stream_id,))``; outputs are
    identical across platforms for a given numpy major version.
    """
    ss = np.random.SeedSequence(int(spec.master_seed), spawn_key=(int(spec.stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(master_seed: int, *keys: int) -> int:
    """Derive a 64-bit master seed for a sub-task named by ``keys``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


# -- trajectory CSV ---------------------------------------------------------

CSV_HEADER = ("t", "arm", "outcome")


def _format_outcome(x: float) -> str:
    return repr(float(x))


def trajectory_to_csv(h: Trajectory) -> str:
    buf = io.StringIO(newline="")
    buf.write(",".join(CSV_HEADER) + "\n")
    for t, (a, x) in enumerate(zip(h.arms.tolist(), h.outcomes.tolist()), start=1):
        buf.write(f"{t},{a},{_format_outcome(x)}\n")
    return buf.getvalue()


def write_trajectory_csv(h: Trajectory, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(trajectory_to_csv(h))
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc
    return path


def parse_trajectory_csv(text: str, K: int | None = None, source: str = "<string>") -> Trajectory:
    """Parse the ``t,arm,outcome`` CSV format.

    If ``K`` is omitted it is taken as the largest arm index present.
    """
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise DataError(f"{source}: empty file, expected header 't,arm,outcome'") from None
    if tuple(c.strip() for c in header) != CSV_HEADER:
        raise DataError(f"{source}:1: expected header 't,arm,outcome', got {','.join(header)!r}")
    arms, outcomes = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DataError(f"{source}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            t, a, x = int(row[0]), int(row[1]), float(row[2])
        except ValueError:
            raise DataError(f"{source}:{lineno}: cannot parse row {','.join(row)!r}") from None
        if t != len(arms) + 1:
            raise DataError(f"{source}:{lineno}: t={t}, expected {len(arms) + 1} (rows sorted, no gaps)")
        if a < 1 or (K is not None and a > K):
            raise DataError(f"{source}:{lineno}: arm {a} outside [1, {K if K is not None else 'K'}]")
        if not math.isfinite(x):
            raise DataError(f"{source}:{lineno}: non-finite outcome")
        arms.append(a)
        outcomes.append(x)
    if K is None:
        K = max(arms) if arms else 1
    return Trajectory(np.array(arms, dtype=np.int64), np.array(outcomes, dtype=np.float64), K)


def read_trajectory_csv(path: str | Path, K: int | None = None) -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read trajectory {path}: {exc}") from exc
    return parse_trajectory_csv(text, K=K, source=str(path))
