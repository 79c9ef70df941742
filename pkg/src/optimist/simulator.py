"""Trajectory generation: true-model experiments and Gaussian resimulation under a null."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as kn
from .core import ConfigError, SeedSpec, SimulationError, Trajectory, rng_stream
from .designs import DesignSpec

__all__ = [
    "ArmModel",
    "ArmMean",
    "DiffMeans",
    "NullSpec",
    "BatchResult",
    "simulate_null_trajectory",
    "run_true_experiment",
    "batch_simulate",
    "simulation_means",
    "replicate_draws",
    "resolve_workers",
]

# replicates drawn and simulated per block; bounds memory of the draw arrays
BLOCK = 4096
MAX_EXCLUDED_FRACTION = 0.01


@dataclass(frozen=True)
class ArmModel:
    """True arm distributions: Bernoulli(mean) or Normal(mean, sd)."""

    kind: str
    means: tuple
    sds: tuple | None = None

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        if not means:
            raise ConfigError("arms: at least one arm is required")
        if self.kind == "bernoulli":
            if any(not 0.0 <= m <= 1.0 for m in means):
                raise ConfigError(f"arms: Bernoulli means must lie in [0,1], got {means}")
            sds = None
        elif self.kind == "gaussian":
            sds = tuple(float(s) for s in (self.sds if self.sds is not None else [1.0] * len(means)))
            if len(sds) != len(means):
                raise ConfigError("arms: Gaussian model needs one sd per arm")
            if any(s < 0 for s in sds):
                raise ConfigError(f"arms: Gaussian sd must be >= 0, got {sds}")
        else:
            raise ConfigError(f"arms: unknown arm family {self.kind!r} (bernoulli or gaussian)")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sds", sds)

    @property
    def K(self) -> int:
        return len(self.means)

    @classmethod
    def parse(cls, text: str) -> "ArmModel":
        """Parse ``bernoulli:0.5,0.5`` or ``gaussian:0,0[/1,1]``."""
        try:
            kind, rest = text.split(":", 1)
            if "/" in rest:
                m, s = rest.split("/", 1)
                return cls(kind.strip().lower(), [float(v) for v in m.split(",")], [float(v) for v in s.split(",")])
            return cls(kind.strip().lower(), [float(v) for v in rest.split(",")])
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"arms: cannot parse {text!r}; expected e.g. bernoulli:0.45,0.5,0.55") from None

    def __str__(self):
        body = ",".join(repr(m) for m in self.means)
        if self.kind == "gaussian":
            body += "/" + ",".join(repr(s) for s in self.sds)
        return f"{self.kind}:{body}"


@dataclass(frozen=True)
class ArmMean:
    """Target: the mean of arm ``a`` (1-based)."""

    a: int

    @property
    def stat_arm(self) -> int:
        return self.a

    def check(self, K: int):
        if not 1 <= self.a <= K:
            raise ConfigError(f"target arm {self.a} outside [1, {K}]")

    def __str__(self):
        return f"arm:{self.a}"


@dataclass(frozen=True)
class DiffMeans:
    """Target: ``mu_a - mu_b``; the statistic is the sample mean of arm ``a``."""

    a: int
    b: int

    @property
    def stat_arm(self) -> int:
        return self.a

    def check(self, K: int):
        for arm in (self.a, self.b):
            if not 1 <= arm <= K:
                raise ConfigError(f"target arm {arm} outside [1, {K}]")
        if self.a == self.b:
            raise ConfigError("difference target needs two distinct arms")

    def __str__(self):
        return f"diff:{self.a},{self.b}"


def parse_target(text: str):
    """Parse ``arm:1`` / ``1`` or ``diff:1,2``."""
    text = text.strip()
    try:
        if text.startswith("diff:"):
            a, b = text[5:].split(",")
            return DiffMeans(int(a), int(b))
        if text.startswith("arm:"):
            text = text[4:]
        return ArmMean(int(text))
    except ValueError:
        raise ConfigError(f"target: cannot parse {text!r}; expected arm:<a> or diff:<a>,<b>") from None


@dataclass(frozen=True)
class NullSpec:
    target: ArmMean | DiffMeans
    theta0: float


def simulation_means(target, theta0: np.ndarray | float, biased_mean: np.ma.MaskedArray) -> np.ndarray:
    """Per-null simulation mean table of shape (G, K).

    Non-target arms use their biased means. For an arm-mean target the target
    arm is simulated at theta0; for a difference ``a - b`` arm ``a`` is
    simulated at ``theta0 + biased mean of b``.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    K = biased_mean.size
    a = target.stat_arm - 1
    mask = np.ma.getmaskarray(biased_mean).copy()
    mask[a] = False
    if mask.any():
        missing = [i + 1 for i in np.flatnonzero(mask)]
        raise ConfigError(f"nuisance vector has no biased mean for arm(s) {missing}")
    base = np.ma.getdata(biased_mean).astype(float).copy()
    table = np.tile(base, (theta0.size, 1))
    if isinstance(target, DiffMeans):
        table[:, a] = theta0 + base[target.b - 1]
    else:
        table[:, a] = theta0
    return table


def _sim_sds(nuis, K: int) -> np.ndarray:
    var = nuis.varhat
    if np.ma.getmaskarray(var).any():
        missing = [i + 1 for i in np.flatnonzero(np.ma.getmaskarray(var))]
        raise ConfigError(f"nuisance vector has no variance for arm(s) {missing}")
    v = np.ma.getdata(var).astype(float)
    if v.size != K:
        raise ConfigError(f"nuisance vector has {v.size} arms, design has {K}")
    return np.sqrt(v)


def replicate_draws(master_seed: int, stream_ids: Sequence[int], T: int, n_slots: int, outcome: str = "normal"):
    """Pre-draw each replicate's randomness from its own stream.

    Stream ``i`` yields, in order, a (T, n_slots) block of design uniforms and
    T outcome variates (standard normal, or uniform for Bernoulli arms).
    """
    n = len(stream_ids)
    U = np.empty((n, T, n_slots))
    W = np.empty((n, T))
    for j, sid in enumerate(stream_ids):
        g = rng_stream(SeedSpec(master_seed, int(sid)))
        U[j] = g.random((T, n_slots))
        W[j] = g.standard_normal(T) if outcome == "normal" else g.random(T)
    return U, W


def _run_one(design: DesignSpec, means, sds, bernoulli: bool, T: int, seed: SeedSpec) -> Trajectory:
    if T > design.T:
        raise ConfigError(f"T={T} exceeds the design horizon {design.T}")
    ints, floats = design.encode()
    U, W = replicate_draws(seed.master_seed, [seed.stream_id], T, design.n_slots,
                           "uniform" if bernoulli else "normal")
    arms = np.zeros(T, np.int64)
    xs = np.zeros(T)
    if T:
        kn.run_trajectory(ints, floats, U[0], W[0], np.asarray(means, float), np.asarray(sds, float),
                          bernoulli, arms, xs, *kn.workspace(design.K))
    return Trajectory(arms, xs, design.K)


def simulate_null_trajectory(design: DesignSpec, null: NullSpec, nuis, T: int, seed: SeedSpec) -> Trajectory:
    """Resimulate one experiment with Gaussian outcomes under ``null``."""
    null.target.check(design.K)
    means = simulation_means(null.target, null.theta0, nuis.biased_mean)[0]
    sds = _sim_sds(nuis, design.K)
    return _run_one(design, means, sds, False, T, seed)


def run_true_experiment(design: DesignSpec, model: ArmModel, T: int, seed: SeedSpec) -> Trajectory:
    """Run ``design`` against the true arm ``model``."""
    if model.K != design.K:
        raise ConfigError(f"arm model has {model.K} arms, design has {design.K}")
    bern = model.kind == "bernoulli"
    sds = np.zeros(model.K) if bern else np.asarray(model.sds)
    return _run_one(design, np.asarray(model.means), sds, bern, T, seed)


@dataclass
class BatchResult:
    """Simulated statistics, shape (G, B); NaN marks an excluded replicate."""

    stats: np.ndarray
    target_pulls: np.ndarray

    @property
    def n_excluded(self) -> np.ndarray:
        return np.isnan(self.stats).sum(axis=-1)


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("OPTIMIST_WORKERS")
        workers = int(env) if env else 1
    return max(1, int(workers))


def _batch_block(args):
    ints, floats, n_slots, master_seed, ids, T, means, sds, target = args
    U, W = replicate_draws(master_seed, ids, T, n_slots, "normal")
    G = means.shape[0]
    stat = np.empty((G, len(ids)))
    npulls = np.empty((G, len(ids)), np.int64)
    kn.run_batch(ints, floats, U, W, means, sds, target, stat, npulls, *kn.workspace(means.shape[1]))
    return stat, npulls


def _simulate_table(design: DesignSpec, means: np.ndarray, sds: np.ndarray, target_arm: int, T: int,
                    B: int, master_seed: int, stream_offset: int = 0, workers: int | None = 1) -> BatchResult:
    if B < 1:
        raise ConfigError(f"B must be >= 1, got {B}")
    if T > design.T:
        raise ConfigError(f"T={T} exceeds the design horizon {design.T}")
    ints, floats = design.encode()
    ids = np.arange(stream_offset, stream_offset + B)
    blocks = [ids[i : i + BLOCK] for i in range(0, B, BLOCK)]
    workers = resolve_workers(workers)
    if workers > 1 and len(blocks) < workers:
        blocks = [b for b in np.array_split(ids, workers) if b.size]
    tasks = [(ints, floats, design.n_slots, master_seed, b, T, means, sds, target_arm - 1) for b in blocks]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_batch_block, tasks))
    else:
        parts = [_batch_block(t) for t in tasks]
    return BatchResult(np.concatenate([p[0] for p in parts], axis=1),
                       np.concatenate([p[1] for p in parts], axis=1))


def batch_simulate(design: DesignSpec, null: NullSpec, nuis, T: int, B: int, seed: SeedSpec | int,
                   workers: int | None = 1, check_exclusions: bool = True) -> np.ndarray:
    """Target-arm sample means of ``B`` resimulated trajectories under ``null``.

    Replicate ``i`` uses stream ``i`` of the master seed, so the output does
    not depend on ``workers`` and growing ``B`` only appends values. Replicates
    where the target arm is never pulled come back as NaN; more than 1% of
    them raises :class:`SimulationError`.
    """
    master = seed.master_seed if isinstance(seed, SeedSpec) else int(seed)
    null.target.check(design.K)
    means = simulation_means(null.target, null.theta0, nuis.biased_mean)
    res = _simulate_table(design, means, _sim_sds(nuis, design.K), null.target.stat_arm, T, B, master,
                          workers=workers)
    stats = res.stats[0]
    if check_exclusions:
        _check_exclusions(int(np.isnan(stats).sum()), B)
    return stats


def _check_exclusions(n_excluded: int, B: int):
    if n_excluded > MAX_EXCLUDED_FRACTION * B:
        raise SimulationError(
            f"{n_excluded} of {B} simulated trajectories never pulled the target arm "
            f"(limit {MAX_EXCLUDED_FRACTION:.0%}); increase T or check the design"
        )
