"""Simulation-with-optimism inference: point-null tests, confidence intervals, point estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .core import (
    ConfigError,
    InsufficientDataError,
    SeedSpec,
    SimulationError,
    Trajectory,
    compute_arm_stats,
)
from .designs import DesignSpec
from .simulator import (
    MAX_EXCLUDED_FRACTION,
    ArmMean,
    DiffMeans,
    NullSpec,
    _sim_sds,
    _simulate_table,
    simulation_means,
)

__all__ = [
    "BIAS_KINDS",
    "NuisanceVector",
    "TestOutcome",
    "ConfidenceResult",
    "BiasRateReport",
    "bias_epsilon",
    "estimate_nuisances",
    "validate_bias_rate",
    "test_point_null",
    "confidence_interval",
    "ci_unbounded",
    "known_support",
    "wald_baseline",
    "empirical_estimate",
    "null_cdf_values",
]

BIAS_KINDS = ("bias1", "bias2", "bias3", "plugin")
BIAS_DOC = {
    "bias1": "eps = log(log N)/sqrt(N)  (default)",
    "bias2": "eps = log(N)/sqrt(N)",
    "bias3": "eps = 1",
    "plugin": "eps = 0 (raw sample means; does not control type I error, contrast only)",
}

# log log N is <= 0 or undefined for N <= 3; those arms fall back to eps = 1
FALLBACK_MAX_N = 3


def bias_epsilon(kind, n: int) -> float:
    """Optimistic bias added to an arm mean estimated from ``n`` pulls."""
    if callable(kind):
        eps = float(kind(n))
        if not eps >= 0.0:
            raise ConfigError(f"custom bias returned {eps} for N={n}; must be >= 0")
        return eps
    if kind == "bias3":
        return 1.0
    if kind == "plugin":
        return 0.0
    if kind in ("bias1", "bias2"):
        if n <= FALLBACK_MAX_N:
            return 1.0
        num = math.log(math.log(n)) if kind == "bias1" else math.log(n)
        return num / math.sqrt(n)
    raise ConfigError(f"bias: unknown bias kind {kind!r}; choose from {', '.join(BIAS_KINDS)}")


def _bias_label(kind) -> str:
    return "custom" if callable(kind) else str(kind)


@dataclass(frozen=True)
class NuisanceVector:
    """Simulation inputs estimated from an observed trajectory.

    ``biased_mean`` is masked at the statistic arm, whose mean is set by
    the null instead.
    """

    target: ArmMean | DiffMeans
    biased_mean: np.ma.MaskedArray
    raw_mean: np.ma.MaskedArray
    varhat: np.ma.MaskedArray
    epsilon: np.ma.MaskedArray
    bias_kind: str
    pulls: np.ndarray

    @property
    def excluded_arm(self) -> int:
        return self.target.stat_arm


def estimate_nuisances(h: Trajectory, target, bias_kind="bias1") -> NuisanceVector:
    """Optimistic nuisance estimates: each non-statistic arm's mean plus eps_a."""
    target.check(h.K)
    st = compute_arm_stats(h)
    stat_arm = target.stat_arm - 1
    for a in range(h.K):
        if a != stat_arm and st.pulls[a] == 0:
            raise InsufficientDataError(f"arm {a + 1} was never pulled; cannot estimate its mean")
    eps = np.zeros(h.K)
    for a in range(h.K):
        if a != stat_arm:
            eps[a] = bias_epsilon(bias_kind, int(st.pulls[a]))
    mask = np.zeros(h.K, bool)
    mask[stat_arm] = True
    raw = np.ma.getdata(st.mean)
    return NuisanceVector(
        target=target,
        biased_mean=np.ma.masked_array(raw + eps, mask=mask.copy()),
        raw_mean=st.mean,
        varhat=st.varhat,
        epsilon=np.ma.masked_array(eps, mask=mask.copy()),
        bias_kind=_bias_label(bias_kind),
        pulls=st.pulls,
    )


@dataclass(frozen=True)
class BiasRateReport:
    """How ``sqrt(loglog N / N) / eps(N)`` behaves over a range of N."""

    n: np.ndarray
    ratio: np.ndarray
    positive: bool
    decreasing: bool
    top_ratio: float
    below_half: bool

    @property
    def passed(self) -> bool:
        return self.positive and self.decreasing


def validate_bias_rate(bias_fn, n_range: tuple[float, float] = (1e3, 1e7), points: int = 41) -> BiasRateReport:
    """Numerically check that a bias dominates the iterated-logarithm rate.

    Passes when eps is positive on the range and the ratio is nonincreasing
    in N. ``below_half`` additionally reports whether the ratio at the top of
    the range is under 0.5; for the default bias that needs N above about 5e23.
    """
    n = np.unique(np.round(np.geomspace(n_range[0], n_range[1], points)).astype(np.int64))
    eps = np.array([bias_epsilon(bias_fn, int(k)) for k in n])
    positive = bool(np.all(eps > 0))
    with np.errstate(divide="ignore"):
        ratio = np.sqrt(np.log(np.log(n)) / n) / eps
    decreasing = positive and bool(np.all(np.diff(ratio) <= 1e-15))
    top = float(ratio[-1])
    return BiasRateReport(n=n, ratio=ratio, positive=positive, decreasing=decreasing,
                          top_ratio=top, below_half=bool(top < 0.5))


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False  # not a pytest class

    reject: bool
    cdf_value: float
    observed_stat: float
    theta0: float
    B_effective: int
    alpha: float

    def to_json(self) -> dict:
        return {
            "theta0": self.theta0,
            "cdf_value": self.cdf_value,
            "reject": self.reject,
            "observed_stat": self.observed_stat,
            "B_effective": self.B_effective,
            "alpha": self.alpha,
        }


def _rejects(cdf, alpha):
    cdf = np.asarray(cdf)
    return (cdf < alpha / 2) | (cdf > 1 - alpha / 2)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0,1), got {alpha}")


def _check_inputs(h: Trajectory, design: DesignSpec, target):
    target.check(h.K)
    if design.K != h.K:
        raise ConfigError(f"design has {design.K} arms, trajectory has {h.K}")
    if design.T != h.T:
        raise ConfigError(f"design horizon {design.T} differs from trajectory length {h.T}")
    st = compute_arm_stats(h)
    a = target.stat_arm
    if st.pulls[a - 1] == 0:
        raise InsufficientDataError(f"target arm {a} was never pulled")
    return st


def _cdf_at(stats: np.ndarray, x: float) -> tuple[float, int]:
    ok = stats[~np.isnan(stats)]
    if ok.size == 0:
        return float("nan"), 0
    return float(np.count_nonzero(ok <= x)) / ok.size, int(ok.size)


def _null_cdfs(h, design, target, thetas, B, bias_kind, seed, workers, common_random_numbers=True):
    """Observed statistic and F-hat(observed) under each null in ``thetas``."""
    st = _check_inputs(h, design, target)
    master = seed.master_seed if isinstance(seed, SeedSpec) else int(seed)
    nuis = estimate_nuisances(h, target, bias_kind)
    observed = float(st.mean[target.stat_arm - 1])
    means = simulation_means(target, thetas, nuis.biased_mean)
    sds = _sim_sds(nuis, design.K)
    if common_random_numbers:
        res = _simulate_table(design, means, sds, target.stat_arm, h.T, B, master, workers=workers)
        stats = res.stats
    else:
        stats = np.concatenate([
            _simulate_table(design, means[g : g + 1], sds, target.stat_arm, h.T, B, master,
                            stream_offset=g * B, workers=workers).stats
            for g in range(means.shape[0])
        ])
    cdfs = np.empty(len(thetas))
    beff = np.empty(len(thetas), np.int64)
    for g in range(len(thetas)):
        cdfs[g], beff[g] = _cdf_at(stats[g], observed)
        if beff[g] < (1 - MAX_EXCLUDED_FRACTION) * B:
            raise SimulationError(
                f"null {thetas[g]}: {B - beff[g]} of {B} simulated trajectories never pulled arm "
                f"{target.stat_arm} (limit {MAX_EXCLUDED_FRACTION:.0%})"
            )
    return observed, cdfs, beff, nuis


def test_point_null(h: Trajectory, design: DesignSpec, null: NullSpec, alpha: float = 0.1, B: int = 200,
                    bias_kind="bias1", seed: SeedSpec | int = 0, workers: int | None = 1) -> TestOutcome:
    """Test ``theta = theta0`` by resimulating the experiment ``B`` times.

    Rejects when the empirical CDF of the simulated statistics, evaluated at
    the observed statistic, falls outside ``[alpha/2, 1 - alpha/2]``.
    """
    _check_alpha(alpha)
    observed, cdfs, beff, _ = _null_cdfs(h, design, null.target, np.array([float(null.theta0)]), B,
                                         bias_kind, seed, workers)
    cdf = float(cdfs[0])
    return TestOutcome(reject=bool(_rejects(cdf, alpha)), cdf_value=cdf, observed_stat=observed,
                       theta0=float(null.theta0), B_effective=int(beff[0]), alpha=float(alpha))


def null_cdf_values(h: Trajectory, design: DesignSpec, target, thetas: Sequence[float], B: int = 200,
                    bias_kind="bias1", seed: SeedSpec | int = 0, workers: int | None = 1) -> np.ndarray:
    """F-hat at the observed statistic for several nulls sharing one set of replicates.

    Entry ``g`` equals ``test_point_null(..., NullSpec(target, thetas[g]), ...).cdf_value``
    under the same ``seed`` and ``B``; the replicate draws are generated once.
    """
    thetas = np.asarray(thetas, dtype=float).reshape(-1)
    return _null_cdfs(h, design, target, thetas, B, bias_kind, seed, workers)[1]


def empirical_estimate(h: Trajectory, target) -> float:
    """Sample mean of the target arm, or the difference of sample means."""
    st = compute_arm_stats(h)
    if isinstance(target, DiffMeans):
        return float(st.mean[target.a - 1] - st.mean[target.b - 1])
    return float(st.mean[target.a - 1])


@dataclass
class ConfidenceResult:
    """Test-inversion confidence set over a grid of nulls."""

    accepted: list[float]
    interval: tuple[float, float]
    point_estimate: float
    grid: np.ndarray
    cdf_values: np.ndarray
    reject: np.ndarray
    estimate: float
    estimate_cdf: float
    observed_stat: float
    alpha: float
    B: int
    contiguous: bool
    bias_kind: str
    alpha_split: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.interval[1] - self.interval[0]

    def contains(self, theta: float) -> bool:
        return self.interval[0] <= theta <= self.interval[1]

    def to_json(self) -> dict:
        out = {
            "interval": [self.interval[0], self.interval[1]],
            "accepted": list(self.accepted),
            "point_estimate": self.point_estimate,
            "per_null": [
                {"theta0": float(t), "cdf_value": float(c), "reject": bool(r)}
                for t, c, r in zip(self.grid, self.cdf_values, self.reject)
            ],
            "estimate": self.estimate,
            "estimate_cdf": self.estimate_cdf,
            "observed_stat": self.observed_stat,
            "alpha": self.alpha,
            "B": self.B,
            "bias": self.bias_kind,
            "contiguous": self.contiguous,
        }
        if self.alpha_split is not None:
            out["alpha_split"] = {"alpha1": self.alpha_split[0], "alpha2": self.alpha_split[1]}
        out.update(self.extra)
        return out


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ConfigError("grid: at least one null value is required")
    if not np.all(np.isfinite(grid)):
        raise ConfigError("grid: values must be finite")
    if np.any(np.diff(grid) < 0):
        raise ConfigError("grid: values must be sorted ascending")
    return grid


def _is_contiguous(accepted_mask: np.ndarray) -> bool:
    idx = np.flatnonzero(accepted_mask)
    return idx.size == 0 or bool(idx[-1] - idx[0] + 1 == idx.size)


def _point_estimate(candidates: np.ndarray, cdfs: np.ndarray, estimate: float) -> float:
    # argmin |F - 1/2|; ties -> nearest the empirical estimate, then lowest value
    keys = sorted(zip(np.abs(cdfs - 0.5), np.abs(candidates - estimate), candidates))
    return float(keys[0][2])


def confidence_interval(h: Trajectory, design: DesignSpec, target, alpha: float = 0.1,
                        grid: Sequence[float] | None = None, B: int = 200, bias_kind="bias1",
                        seed: SeedSpec | int = 0, workers: int | None = 1,
                        common_random_numbers: bool = True) -> ConfidenceResult:
    """Invert the point-null test over ``grid``.

    The empirical estimate is always in the accepted set and is also tested
    as a null so its CDF value can compete for the point estimate. With
    ``common_random_numbers`` every null reuses replicate streams ``0..B-1``;
    otherwise null ``g`` owns streams ``g*B .. g*B+B-1``.
    """
    _check_alpha(alpha)
    if grid is None:
        grid = np.linspace(-1.0, 1.0, 201) if isinstance(target, DiffMeans) else np.linspace(0.0, 1.0, 100)
    grid = _check_grid(grid)
    _check_inputs(h, design, target)
    est = empirical_estimate(h, target)
    thetas = np.append(grid, est)
    observed, cdfs, _, nuis = _null_cdfs(h, design, target, thetas, B, bias_kind, seed, workers,
                                         common_random_numbers)
    grid_cdf, est_cdf = cdfs[:-1], float(cdfs[-1])
    reject = _rejects(grid_cdf, alpha)
    keep = ~reject
    accepted = sorted(set(grid[keep].tolist()) | {est})
    cand = np.append(grid[keep], est)
    cand_cdf = np.append(grid_cdf[keep], est_cdf)
    return ConfidenceResult(
        accepted=accepted,
        interval=(accepted[0], accepted[-1]),
        point_estimate=_point_estimate(cand, cand_cdf, est),
        grid=grid,
        cdf_values=grid_cdf,
        reject=reject,
        estimate=est,
        estimate_cdf=est_cdf,
        observed_stat=observed,
        alpha=float(alpha),
        B=int(B),
        contiguous=_is_contiguous(keep),
        bias_kind=nuis.bias_kind,
    )


def known_support(lo: float, hi: float) -> Callable:
    """Bound provider for a parameter known to lie in ``[lo, hi]``."""

    def provider(h, target, alpha1):
        return lo, hi

    return provider


def ci_unbounded(h: Trajectory, design: DesignSpec, target, alpha1: float, alpha2: float,
                 bound_provider: Callable, grid_size: int = 100, B: int = 200, bias_kind="bias1",
                 seed: SeedSpec | int = 0, workers: int | None = 1) -> ConfidenceResult:
    """Confidence set when the parameter range is not known in advance.

    ``bound_provider(h, target, alpha1)`` returns an interval claimed to cover
    the truth with probability ``1 - alpha1``; the simulation test then runs at
    level ``alpha2`` on a grid over that interval. Overall level is
    ``alpha1 + alpha2`` by a union bound.
    """
    if alpha1 < 0 or not 0 < alpha2 < 1 or alpha1 + alpha2 >= 1:
        raise ConfigError(f"alpha split must satisfy alpha1 >= 0, 0 < alpha2, alpha1 + alpha2 < 1; "
                          f"got {alpha1}, {alpha2}")
    if grid_size < 1:
        raise ConfigError(f"grid_size must be >= 1, got {grid_size}")
    bounds = bound_provider(h, target, alpha1)
    try:
        lo, hi = (float(v) for v in bounds)
    except (TypeError, ValueError):
        raise ConfigError(f"bound provider returned {bounds!r}, expected (lo, hi)") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"bound provider returned an empty or unbounded interval [{lo}, {hi}]")
    res = confidence_interval(h, design, target, alpha2, np.linspace(lo, hi, grid_size), B, bias_kind,
                              seed, workers)
    res.alpha_split = (float(alpha1), float(alpha2))
    res.extra["bounds"] = [lo, hi]
    return res


def wald_baseline(h: Trajectory, target, alpha: float = 0.1) -> tuple[float, float]:
    """Naive Wald interval ignoring the adaptive design.

    The normal quantile comes from ``statistics.NormalDist.inv_cdf``
    (Wichura's AS241 rational approximation).
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must be in (0,1], got {alpha}")
    target.check(h.K)
    st = compute_arm_stats(h)
    arms = (target.a, target.b) if isinstance(target, DiffMeans) else (target.a,)
    for a in arms:
        if st.pulls[a - 1] < 2:
            raise InsufficientDataError(f"arm {a} has {int(st.pulls[a - 1])} pulls; the Wald interval needs >= 2")
    z = NormalDist().inv_cdf(1 - alpha / 2)
    m = lambda a: float(st.mean[a - 1])
    v = lambda a: float(st.varhat[a - 1]) / int(st.pulls[a - 1])
    if isinstance(target, DiffMeans):
        center, se = m(target.a) - m(target.b), math.sqrt(v(target.a) + v(target.b))
    else:
        center, se = m(target.a), math.sqrt(v(target.a))
    return center - z * se, center + z * se

test_point_null.__test__ = False
