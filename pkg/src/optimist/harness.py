"""Desk-scale reproduction experiments and their tidy CSV outputs.

Four plan kinds are supported:

``calibration``
    Realized type I error of the point-null test at the true value, per
    nominal alpha and bias kind.
``sweep``
    Coverage, width and MSE of simulation confidence intervals and the Wald
    baseline across horizons and arm-mean setups.
``ablation``
    Type I error at the truth and power at a nearby null, per bias kind.
``power``
    Rejection frequency of a fixed false null as the horizon grows.
``runtime``
    Wall-clock per confidence interval over a grid of (G, B).

Every replication derives its seeds from ``(plan seed, setup, T, rep)``, so
results do not depend on scheduling or the worker count.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .core import ConfigError, OptimistError, SeedSpec, child_seed
from .designs import DesignSpec, make_design
from .inference import (
    BIAS_KINDS,
    confidence_interval,
    empirical_estimate,
    null_cdf_values,
    wald_baseline,
)
from .simulator import ArmMean, ArmModel, DiffMeans, resolve_workers, run_true_experiment

__all__ = [
    "PLAN_KINDS",
    "GridSpec",
    "Setup",
    "ExperimentPlan",
    "MetricRow",
    "ThresholdCheck",
    "ExperimentResult",
    "run_calibration",
    "run_sweep",
    "run_bias_ablation",
    "run_power",
    "run_runtime_scaling",
    "run_experiment",
    "check_thresholds",
    "write_results",
]

PLAN_KINDS = ("calibration", "sweep", "ablation", "power", "runtime")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
# two-sided 90% normal band, used for the error-rate bands of the calibration plot
Z90 = 1.6448536269514722


@dataclass(frozen=True)
class GridSpec:
    """``count`` evenly spaced nulls on ``[lo, hi]``."""

    lo: float = 0.0
    hi: float = 1.0
    count: int = 100

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"grid.count must be >= 1, got {self.count}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise ConfigError(f"grid: need finite lo <= hi, got [{self.lo}, {self.hi}]")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class Setup:
    label: str
    model: ArmModel


@dataclass(frozen=True)
class ExperimentPlan:
    """A reproducible experiment: sweep axes, replication count and master seed."""

    name: str
    kind: str
    design: str
    setups: tuple[Setup, ...]
    target: ArmMean | DiffMeans = ArmMean(1)
    T: tuple[int, ...] = (500,)
    alphas: tuple[float, ...] = (0.1,)
    B: int = 200
    grid: GridSpec = GridSpec()
    bias_kinds: tuple[str, ...] = ("bias1",)
    R: int = 100
    seed: int = 0
    design_params: Mapping[str, Any] = field(default_factory=dict)
    theta0: float | None = None
    near_offset: float = 0.02
    G_list: tuple[int, ...] = (50, 100)
    B_list: tuple[int, ...] = (50, 100)
    repeats: int = 3
    thresholds: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PLAN_KINDS:
            raise ConfigError(f"plan.kind: unknown kind {self.kind!r}; choose from {', '.join(PLAN_KINDS)}")
        if not self.name or any(c in self.name for c in "/\\"):
            raise ConfigError(f"plan.name must be a plain non-empty name, got {self.name!r}")
        if int(self.R) < 1:
            raise ConfigError(f"plan.replications must be >= 1, got {self.R}")
        if int(self.B) < 1:
            raise ConfigError(f"plan.B must be >= 1, got {self.B}")
        if not self.setups:
            raise ConfigError("plan: at least one [setup.*] section is required")
        if not self.T or any(int(t) < 1 for t in self.T):
            raise ConfigError(f"plan.T must list positive horizons, got {self.T}")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ConfigError(f"plan.alpha values must be in (0,1), got {a}")
        for b in self.bias_kinds:
            if b not in BIAS_KINDS:
                raise ConfigError(f"plan.bias: unknown bias kind {b!r}; choose from {', '.join(BIAS_KINDS)}")
        if self.kind == "power" and self.theta0 is None:
            raise ConfigError("target.theta0 is required for a power plan")
        if self.kind == "runtime" and (not self.G_list or not self.B_list):
            raise ConfigError("plan.G and plan.B lists are required for a runtime plan")
        labels = [s.label for s in self.setups]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"plan: duplicate setup labels {labels}")
        K = self.setups[0].model.K
        for s in self.setups:
            if s.model.K != K:
                raise ConfigError(f"setup.{s.label}: {s.model.K} arms, other setups have {K}")
        self.target.check(K)
        # fail fast on bad design parameters
        self.design_for(self.T[0])

    @property
    def K(self) -> int:
        return self.setups[0].model.K

    def design_for(self, T: int) -> DesignSpec:
        return make_design(self.design, self.K, int(T), **dict(self.design_params))

    def theta_star(self, setup: Setup) -> float:
        m = setup.model.means
        if isinstance(self.target, DiffMeans):
            return m[self.target.a - 1] - m[self.target.b - 1]
        return m[self.target.a - 1]

    def canonical(self) -> dict:
        """JSON-ready description; the plan hash is taken over this."""
        d = {
            "name": self.name,
            "kind": self.kind,
            "design": self.design,
            "design_params": {k: str(v) for k, v in sorted(self.design_params.items())},
            "setups": [[s.label, str(s.model)] for s in self.setups],
            "target": str(self.target),
            "T": [int(t) for t in self.T],
            "alphas": [float(a) for a in self.alphas],
            "B": int(self.B),
            "grid": [self.grid.lo, self.grid.hi, self.grid.count],
            "bias_kinds": list(self.bias_kinds),
            "R": int(self.R),
            "seed": int(self.seed),
            "theta0": self.theta0,
            "near_offset": self.near_offset,
            "G_list": list(self.G_list),
            "B_list": list(self.B_list),
            "repeats": int(self.repeats),
            "thresholds": dict(sorted(self.thresholds.items())),
        }
        return d

    def plan_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _nan() -> float:
    return float("nan")


@dataclass
class MetricRow:
    """Summary of one (setup, T, method, alpha, null) cell over the replications.

    Metrics that do not apply to the plan kind are NaN. ``extra`` carries
    additional named metrics (for instance plot bands or runtime ratios).
    """

    plan: str
    setup: str
    T: int
    method: str
    alpha: float
    theta0: float
    n_reps: int
    coverage: float = field(default_factory=_nan)
    coverage_se: float = field(default_factory=_nan)
    mean_width: float = field(default_factory=_nan)
    mean_width_se: float = field(default_factory=_nan)
    median_width: float = field(default_factory=_nan)
    mse: float = field(default_factory=_nan)
    mse_se: float = field(default_factory=_nan)
    rejection: float = field(default_factory=_nan)
    rejection_se: float = field(default_factory=_nan)
    excess: float = field(default_factory=_nan)
    runtime: float = field(default_factory=_nan)
    runtime_se: float = field(default_factory=_nan)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isnan(self.coverage) and not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage {self.coverage} outside [0,1]")
        for name in ("mean_width", "median_width", "mse"):
            v = getattr(self, name)
            if not math.isnan(v) and v < 0:
                raise ValueError(f"{name} {v} is negative")

    METRICS = ("coverage", "mean_width", "median_width", "mse", "rejection", "excess", "runtime")

    def long_rows(self) -> list[dict]:
        """One record per defined metric (plot-ready long format)."""
        key = {"plan": self.plan, "setup": self.setup, "T": self.T, "method": self.method,
               "alpha": self.alpha, "theta0": self.theta0, "n_reps": self.n_reps}
        out = []
        for m in self.METRICS:
            v = getattr(self, m)
            if math.isnan(v):
                continue
            se = getattr(self, f"{m}_se", _nan())
            if m == "excess":
                se = self.rejection_se
            out.append({**key, "metric": m, "value": v, "se": se})
        for m, v in self.extra.items():
            out.append({**key, "metric": m, "value": float(v), "se": _nan()})
        return out


@dataclass(frozen=True)
class ThresholdCheck:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    rows: list[MetricRow]
    quantiles: list[dict]
    checks: list[ThresholdCheck] = field(default_factory=list)
    out_dir: Path | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def row(self, **match) -> MetricRow:
        """The unique row whose fields equal ``match``."""
        return plan_row(self.rows, **match)


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=0, abs_tol=1e-12) or (math.isnan(a) and math.isnan(b))
    return a == b


# -- replication plumbing -----------------------------------------------------


def _map(fn: Callable, tasks: list, workers: int) -> list:
    if workers > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (8 * workers))
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks, chunksize=chunk))
    return [fn(t) for t in tasks]


def _seeds(plan: ExperimentPlan, s: int, T: int, r: int) -> tuple[SeedSpec, int]:
    data = SeedSpec(child_seed(plan.seed, s, T, r, 0))
    return data, child_seed(plan.seed, s, T, r, 1)


def _binom(hits: np.ndarray) -> tuple[float, float]:
    n = hits.size
    p = float(hits.mean()) if n else _nan()
    return p, math.sqrt(p * (1 - p) / n) if n else _nan()


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, float)
    if x.size == 0:
        return _nan(), _nan()
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else _nan()
    return float(x.mean()), se


def _quantile_rows(plan, setup, T, method, alpha, quantity, values) -> list[dict]:
    values = np.asarray(values, float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return []
    qs = np.quantile(values, QUANTILES)
    return [{"plan": plan.name, "setup": setup, "T": T, "method": method, "alpha": alpha,
             "quantity": quantity, "q": q, "value": float(v)} for q, v in zip(QUANTILES, qs)]


# -- calibration / ablation / power --------------------------------------------


def _rep_cdfs(task) -> dict:
    """CDF values per bias kind at each null, for one replication."""
    plan, s, T, r, thetas = task
    setup = plan.setups[s]
    design = plan.design_for(T)
    data_seed, sim_seed = _seeds(plan, s, T, r)
    h = run_true_experiment(design, setup.model, T, data_seed)
    out = {}
    try:
        for b in plan.bias_kinds:
            out[b] = null_cdf_values(h, design, plan.target, thetas, plan.B, b, sim_seed).tolist()
    except OptimistError as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}
    return out


def _reject(cdf: np.ndarray, alpha: float) -> np.ndarray:
    return (cdf < alpha / 2) | (cdf > 1 - alpha / 2)


def _collect(plan, workers, thetas_for) -> dict:
    """Run ``_rep_cdfs`` over every (setup, T, rep); returns cdf arrays keyed (s, T, bias)."""
    tasks = [(plan, s, T, r, thetas_for(plan.setups[s]))
             for s in range(len(plan.setups)) for T in plan.T for r in range(plan.R)]
    results = _map(_rep_cdfs, tasks, resolve_workers(workers))
    out: dict = {}
    for (_, s, T, _, _), res in zip(tasks, results):
        if "error" in res:
            out.setdefault((s, T, "__failed__"), []).append(res["error"])
            continue
        for b, cdfs in res.items():
            out.setdefault((s, T, b), []).append(cdfs)
    return out


def _n_failed(data, s, T) -> int:
    return len(data.get((s, T, "__failed__"), []))


def run_calibration(plan: ExperimentPlan, workers: int | None = 1) -> ExperimentResult:
    """Realized minus nominal type I error at ``theta0 = theta*``."""
    data = _collect(plan, workers, lambda setup: [plan.theta_star(setup)])
    rows, quants = [], []
    for s, setup in enumerate(plan.setups):
        th = plan.theta_star(setup)
        for T in plan.T:
            for b in plan.bias_kinds:
                cdf = np.array(data.get((s, T, b), []), float).reshape(-1)
                quants += _quantile_rows(plan, setup.label, T, b, _nan(), "cdf_value", cdf)
                for a in plan.alphas:
                    p, se = _binom(_reject(cdf, a))
                    rows.append(MetricRow(
                        plan.name, setup.label, T, b, a, th, int(cdf.size), rejection=p, rejection_se=se,
                        excess=p - a,
                        extra={"band90_lo": p - a - Z90 * se, "band90_hi": p - a + Z90 * se,
                               "n_failed": _n_failed(data, s, T)},
                    ))
    return _finish(plan, rows, quants)


def run_bias_ablation(plan: ExperimentPlan, workers: int | None = 1) -> ExperimentResult:
    """Type I error at ``theta*`` and power at ``theta* + near_offset`` per bias kind."""
    data = _collect(plan, workers, lambda setup: [plan.theta_star(setup), plan.theta_star(setup) + plan.near_offset])
    rows, quants = [], []
    for s, setup in enumerate(plan.setups):
        th = plan.theta_star(setup)
        for T in plan.T:
            for b in plan.bias_kinds:
                cdf = np.array(data.get((s, T, b), []), float).reshape(-1, 2)
                for j, theta0 in enumerate((th, th + plan.near_offset)):
                    quants += _quantile_rows(plan, setup.label, T, b, _nan(), f"cdf_value@{theta0!r}", cdf[:, j])
                    for a in plan.alphas:
                        p, se = _binom(_reject(cdf[:, j], a))
                        row = MetricRow(plan.name, setup.label, T, b, a, theta0, int(cdf.shape[0]),
                                        rejection=p, rejection_se=se,
                                        extra={"n_failed": _n_failed(data, s, T)})
                        if j == 0:
                            row.excess = p - a
                        rows.append(row)
    return _finish(plan, rows, quants)


def run_power(plan: ExperimentPlan, workers: int | None = 1) -> ExperimentResult:
    """Rejection frequency of the fixed null ``plan.theta0`` at each horizon."""
    data = _collect(plan, workers, lambda setup: [plan.theta0])
    rows, quants = [], []
    for s, setup in enumerate(plan.setups):
        for T in plan.T:
            for b in plan.bias_kinds:
                cdf = np.array(data.get((s, T, b), []), float).reshape(-1)
                quants += _quantile_rows(plan, setup.label, T, b, _nan(), "cdf_value", cdf)
                for a in plan.alphas:
                    p, se = _binom(_reject(cdf, a))
                    rows.append(MetricRow(plan.name, setup.label, T, b, a, float(plan.theta0), int(cdf.size),
                                          rejection=p, rejection_se=se,
                                          extra={"n_failed": _n_failed(data, s, T)}))
    return _finish(plan, rows, quants)


# -- coverage sweep -----------------------------------------------------------


def _rep_ci(task) -> dict:
    plan, s, T, r = task
    setup = plan.setups[s]
    design = plan.design_for(T)
    data_seed, sim_seed = _seeds(plan, s, T, r)
    h = run_true_experiment(design, setup.model, T, data_seed)
    alpha = plan.alphas[0]
    out = {}
    try:
        t0 = time.perf_counter()
        ci = confidence_interval(h, design, plan.target, alpha, plan.grid.values(), plan.B,
                                 plan.bias_kinds[0], sim_seed)
        out["sim"] = (ci.interval[0], ci.interval[1], ci.point_estimate, time.perf_counter() - t0)
    except OptimistError as exc:
        out["sim_error"] = str(exc)
    try:
        t0 = time.perf_counter()
        lo, hi = wald_baseline(h, plan.target, alpha)
        out["wald"] = (lo, hi, empirical_estimate(h, plan.target), time.perf_counter() - t0)
    except OptimistError as exc:
        out["wald_error"] = str(exc)
    return out


SWEEP_METHODS = {"sim": "simulation_optimism", "wald": "wald_baseline"}


def run_sweep(plan: ExperimentPlan, workers: int | None = 1) -> ExperimentResult:
    """Coverage, width and MSE of both interval methods for each setup and horizon."""
    tasks = [(plan, s, T, r) for s in range(len(plan.setups)) for T in plan.T for r in range(plan.R)]
    results = _map(_rep_ci, tasks, resolve_workers(workers))
    grouped: dict = {}
    for (_, s, T, _), res in zip(tasks, results):
        grouped.setdefault((s, T), []).append(res)
    rows, quants = [], []
    alpha = plan.alphas[0]
    for s, setup in enumerate(plan.setups):
        th = plan.theta_star(setup)
        for T in plan.T:
            reps = grouped[(s, T)]
            for key, label in SWEEP_METHODS.items():
                vals = np.array([r[key] for r in reps if key in r], float).reshape(-1, 4)
                lo, hi, est, secs = vals.T
                width = hi - lo
                cover = (lo <= th) & (th <= hi)
                sq = (est - th) ** 2
                cov, cov_se = _binom(cover)
                mw, mw_se = _mean_se(width)
                mse, mse_se = _mean_se(sq)
                rt, rt_se = _mean_se(secs)
                rows.append(MetricRow(
                    plan.name, setup.label, T, label, alpha, th, int(vals.shape[0]),
                    coverage=cov, coverage_se=cov_se, mean_width=mw, mean_width_se=mw_se,
                    median_width=float(np.median(width)) if width.size else _nan(),
                    mse=mse, mse_se=mse_se, runtime=rt, runtime_se=rt_se,
                    extra={"n_failed": len(reps) - int(vals.shape[0])},
                ))
                quants += _quantile_rows(plan, setup.label, T, label, alpha, "width", width)
                quants += _quantile_rows(plan, setup.label, T, label, alpha, "estimate_error", est - th)
    return _finish(plan, rows, quants)


# -- runtime scaling ------------------------------------------------------------


def run_runtime_scaling(plan: ExperimentPlan, G_list: Sequence[int] | None = None,
                        B_list: Sequence[int] | None = None, workers: int | None = 1) -> ExperimentResult:
    """Best-of-``repeats`` wall-clock per confidence interval over the G x B grid.

    One observed trajectory (first setup, first horizon) is reused for every
    cell; ratios compare each cell with the cell at half the G (or B).
    """
    G_list = sorted(G_list or plan.G_list)
    B_list = sorted(B_list or plan.B_list)
    setup = plan.setups[0]
    T = plan.T[0]
    design = plan.design_for(T)
    data_seed, sim_seed = _seeds(plan, 0, T, 0)
    h = run_true_experiment(design, setup.model, T, data_seed)
    th = plan.theta_star(setup)
    lo, hi = plan.grid.lo, plan.grid.hi
    # warm-up so compilation or cache loading is not timed
    confidence_interval(h, design, plan.target, plan.alphas[0], np.linspace(lo, hi, 2), 2,
                        plan.bias_kinds[0], sim_seed, workers)
    secs = {}
    for G in G_list:
        for B in B_list:
            best = math.inf
            for _ in range(max(1, plan.repeats)):
                t0 = time.perf_counter()
                confidence_interval(h, design, plan.target, plan.alphas[0], np.linspace(lo, hi, G), B,
                                    plan.bias_kinds[0], sim_seed, workers)
                best = min(best, time.perf_counter() - t0)
            secs[(G, B)] = best
    rows = []
    for (G, B), sec in secs.items():
        extra = {"G": G, "B": B}
        if G % 2 == 0 and (G // 2, B) in secs:
            extra["ratio_G"] = sec / secs[(G // 2, B)]
        if B % 2 == 0 and (G, B // 2) in secs:
            extra["ratio_B"] = sec / secs[(G, B // 2)]
        rows.append(MetricRow(plan.name, setup.label, T, f"G={G},B={B}", plan.alphas[0], th, plan.repeats,
                              runtime=sec, extra=extra))
    return _finish(plan, rows, [])


# -- thresholds -------------------------------------------------------------------


def _flag(v: str) -> bool:
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _optimistic(rows):
    return [r for r in rows if r.method != "plugin"]


def check_thresholds(plan: ExperimentPlan, rows: list[MetricRow]) -> list[ThresholdCheck]:
    """Evaluate the plan's ``[thresholds]`` against its rows.

    Recognized keys (all optional):

    - ``type1_se_band`` (k): optimistic bias rows have ``|rejection - alpha| <= k*SE``.
    - ``type1_se_upper`` (k): optimistic rows at the truth have ``rejection <= alpha + k*SE``.
    - ``contrast_alpha`` (a): at alpha ``a`` plug-in rejection exceeds every optimistic kind's.
    - ``power_order`` (``x>=y``): power at the near null of bias ``x`` is at least that of ``y``.
    - ``min_coverage`` (c): simulation-interval coverage is at least ``c`` everywhere.
    - ``monotone_width`` / ``monotone_mse`` (bool): strictly decreasing in T per setup.
    - ``width_ratio_max`` (x) with ``width_setup``: at the largest T, mean simulation
      width is at most ``x`` times the Wald width.
    - ``power_nondecreasing`` (bool) and ``min_power`` (p, at the largest T).
    - ``ratio_min`` / ``ratio_max``: runtime doubling ratios lie in the band.
    - ``max_seconds`` (s): the smallest runtime cell is under ``s`` seconds.
    """
    th = dict(plan.thresholds)
    checks: list[ThresholdCheck] = []
    add = lambda name, ok, detail: checks.append(ThresholdCheck(name, bool(ok), detail))
    sim = SWEEP_METHODS["sim"]

    if "type1_se_band" in th:
        k = float(th["type1_se_band"])
        for r in _optimistic(rows):
            if not math.isclose(r.theta0, _theta_star_of(plan, r.setup)):
                continue
            dev = r.rejection - r.alpha
            add(f"type1[{r.setup},T={r.T},{r.method},alpha={r.alpha}]", abs(dev) <= k * r.rejection_se,
                f"realized {r.rejection:.4f} vs nominal {r.alpha} (|diff| {abs(dev):.4f} <= {k}*SE {k * r.rejection_se:.4f})")
    if "type1_se_upper" in th:
        k = float(th["type1_se_upper"])
        for r in _optimistic(rows):
            if not math.isclose(r.theta0, _theta_star_of(plan, r.setup)):
                continue
            add(f"type1_upper[{r.setup},T={r.T},{r.method},alpha={r.alpha}]",
                r.rejection <= r.alpha + k * r.rejection_se,
                f"realized {r.rejection:.4f} <= {r.alpha} + {k}*SE {k * r.rejection_se:.4f}")
    if "contrast_alpha" in th:
        a = float(th["contrast_alpha"])
        for setup in plan.setups:
            for T in plan.T:
                sel = [r for r in rows if r.setup == setup.label and r.T == T and math.isclose(r.alpha, a)]
                plug = [r for r in sel if r.method == "plugin"]
                others = _optimistic(sel)
                if not plug or not others:
                    add(f"contrast[{setup.label},T={T}]", False, "needs plugin and an optimistic bias kind")
                    continue
                worst = max(o.rejection for o in others)
                add(f"contrast[{setup.label},T={T},alpha={a}]", plug[0].rejection > worst,
                    f"plug-in {plug[0].rejection:.4f} > optimistic {worst:.4f}")
    if "power_order" in th:
        hi, lo = (s.strip() for s in str(th["power_order"]).split(">="))
        for setup in plan.setups:
            near = _theta_star_of(plan, setup.label) + plan.near_offset
            for T in plan.T:
                for a in plan.alphas:
                    pick = lambda b: plan_row(rows, setup=setup.label, T=T, method=b, alpha=a, theta0=near)
                    ph, pl = pick(hi).rejection, pick(lo).rejection
                    add(f"power[{setup.label},T={T},alpha={a}] {hi}>={lo}", ph >= pl,
                        f"{hi} {ph:.4f} vs {lo} {pl:.4f} at theta0={near:g}")
    if "min_coverage" in th:
        c = float(th["min_coverage"])
        for r in rows:
            if r.method == sim:
                add(f"coverage[{r.setup},T={r.T}]", r.coverage >= c, f"{r.coverage:.3f} >= {c}")
    for key, attr in (("monotone_width", "median_width"), ("monotone_mse", "mse")):
        if _flag(th.get(key, "false")):
            for setup in plan.setups:
                vals = [plan_row(rows, setup=setup.label, T=T, method=sim).__getattribute__(attr)
                        for T in sorted(plan.T)]
                ok = all(b < a for a, b in zip(vals, vals[1:]))
                add(f"{key}[{setup.label}]", ok, f"{attr} over T={sorted(plan.T)}: " + ", ".join(f"{v:.5f}" for v in vals))
    if "width_ratio_max" in th:
        x = float(th["width_ratio_max"])
        label = th.get("width_setup", plan.setups[0].label)
        Tm = max(plan.T)
        ws = plan_row(rows, setup=label, T=Tm, method=sim).mean_width
        ww = plan_row(rows, setup=label, T=Tm, method=SWEEP_METHODS["wald"]).mean_width
        add(f"width_ratio[{label},T={Tm}]", ws <= x * ww, f"simulation {ws:.4f} <= {x} x Wald {ww:.4f} (ratio {ws / ww:.3f})")
    if _flag(th.get("power_nondecreasing", "false")) or "min_power" in th:
        for setup in plan.setups:
            for b in plan.bias_kinds:
                for a in plan.alphas:
                    p = [plan_row(rows, setup=setup.label, T=T, method=b, alpha=a).rejection for T in sorted(plan.T)]
                    if _flag(th.get("power_nondecreasing", "false")):
                        add(f"power_nondecreasing[{setup.label},{b},alpha={a}]",
                            all(y >= x for x, y in zip(p, p[1:])), ", ".join(f"{v:.3f}" for v in p))
                    if "min_power" in th:
                        m = float(th["min_power"])
                        add(f"min_power[{setup.label},{b},alpha={a},T={max(plan.T)}]", p[-1] >= m, f"{p[-1]:.3f} >= {m}")
    if "ratio_min" in th or "ratio_max" in th:
        lo_r = float(th.get("ratio_min", 0.0))
        hi_r = float(th.get("ratio_max", math.inf))
        for r in rows:
            for key in ("ratio_G", "ratio_B"):
                if key in r.extra:
                    v = r.extra[key]
                    add(f"{key}[{r.method}]", lo_r <= v <= hi_r, f"{v:.3f} in [{lo_r}, {hi_r}]")
    if "max_seconds" in th:
        s = float(th["max_seconds"])
        r0 = min((r for r in rows if "G" in r.extra), key=lambda r: (r.extra["G"], r.extra["B"]))
        add(f"max_seconds[{r0.method}]", r0.runtime <= s, f"{r0.runtime:.2f}s <= {s}s")
    return checks


def _theta_star_of(plan: ExperimentPlan, label: str) -> float:
    return plan.theta_star(next(s for s in plan.setups if s.label == label))


def plan_row(rows: Iterable[MetricRow], **match) -> MetricRow:
    hits = [r for r in rows if all(_same(getattr(r, k), v) for k, v in match.items())]
    if len(hits) != 1:
        raise KeyError(f"{len(hits)} rows match {match}")
    return hits[0]


def _finish(plan: ExperimentPlan, rows, quants) -> ExperimentResult:
    return ExperimentResult(plan, rows, quants, check_thresholds(plan, rows))


_RUNNERS = {
    "calibration": run_calibration,
    "sweep": run_sweep,
    "ablation": run_bias_ablation,
    "power": run_power,
}


def run_experiment(plan: ExperimentPlan, workers: int | None = None, out_root: str | Path | None = None) -> ExperimentResult:
    """Run ``plan``; when ``out_root`` is given, write its CSVs under it."""
    if plan.kind == "runtime":
        res = run_runtime_scaling(plan, workers=workers)
    else:
        res = _RUNNERS[plan.kind](plan, workers=workers)
    if out_root is not None:
        res.out_dir = write_results(res, out_root)
    return res


# -- output -------------------------------------------------------------------------

METRIC_FIELDS = ("plan", "setup", "T", "method", "alpha", "theta0", "n_reps", "metric", "value", "se")
QUANTILE_FIELDS = ("plan", "setup", "T", "method", "alpha", "quantity", "q", "value")


def manifest_line(plan: ExperimentPlan) -> str:
    return (f"# optimist {__version__} plan={plan.name} kind={plan.kind} plan_hash={plan.plan_hash()} "
            f"seed={plan.seed}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _csv_text(plan, fields, records) -> str:
    buf = io.StringIO(newline="")
    buf.write(manifest_line(plan) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for rec in records:
        w.writerow([_fmt(rec[f]) for f in fields])
    return buf.getvalue()


def metrics_csv(res: ExperimentResult) -> str:
    return _csv_text(res.plan, METRIC_FIELDS, [lr for r in res.rows for lr in r.long_rows()])


def quantiles_csv(res: ExperimentResult) -> str:
    return _csv_text(res.plan, QUANTILE_FIELDS, res.quantiles)


def write_results(res: ExperimentResult, out_root: str | Path) -> Path:
    """Write ``<out_root>/<plan>/<timestamp>/{metrics,quantiles}.csv`` plus ``plan.json``.

    Each run gets a fresh directory; existing runs are never overwritten.
    """
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(out_root) / res.plan.name
    out = base / stamp
    n = 1
    while out.exists():
        out = base / f"{stamp}-{n}"
        n += 1
    try:
        out.mkdir(parents=True)
        (out / "metrics.csv").write_text(metrics_csv(res), encoding="utf-8")
        (out / "quantiles.csv").write_text(quantiles_csv(res), encoding="utf-8")
        manifest = {"version": __version__, "plan_hash": res.plan.plan_hash(), "plan": res.plan.canonical(),
                    "checks": [asdict(c) for c in res.checks]}
        (out / "plan.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write results under {out}: {exc}") from exc
    return out
