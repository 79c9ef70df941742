"""Sectioned key-value config files for runs and experiment plans.

Both use the INI dialect of :mod:`configparser` (``;`` and ``#`` comments).
Experiment plans look like::

    [plan]
    name = fig1_desk
    kind = calibration
    seed = 20240601
    replications = 1000
    T = 500
    alpha = 0.05, 0.1, 0.2
    B = 200
    bias = bias1, plugin

    [design]
    name = etc_balanced

    [design.params]
    explore_fraction = 0.2

    [target]
    target = arm:1

    [setup.null]
    arms = gaussian:0,0

    [thresholds]
    type1_se_band = 3

Run configs (for ``optimist test`` / ``optimist ci``) use the sections
``[design]``, ``[design.params]``, ``[target]``, ``[inference]``, ``[grid]``
and ``[run]``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .core import MAX_SEED, ConfigError
from .designs import make_design
from .harness import PLAN_KINDS, ExperimentPlan, GridSpec, Setup
from .inference import BIAS_KINDS
from .simulator import ArmModel, parse_target

__all__ = ["RunConfig", "load_run_config", "load_plan", "parse_plan", "bundled_plans"]

PLAN_SUFFIX = ".plan"


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str  # keep key case (T, B)
    return cp


def _read(text: str, source: str) -> configparser.ConfigParser:
    cp = _parser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cp


def _get(cp, section, key, conv: Callable = str, default: Any = None, required: bool = False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"{section}.{key}: required")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None


def _list(conv: Callable) -> Callable:
    return lambda raw: tuple(conv(v.strip()) for v in raw.split(",") if v.strip())


def _seed(raw) -> int:
    v = int(raw)
    if not 0 <= v <= MAX_SEED:
        raise ValueError(raw)
    return v


def _check_keys(cp, section, allowed):
    if cp.has_section(section):
        extra = set(cp.options(section)) - set(allowed)
        if extra:
            raise ConfigError(f"{section}: unknown key(s) {sorted(extra)}; allowed: {sorted(allowed)}")


def _design_params(cp) -> dict:
    return dict(cp.items("design.params")) if cp.has_section("design.params") else {}


def _grid(cp) -> GridSpec | None:
    if not cp.has_section("grid"):
        return None
    _check_keys(cp, "grid", ("lo", "hi", "count", "values"))
    if not any(cp.has_option("grid", k) for k in ("lo", "hi", "count")):
        return None
    return GridSpec(_get(cp, "grid", "lo", float, 0.0), _get(cp, "grid", "hi", float, 1.0),
                    _get(cp, "grid", "count", int, 100))


# -- experiment plans ---------------------------------------------------------------

_PLAN_KEYS = ("name", "kind", "seed", "replications", "T", "alpha", "B", "bias", "G_list", "B_list", "repeats")


def parse_plan(text: str, source: str = "<plan>") -> ExperimentPlan:
    """Parse and validate a plan file's text."""
    cp = _read(text, source)
    if not cp.has_section("plan"):
        raise ConfigError(f"{source}: missing [plan] section")
    _check_keys(cp, "plan", _PLAN_KEYS)
    _check_keys(cp, "design", ("name",))
    _check_keys(cp, "target", ("target", "theta0", "near_offset"))
    known = {"plan", "design", "design.params", "target", "grid", "thresholds"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith("setup."):
            raise ConfigError(f"{source}: unknown section [{sec}]")
    kind = _get(cp, "plan", "kind", str, required=True)
    if kind not in PLAN_KINDS:
        raise ConfigError(f"plan.kind: unknown kind {kind!r}; choose from {', '.join(PLAN_KINDS)}")
    setups = []
    for sec in cp.sections():
        if sec.startswith("setup."):
            _check_keys(cp, sec, ("arms",))
            setups.append(Setup(sec[6:], _get(cp, sec, "arms", ArmModel.parse, required=True)))
    kw = dict(
        name=_get(cp, "plan", "name", str, required=True),
        kind=kind,
        design=_get(cp, "design", "name", str, required=True),
        design_params=_design_params(cp),
        setups=tuple(setups),
        target=_get(cp, "target", "target", parse_target, parse_target("arm:1")),
        T=_get(cp, "plan", "T", _list(int), required=True),
        alphas=_get(cp, "plan", "alpha", _list(float), (0.1,)),
        B=_get(cp, "plan", "B", int, 200),
        bias_kinds=_get(cp, "plan", "bias", _list(str), ("bias1",)),
        R=_get(cp, "plan", "replications", int, 100),
        seed=_get(cp, "plan", "seed", _seed, 0),
        theta0=_get(cp, "target", "theta0", float, None),
        near_offset=_get(cp, "target", "near_offset", float, 0.02),
        G_list=_get(cp, "plan", "G_list", _list(int), (50, 100)),
        B_list=_get(cp, "plan", "B_list", _list(int), (50, 100)),
        repeats=_get(cp, "plan", "repeats", int, 3),
        thresholds=dict(cp.items("thresholds")) if cp.has_section("thresholds") else {},
    )
    g = _grid(cp)
    if g is not None:
        kw["grid"] = g
    if not kw["alphas"]:
        raise ConfigError("plan.alpha: at least one value required")
    if not kw["bias_kinds"]:
        raise ConfigError("plan.bias: at least one value required")
    return ExperimentPlan(**kw)


def bundled_plans() -> dict[str, Path]:
    """Plan files shipped with the package, by name."""
    root = resources.files("optimist") / "plans"
    return {p.name[: -len(PLAN_SUFFIX)]: Path(str(p)) for p in root.iterdir() if p.name.endswith(PLAN_SUFFIX)}


def load_plan(path_or_name: str | Path) -> ExperimentPlan:
    """Load a plan from a file path or a bundled plan name."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = bundled_plans()
        name = str(path_or_name)
        if name.endswith(PLAN_SUFFIX):
            name = name[: -len(PLAN_SUFFIX)]
        if name not in bundled:
            raise ConfigError(f"plan {path_or_name!r} not found; bundled plans: {', '.join(sorted(bundled))}")
        path = bundled[name]
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read plan {path}: {exc}") from None
    return parse_plan(text, str(path))


# -- run configs ------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything ``optimist test`` / ``ci`` / ``simulate`` needs, validated up front."""

    design: str | None = None
    design_params: dict = field(default_factory=dict)
    K: int | None = None
    target: Any = None
    theta0: float | None = None
    alpha: float = 0.1
    B: int = 200
    bias: str = "bias1"
    grid: GridSpec | None = None
    grid_values: tuple | None = None
    common_random_numbers: bool = True
    seed: int | None = None
    workers: int | None = None
    output: str | None = None
    arms: ArmModel | None = None
    T: int | None = None

    def validate(self, need: tuple[str, ...] = ()) -> "RunConfig":
        """Check field values; ``need`` names fields that must be set."""
        for name in need:
            if getattr(self, name) is None:
                raise ConfigError(f"{name}: required")
        if self.target is None:
            self.target = parse_target("arm:1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha: must be in (0,1), got {self.alpha}")
        if self.B < 1:
            raise ConfigError(f"B: must be >= 1, got {self.B}")
        if self.bias not in BIAS_KINDS:
            raise ConfigError(f"bias: unknown bias kind {self.bias!r}; choose from {', '.join(BIAS_KINDS)}")
        if self.seed is not None and not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed: must be a 64-bit unsigned integer, got {self.seed}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.K is not None and self.K < 1:
            raise ConfigError(f"K: must be >= 1, got {self.K}")
        if self.T is not None and self.T < 0:
            raise ConfigError(f"T: must be >= 0, got {self.T}")
        if self.arms is not None and self.K is not None and self.arms.K != self.K:
            raise ConfigError(f"arms: model has {self.arms.K} arms but K={self.K}")
        if self.grid_values is not None:
            if not self.grid_values:
                raise ConfigError("grid.values: at least one value required")
            if list(self.grid_values) != sorted(self.grid_values):
                raise ConfigError("grid.values: must be sorted ascending")
        if self.design is not None:
            K = self.K or (self.arms.K if self.arms is not None else 1)
            make_design(self.design, K, max(self.T or 1, 1), **self.design_params)
        if self.K is not None:
            self.target.check(self.K)
        return self

    def manifest(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k not in ("grid", "arms", "target")}
        out["target"] = str(self.target) if self.target is not None else None
        out["arms"] = str(self.arms) if self.arms is not None else None
        out["grid"] = [self.grid.lo, self.grid.hi, self.grid.count] if self.grid else None
        out["grid_values"] = list(self.grid_values) if self.grid_values is not None else None
        return out


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    cp = _read(text, source)
    known = {"design", "design.params", "target", "inference", "grid", "run", "arms"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"{source}: unknown section [{sec}]")
    _check_keys(cp, "design", ("name", "K"))
    _check_keys(cp, "target", ("target", "theta0"))
    _check_keys(cp, "inference", ("alpha", "B", "bias", "common_random_numbers"))
    _check_keys(cp, "run", ("seed", "workers", "output", "T"))
    _check_keys(cp, "arms", ("arms",))
    rc = RunConfig(
        design=_get(cp, "design", "name", str),
        design_params=_design_params(cp),
        K=_get(cp, "design", "K", int),
        target=_get(cp, "target", "target", parse_target),
        theta0=_get(cp, "target", "theta0", float),
        alpha=_get(cp, "inference", "alpha", float, 0.1),
        B=_get(cp, "inference", "B", int, 200),
        bias=_get(cp, "inference", "bias", str, "bias1"),
        common_random_numbers=_get(cp, "inference", "common_random_numbers", _bool, True),
        grid=_grid(cp),
        grid_values=_get(cp, "grid", "values", _list(float)),
        seed=_get(cp, "run", "seed", _seed),
        workers=_get(cp, "run", "workers", int),
        output=_get(cp, "run", "output", str),
        arms=_get(cp, "arms", "arms", ArmModel.parse),
        T=_get(cp, "run", "T", int),
    )
    return rc


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_run_config(text, str(path))
