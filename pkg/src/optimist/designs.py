"""Bandit sampling designs.

A :class:`DesignSpec` names a design and its parameters for a fixed arm
count ``K`` and horizon ``T``. Designs run through compiled step functions
in :mod:`optimist._kernels`; :class:`DesignState` exposes them one step at a
time. Arms are 1-based at this interface.

Wrappers (``clipped_decay``, ``gamma_mixture``) take a non-wrapper base
design given by ``params["base"]`` (a kind name) and ``params["base_params"]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import _kernels as kn
from .core import ConfigError, DataError, HorizonExceededError

__all__ = [
    "KINDS",
    "DesignSpec",
    "DesignState",
    "DesignTemplate",
    "design_catalog",
    "make_design",
    "select_arm",
    "update",
    "ucb_bonus",
    "clip_probability",
]

BASE_KINDS = ("fixed_uniform", "etc", "ucb", "eps_greedy", "batched_thompson")
WRAPPER_KINDS = ("clipped_decay", "gamma_mixture")
KINDS = BASE_KINDS + WRAPPER_KINDS

_BASE_CODE = {
    "fixed_uniform": kn.BASE_UNIFORM,
    "etc": kn.BASE_ETC,
    "ucb": kn.BASE_UCB,
    "eps_greedy": kn.BASE_GREEDY,
    "batched_thompson": kn.BASE_THOMPSON,
}

_DEFAULTS: dict[str, dict[str, Any]] = {
    "fixed_uniform": {},
    "etc": {"explore_fraction": 0.5, "allocation": "uniform"},
    "ucb": {},
    "eps_greedy": {"epsilon": 0.0, "c": 0.0},
    "batched_thompson": {"batch_size": 100},
    "clipped_decay": {"beta": 0.7, "base": "ucb", "base_params": {}},
    "gamma_mixture": {"gamma": 0.1, "base": "eps_greedy", "base_params": {"c": 1.0}},
}


def ucb_bonus(n: float, T: int) -> float:
    """Exploration bonus ``sqrt(2 log T / n)``."""
    return math.sqrt(2.0 * math.log(T) / n)


def clip_probability(t: int, beta: float) -> float:
    """Probability of the forced-uniform branch at step ``t``: ``t**-beta``."""
    return float(t) ** (-beta)


def _coerce(kind: str, key: str, value: Any, default: Any) -> Any:
    if isinstance(default, dict):
        if not isinstance(value, Mapping):
            raise ConfigError(f"design.params.{key} for {kind} must be a mapping")
        return dict(value)
    if isinstance(default, str):
        return str(value)
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            iv = int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"design.params.{key} for {kind} must be an integer, got {value!r}") from None
        if iv != float(value):
            raise ConfigError(f"design.params.{key} for {kind} must be an integer, got {value!r}")
        return iv
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"design.params.{key} for {kind} must be a number, got {value!r}") from None


def _normalize(kind: str, params: Mapping[str, Any]) -> dict[str, Any]:
    if kind not in KINDS:
        raise ConfigError(f"design.kind: unknown design {kind!r}; choose from {', '.join(KINDS)}")
    defaults = _DEFAULTS[kind]
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(
            f"design.params: unknown key(s) {sorted(unknown)} for {kind}; allowed: {sorted(defaults) or 'none'}"
        )
    out = {}
    if kind in WRAPPER_KINDS and "base" in params and "base_params" not in params:
        if params["base"] != defaults["base"]:
            params = {**params, "base_params": {}}
    for key, default in defaults.items():
        out[key] = _coerce(kind, key, params[key], default) if key in params else (
            dict(default) if isinstance(default, dict) else default
        )
    return out


def _check_params(kind: str, p: dict[str, Any]) -> None:
    if kind == "etc":
        if not 0.0 < p["explore_fraction"] < 1.0:
            raise ConfigError(f"design.params.explore_fraction must be in (0,1), got {p['explore_fraction']}")
        if p["allocation"] not in ("uniform", "round_robin"):
            raise ConfigError(f"design.params.allocation must be 'uniform' or 'round_robin', got {p['allocation']!r}")
    elif kind == "eps_greedy":
        if not 0.0 <= p["epsilon"] <= 1.0:
            raise ConfigError(f"design.params.epsilon must be in [0,1], got {p['epsilon']}")
        if p["c"] < 0:
            raise ConfigError(f"design.params.c must be >= 0, got {p['c']}")
    elif kind == "batched_thompson":
        if p["batch_size"] < 1:
            raise ConfigError(f"design.params.batch_size must be >= 1, got {p['batch_size']}")
    elif kind == "clipped_decay":
        if not 0.0 <= p["beta"] <= 1.0:
            raise ConfigError(f"design.params.beta must be in [0,1], got {p['beta']}")
    elif kind == "gamma_mixture":
        if not 0.0 < p["gamma"] <= 1.0:
            raise ConfigError(f"design.params.gamma must be in (0,1], got {p['gamma']}")
    if kind in WRAPPER_KINDS:
        if p["base"] not in BASE_KINDS:
            raise ConfigError(
                f"design.params.base must be one of {', '.join(BASE_KINDS)}, got {p['base']!r}"
            )
        base = _normalize(p["base"], p["base_params"])
        _check_params(p["base"], base)
        p["base_params"] = base


@dataclass(frozen=True)
class DesignSpec:
    """A sampling design for ``K`` arms over horizon ``T``."""

    kind: str
    K: int
    T: int
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.K) < 1:
            raise ConfigError(f"design K must be >= 1, got {self.K}")
        if int(self.T) < 0:
            raise ConfigError(f"design T must be >= 0, got {self.T}")
        p = _normalize(self.kind, self.params)
        _check_params(self.kind, p)
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "params", p)

    def with_horizon(self, T: int) -> "DesignSpec":
        return DesignSpec(self.kind, self.K, T, self.params)

    @property
    def base_kind(self) -> str:
        return self.params["base"] if self.kind in WRAPPER_KINDS else self.kind

    @property
    def base_params(self) -> dict[str, Any]:
        return self.params["base_params"] if self.kind in WRAPPER_KINDS else dict(self.params)

    @property
    def explore_length(self) -> int:
        """ETC exploration length ``floor(fraction * T)`` (0 for other designs)."""
        if self.base_kind != "etc":
            return 0
        return int(math.floor(self.base_params["explore_fraction"] * self.T + 1e-9))

    @property
    def n_slots(self) -> int:
        """Uniform draws reserved per time step."""
        base = {
            "fixed_uniform": 1,
            "etc": 1,
            "ucb": 0,
            "eps_greedy": 2,
            "batched_thompson": self.K,
        }[self.base_kind]
        return base + (2 if self.kind in WRAPPER_KINDS else 0)

    def draws_needed(self, t: int) -> int:
        """Uniforms step ``t`` consumes in the one-step API (0 on deterministic steps)."""
        if self.kind in WRAPPER_KINDS:
            return self.n_slots
        if self.kind == "ucb":
            return 0
        if self.kind == "etc":
            if self.params["allocation"] == "round_robin" or t > self.explore_length:
                return 0
        return self.n_slots

    def encode(self) -> tuple[np.ndarray, np.ndarray]:
        bp = self.base_params
        ints = np.zeros(7, np.int64)
        floats = np.zeros(kn.F_CLIP + (self.T if self.kind == "clipped_decay" else 0))
        ints[kn.I_BASE] = _BASE_CODE[self.base_kind]
        ints[kn.I_WRAP] = {"clipped_decay": kn.WRAP_CLIPPED, "gamma_mixture": kn.WRAP_GAMMA}.get(
            self.kind, kn.WRAP_NONE
        )
        ints[kn.I_K] = self.K
        ints[kn.I_T] = max(self.T, 1)
        ints[kn.I_ETC_LEN] = self.explore_length
        ints[kn.I_ETC_MODE] = kn.ETC_ROUND_ROBIN if bp.get("allocation") == "round_robin" else kn.ETC_UNIFORM
        ints[kn.I_BATCH] = bp.get("batch_size", 1)
        if self.kind == "clipped_decay":
            floats[kn.F_WRAP] = self.params["beta"]
            floats[kn.F_CLIP :] = [clip_probability(t, self.params["beta"]) for t in range(1, self.T + 1)]
        elif self.kind == "gamma_mixture":
            floats[kn.F_WRAP] = self.params["gamma"]
        floats[kn.F_EPS] = bp.get("epsilon", 0.0)
        floats[kn.F_C] = bp.get("c", 0.0)
        floats[kn.F_TWO_LOG_T] = 2.0 * math.log(max(self.T, 1))
        return ints, floats

    def describe(self) -> str:
        if self.kind in WRAPPER_KINDS:
            inner = ", ".join(f"{k}={v}" for k, v in self.params["base_params"].items())
            rate = self.params.get("beta", self.params.get("gamma"))
            return f"{self.kind}({rate}) over {self.params['base']}({inner})"
        return f"{self.kind}({', '.join(f'{k}={v}' for k, v in self.params.items())})"

    def to_config(self) -> dict[str, str]:
        """Flat ``design.*`` key-value form used in run configs and manifests."""
        out = {"design.kind": self.kind}
        for k, v in self.params.items():
            if k == "base_params":
                for bk, bv in v.items():
                    out[f"design.params.base.{bk}"] = str(bv)
            else:
                out[f"design.params.{k}"] = str(v)
        return out


class DesignState:
    """Single-owner running state of one design, advanced one step at a time."""

    def __init__(self, spec: DesignSpec):
        self.spec = spec
        self._ints, self._floats = spec.encode()
        self.counts = np.zeros(spec.K, np.int64)
        self.sums = np.zeros(spec.K)
        self._scratch = np.zeros(kn.scratch_size(spec.K))
        kn.init_state(self._ints, self.counts, self.sums, self._scratch)
        self.t = 1
        self._pending: int | None = None
        self.last_wrapped = False

    @property
    def committed_arm(self) -> int | None:
        c = int(self._scratch[0])
        return None if c < 0 or self.spec.base_kind != "etc" else c + 1

    @property
    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Beta posterior parameters in force (batched Thompson)."""
        K = self.spec.K
        return self._scratch[1 : 1 + K].copy(), self._scratch[1 + K : 1 + 2 * K].copy()

    def select_arm(self, rng: np.random.Generator | np.ndarray | None = None) -> int:
        """Choose the arm for step ``t``.

        ``rng`` is a Generator (draws taken only when the step is random) or
        an explicit row of ``spec.n_slots`` uniforms.
        """
        if self.t > self.spec.T:
            raise HorizonExceededError(f"t={self.t} exceeds design horizon T={self.spec.T}")
        u = np.zeros(self.spec.n_slots)
        if isinstance(rng, np.ndarray):
            u[:] = rng
        else:
            need = self.spec.draws_needed(self.t)
            if need:
                if rng is None:
                    raise ConfigError(f"{self.spec.kind} needs random draws at t={self.t}")
                u[:need] = rng.random(need)
        arm, wrapped = kn.select(self._ints, self._floats, self.counts, self.sums, self._scratch, self.t, u)
        self.last_wrapped = bool(wrapped)
        self._pending = int(arm) + 1
        return self._pending

    def update(self, arm: int, outcome: float) -> "DesignState":
        if self.t > self.spec.T:
            raise HorizonExceededError(f"t={self.t} exceeds design horizon T={self.spec.T}")
        if not 1 <= arm <= self.spec.K:
            raise ConfigError(f"arm {arm} outside [1, {self.spec.K}]")
        if self.spec.base_kind == "batched_thompson" and outcome not in (0, 1):
            # resimulation feeds Gaussian outcomes through the compiled loop,
            # which clips them to [0, 1] for a fractional Beta update
            raise DataError(f"batched_thompson needs 0/1 outcomes, got {outcome!r}")
        kn.update(self._ints, self._floats, self.counts, self.sums, self._scratch, self.t, int(arm) - 1, float(outcome))
        self.t += 1
        self._pending = None
        return self


def select_arm(state: DesignState, rng=None) -> int:
    return state.select_arm(rng)


def update(state: DesignState, arm: int, outcome: float) -> DesignState:
    return state.update(arm, outcome)


@dataclass(frozen=True)
class DesignTemplate:
    name: str
    kind: str
    params: Mapping[str, Any]
    description: str

    def build(self, K: int, T: int, **overrides) -> DesignSpec:
        params = dict(self.params)
        if "base_params" in params:
            params["base_params"] = dict(params["base_params"])
        for key, value in overrides.items():
            if key.startswith("base.") and "base_params" in params:
                params["base_params"][key[5:]] = value
            else:
                params[key] = value
        return DesignSpec(self.kind, K, T, params)


_CATALOG = (
    DesignTemplate("etc", "etc", {"explore_fraction": 0.5, "allocation": "uniform"},
                   "explore-then-commit: uniform arms for floor(explore_fraction*T) steps, then the best sample mean"),
    DesignTemplate("etc_balanced", "etc", {"explore_fraction": 0.2, "allocation": "round_robin"},
                   "explore-then-commit, round-robin exploration (T/10 pulls per arm for K=2), commit at T/5"),
    DesignTemplate("ucb", "ucb", {},
                   "UCB: argmax of mean + sqrt(2 log T / N); each arm pulled once first"),
    DesignTemplate("clipped_ucb", "clipped_decay", {"beta": 0.7, "base": "ucb", "base_params": {}},
                   "UCB with forced uniform exploration at rate t^-beta (beta=0.7)"),
    DesignTemplate("eps_greedy", "eps_greedy", {"epsilon": 0.0, "c": 0.0},
                   "greedy on sample means, uniform with probability min(1, epsilon + c/t)"),
    DesignTemplate("clipped_eps_greedy", "clipped_decay", {"beta": 0.7, "base": "eps_greedy", "base_params": {}},
                   "greedy with forced uniform exploration at rate t^-beta (beta=0.7)"),
    DesignTemplate("gamma_mixture", "gamma_mixture",
                   {"gamma": 0.1, "base": "eps_greedy", "base_params": {"c": 1.0}},
                   "uniform with fixed probability gamma, otherwise greedy with extra uniform pulls at rate c/t"),
    DesignTemplate("batched_thompson", "batched_thompson", {"batch_size": 100},
                   "Beta(1,1)-Bernoulli Thompson sampling, posteriors refreshed every batch_size steps"),
    DesignTemplate("fixed_uniform", "fixed_uniform", {},
                   "non-adaptive uniform assignment (oracle design)"),
)


def design_catalog() -> list[DesignTemplate]:
    return list(_CATALOG)


def make_design(name: str, K: int, T: int, **overrides) -> DesignSpec:
    """Build a catalog design by template name, or a raw kind with params."""
    for tpl in _CATALOG:
        if tpl.name == name:
            return tpl.build(K, T, **overrides)
    if name in KINDS:
        base_params = {k[5:]: v for k, v in overrides.items() if k.startswith("base.")}
        params = {k: v for k, v in overrides.items() if not k.startswith("base.")}
        if base_params:
            params["base_params"] = base_params
        return DesignSpec(name, K, T, params)
    names = ", ".join(t.name for t in _CATALOG)
    raise ConfigError(f"design: unknown design {name!r}; catalog: {names}")
