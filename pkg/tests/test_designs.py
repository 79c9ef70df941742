import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optimist import _kernels as kn
from optimist.core import ConfigError, DataError, HorizonExceededError
from optimist.designs import (
    KINDS,
    DesignSpec,
    DesignState,
    clip_probability,
    design_catalog,
    make_design,
    ucb_bonus,
)

CATALOG = [t.name for t in design_catalog()]


def _explore(state, rng, outcome):
    while state.t <= state.spec.explore_length:
        a = state.select_arm(rng)
        state.update(a, outcome(a))


class TestSelect:
    def test_etc_explore_is_uniform(self):
        d = make_design("etc", 2, 100)
        rng = np.random.default_rng(1)
        hits = 0
        for _ in range(10_000):
            s = DesignState(d)
            s.t = 30  # selection in the explore phase does not look at history
            hits += s.select_arm(rng) == 1
        assert 0.48 <= hits / 10_000 <= 0.52

    def test_etc_commits_to_best_mean(self):
        d = make_design("etc", 2, 100)
        rng = np.random.default_rng(2)
        s = DesignState(d)
        _explore(s, rng, lambda a: 0.7 if a == 1 else 0.3)
        assert s.t == 51
        picks = set()
        while s.t <= 100:
            a = s.select_arm(rng)
            picks.add(a)
            s.update(a, 0.0)
        assert picks == {1}

    def test_ucb_tie_goes_low(self):
        s = DesignState(make_design("ucb", 2, 100))
        s.update(1, 0.0).update(2, 0.0)
        assert s.select_arm() == 1

    def test_ucb_pulls_each_arm_first(self):
        s = DesignState(make_design("ucb", 3, 50))
        order = []
        for _ in range(3):
            order.append(s.select_arm())
            s.update(order[-1], 1.0)
        assert sorted(order) == [1, 2, 3]

    def test_clipped_first_step_is_uniform(self):
        d = make_design("clipped_ucb", 3, 50)
        rng = np.random.default_rng(3)
        for _ in range(200):
            s = DesignState(d)
            s.select_arm(rng)
            assert s.last_wrapped

    def test_horizon_exceeded(self):
        s = DesignState(make_design("ucb", 2, 2))
        for _ in range(2):
            s.update(s.select_arm(), 0.0)
        with pytest.raises(HorizonExceededError):
            s.select_arm()
        with pytest.raises(HorizonExceededError):
            s.update(1, 0.0)

    def test_random_design_needs_rng(self):
        with pytest.raises(ConfigError):
            DesignState(make_design("fixed_uniform", 2, 5)).select_arm()


class TestUpdate:
    def test_etc_T10_commit(self):
        rng = np.random.default_rng(4)
        for seed in range(20):
            s = DesignState(make_design("etc", 2, 10))
            xs = np.random.default_rng(seed).random(5)
            arms = []
            for x in xs:
                a = s.select_arm(rng)
                arms.append(a)
                s.update(a, x)
            arms = np.array(arms)
            means = [xs[arms == a].mean() if np.any(arms == a) else -np.inf for a in (1, 2)]
            assert s.committed_arm == int(np.argmax(means)) + 1

    def test_etc_commit_tie_lowest(self):
        s = DesignState(make_design("etc", 2, 4, allocation="round_robin"))
        for _ in range(2):
            s.update(s.select_arm(), 0.5)
        assert s.committed_arm == 1

    def test_thompson_posterior_refreshes_per_batch(self):
        s = DesignState(make_design("batched_thompson", 2, 20, batch_size=5))
        rng = np.random.default_rng(5)
        wins = np.zeros(2)
        losses = np.zeros(2)
        for step in range(1, 13):
            a = s.select_arm(rng)
            x = int(a == 1)
            s.update(a, x)
            wins[a - 1] += x
            losses[a - 1] += 1 - x
            alpha, beta = s.posterior
            if step % 5 == 0:
                snap = (wins.copy(), losses.copy())
            if step < 5:
                assert alpha.tolist() == [1, 1] and beta.tolist() == [1, 1]
            else:
                assert np.array_equal(alpha, 1 + snap[0]) and np.array_equal(beta, 1 + snap[1])

    def test_thompson_rejects_non_binary(self):
        s = DesignState(make_design("batched_thompson", 2, 10))
        with pytest.raises(DataError):
            s.update(1, 0.5)

    def test_arm_range(self):
        with pytest.raises(ConfigError):
            DesignState(make_design("ucb", 2, 5)).update(3, 0.0)


class TestCatalog:
    def test_catalog_covers_every_family(self):
        kinds = {t.kind for t in design_catalog()}
        assert len(CATALOG) >= 7
        assert set(KINDS) <= kinds
        assert {"etc", "etc_balanced", "clipped_ucb"} <= set(CATALOG)
        assert all(t.description for t in design_catalog())

    def test_formulas(self):
        assert ucb_bonus(2, 100) == pytest.approx(2.1460, abs=1e-4)
        assert ucb_bonus(1, 100) == pytest.approx(math.sqrt(2 * math.log(100)))
        assert clip_probability(10, 0.7) == pytest.approx(0.19953, abs=1e-5)
        assert clip_probability(1, 0.7) == 1.0

    def test_unknown_names_and_params(self):
        with pytest.raises(ConfigError, match="unknown design"):
            make_design("nope", 2, 10)
        with pytest.raises(ConfigError, match="unknown key"):
            make_design("etc", 2, 10, bogus=1)
        with pytest.raises(ConfigError):
            make_design("etc", 2, 10, explore_fraction=1.5)
        with pytest.raises(ConfigError):
            make_design("clipped_ucb", 2, 10, beta=2)
        with pytest.raises(ConfigError):
            make_design("batched_thompson", 2, 10, batch_size=0)
        with pytest.raises(ConfigError):
            DesignSpec("clipped_decay", 2, 10, {"base": "clipped_decay"})

    def test_overrides_reach_base(self):
        d = make_design("gamma_mixture", 2, 10, gamma=0.3, **{"base.c": 2})
        assert d.params["gamma"] == 0.3 and d.base_params["c"] == 2.0
        assert make_design("clipped_decay", 2, 10, base="etc").base_kind == "etc"

    def test_to_config_roundtrip(self):
        d = make_design("clipped_eps_greedy", 3, 40)
        cfg = d.to_config()
        assert cfg["design.kind"] == "clipped_decay"
        over = {k[len("design.params."):]: v for k, v in cfg.items() if k != "design.kind"}
        assert make_design(cfg["design.kind"], 3, 40, **over) == d


def _step_api(d, U, outcomes):
    s = DesignState(d)
    arms = []
    for t in range(d.T):
        a = s.select_arm(U[t])
        arms.append(a)
        s.update(a, outcomes[t])
    return np.array(arms)


@pytest.mark.parametrize("name", CATALOG)
def test_kernel_matches_step_api(name):
    K, T = 3, 250
    d = make_design(name, K, T, **({"batch_size": 7} if name == "batched_thompson" else {}))
    rng = np.random.default_rng(CATALOG.index(name))
    U = rng.random((T, d.n_slots))
    W = rng.random(T)
    arms = np.zeros(T, np.int64)
    xs = np.zeros(T)
    ints, floats = d.encode()
    kn.run_trajectory(ints, floats, U, W, np.array([0.3, 0.5, 0.7]), np.zeros(K), True, arms, xs,
                      *kn.workspace(K))
    assert np.array_equal(_step_api(d, U, xs), arms)


@pytest.mark.parametrize("name", CATALOG)
def test_replay_is_deterministic(name):
    d = make_design(name, 2, 80)
    out = []
    for _ in range(2):
        rng = np.random.default_rng(9)
        s = DesignState(d)
        arms = []
        while s.t <= d.T:
            a = s.select_arm(rng)
            arms.append(a)
            s.update(a, float(rng.random() < 0.5))
        out.append(arms)
    assert out[0] == out[1]


def test_gamma_mixture_uniform_frequency():
    d = make_design("gamma_mixture", 2, 20_000, gamma=0.1)
    s = DesignState(d)
    rng = np.random.default_rng(6)
    wrapped = 0
    while s.t <= d.T:
        a = s.select_arm(rng)
        wrapped += s.last_wrapped
        s.update(a, float(a == 1))
    # binomial sd at p=0.1, n=2e4 is about 0.0021
    assert abs(wrapped / d.T - 0.1) < 0.01


def test_clipped_decay_keeps_sampling_every_arm():
    # forced exploration gives each arm about T^(1-beta) / ((1-beta) K) pulls
    K = 3
    mins = {}
    for T in (200, 3200):
        d = make_design("clipped_eps_greedy", K, T)
        pulls = []
        for seed in range(30):
            U = np.random.default_rng(seed).random((T, d.n_slots))
            W = np.random.default_rng(seed + 1000).random(T)
            arms = np.zeros(T, np.int64)
            xs = np.zeros(T)
            ints, floats = d.encode()
            kn.run_trajectory(ints, floats, U, W, np.array([0.9, 0.5, 0.1]), np.zeros(K), True, arms, xs,
                              *kn.workspace(K))
            pulls.append(np.bincount(arms - 1, minlength=K).min())
        mins[T] = np.mean(pulls)
    expected = 3200**0.3 / (0.3 * K)
    assert mins[3200] > 2 * mins[200]
    assert mins[3200] > 0.5 * expected


@given(st.sampled_from(CATALOG), st.integers(1, 4), st.integers(1, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_arms_always_in_range(name, K, T, seed):
    d = make_design(name, K, T)
    rng = np.random.default_rng(seed)
    s = DesignState(d)
    while s.t <= T:
        a = s.select_arm(rng)
        assert 1 <= a <= K
        s.update(a, float(rng.random() < 0.5))
    assert s.counts.sum() == T
