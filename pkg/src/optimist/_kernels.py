"""Compiled per-trajectory loops.

Every design step reads its randomness from a fixed row of pre-drawn
uniforms ``u`` (one row per time step). Slot layout: a wrapper (clipping or
gamma mixture) owns slots 0-1; the base design owns the slots after that.
Designs are encoded as two small arrays, see ``designs.DesignSpec.encode``.
"""
import math

import llvmlite.binding as llb
import numpy as np
from numba import njit, types
from numba.extending import get_cython_function_address

# ints layout
I_BASE, I_WRAP, I_K, I_T, I_ETC_LEN, I_ETC_MODE, I_BATCH = range(7)
# floats layout
F_WRAP, F_EPS, F_C, F_TWO_LOG_T, F_CLIP = range(5)
# clipped designs store t**-beta for t = 1..T from F_CLIP on

BASE_UNIFORM, BASE_ETC, BASE_UCB, BASE_GREEDY, BASE_THOMPSON = range(5)
WRAP_NONE, WRAP_CLIPPED, WRAP_GAMMA = range(3)
ETC_UNIFORM, ETC_ROUND_ROBIN = range(2)

llb.add_symbol(
    "optimist_betaincinv",
    get_cython_function_address("scipy.special.cython_special", "__pyx_fuse_0betaincinv"),
)
_betaincinv = types.ExternalFunction(
    "optimist_betaincinv", types.float64(types.float64, types.float64, types.float64)
)


def scratch_size(K):
    # ETC: committed arm; Thompson: alpha/beta snapshot then running
    # success/failure mass; UCB: per-arm index
    return 1 + 4 * K


def workspace(K):
    """Work arrays ``(counts, sums, scratch)`` for the kernels below."""
    return np.zeros(K, np.int64), np.zeros(K), np.zeros(scratch_size(K))


@njit(cache=True, _nrt=False, inline="always")
def uniform_arm(u, K):
    a = int(u * K)
    return K - 1 if a >= K else a


@njit(cache=True, _nrt=False, inline="always")
def greedy_arm(counts, sums):
    """Arg-max sample mean; unpulled arms first (lowest index), ties low."""
    K = counts.size
    for a in range(K):
        if counts[a] == 0:
            return a
    best = 0
    best_v = sums[0] / counts[0]
    for a in range(1, K):
        v = sums[a] / counts[a]
        if v > best_v:
            best_v = v
            best = a
    return best


@njit(cache=True, _nrt=False, inline="always")
def commit_arm(counts, sums):
    """Arg-max sample mean over pulled arms only (ETC commitment)."""
    best = -1
    best_v = 0.0
    for a in range(counts.size):
        if counts[a] == 0:
            continue
        v = sums[a] / counts[a]
        if best < 0 or v > best_v:
            best_v = v
            best = a
    return 0 if best < 0 else best


@njit(cache=True, _nrt=False, inline="always")
def ucb_index(n, s, two_log_t):
    return s / n + math.sqrt(two_log_t / n)


@njit(cache=True, _nrt=False, inline="always")
def ucb_arm(scratch, K):
    """Arg-max of the cached UCB indices; unpulled arms hold +inf, ties low."""
    best = 0
    best_v = scratch[1]
    for a in range(1, K):
        v = scratch[1 + a]
        if v > best_v:
            best_v = v
            best = a
    return best


@njit(cache=True, _nrt=False, inline="always")
def init_state(ints, counts, sums, scratch):
    K = ints[I_K]
    counts[:] = 0
    sums[:] = 0.0
    scratch[:] = 0.0
    scratch[0] = -1.0
    if ints[I_BASE] == BASE_ETC and ints[I_ETC_LEN] == 0:
        scratch[0] = 0.0
    if ints[I_BASE] == BASE_THOMPSON:
        scratch[1 : 1 + 2 * K] = 1.0
    elif ints[I_BASE] == BASE_UCB:
        # the bonus depends on T only through log T, so an arm's index
        # changes only when that arm is pulled
        scratch[1 : 1 + K] = np.inf


@njit(cache=True, _nrt=False, inline="always")
def base_select(ints, floats, counts, sums, scratch, t, u, off):
    base = ints[I_BASE]
    K = ints[I_K]
    if base == BASE_UNIFORM:
        return uniform_arm(u[off], K)
    if base == BASE_ETC:
        if t <= ints[I_ETC_LEN]:
            if ints[I_ETC_MODE] == ETC_ROUND_ROBIN:
                return (t - 1) % K
            return uniform_arm(u[off], K)
        return int(scratch[0])
    if base == BASE_UCB:
        return ucb_arm(scratch, K)
    if base == BASE_GREEDY:
        p = floats[F_EPS] + floats[F_C] / t
        if u[off] < p:
            return uniform_arm(u[off + 1], K)
        return greedy_arm(counts, sums)
    # Thompson: one inverse-cdf Beta draw per arm from the batch snapshot
    best = 0
    best_v = -1.0
    for a in range(K):
        v = _betaincinv(scratch[1 + a], scratch[1 + K + a], u[off + a])
        if v > best_v:
            best_v = v
            best = a
    return best


@njit(cache=True, _nrt=False, inline="always")
def select(ints, floats, counts, sums, scratch, t, u):
    """Return ``(arm, took_wrapper_uniform_branch)``; arm is 0-based."""
    wrap = ints[I_WRAP]
    K = ints[I_K]
    if wrap == WRAP_CLIPPED:
        if u[0] <= floats[F_CLIP + t - 1]:
            return uniform_arm(u[1], K), True
        return base_select(ints, floats, counts, sums, scratch, t, u, 2), False
    if wrap == WRAP_GAMMA:
        if u[0] < floats[F_WRAP]:
            return uniform_arm(u[1], K), True
        return base_select(ints, floats, counts, sums, scratch, t, u, 2), False
    return base_select(ints, floats, counts, sums, scratch, t, u, 0), False


@njit(cache=True, _nrt=False, inline="always")
def update(ints, floats, counts, sums, scratch, t, arm, x):
    counts[arm] += 1
    sums[arm] += x
    base = ints[I_BASE]
    if base == BASE_ETC and t == ints[I_ETC_LEN]:
        scratch[0] = commit_arm(counts, sums)
    elif base == BASE_UCB:
        scratch[1 + arm] = ucb_index(counts[arm], sums[arm], floats[F_TWO_LOG_T])
    elif base == BASE_THOMPSON:
        K = ints[I_K]
        y = min(max(x, 0.0), 1.0)
        scratch[1 + 2 * K + arm] += y
        scratch[1 + 3 * K + arm] += 1.0 - y
        if t % ints[I_BATCH] == 0:
            for a in range(K):
                scratch[1 + a] = 1.0 + scratch[1 + 2 * K + a]
                scratch[1 + K + a] = 1.0 + scratch[1 + 3 * K + a]


@njit(cache=True, _nrt=False)
def run_trajectory(ints, floats, U, W, means, sds, bernoulli, arms_out, x_out, counts, sums, scratch):
    """One trajectory of length ``arms_out.size``; arms written 1-based.

    Outcomes are ``W < mean`` when ``bernoulli`` (W uniform), otherwise
    ``mean + sd * W`` (W standard normal). Returns the count of steps taken
    on a wrapper's uniform branch. ``counts``, ``sums`` and ``scratch`` are
    caller-owned work arrays (see ``workspace``).
    """
    init_state(ints, counts, sums, scratch)
    n_wrapped = 0
    for t in range(1, arms_out.size + 1):
        a, wrapped = select(ints, floats, counts, sums, scratch, t, U[t - 1])
        if wrapped:
            n_wrapped += 1
        w = W[t - 1]
        if bernoulli:
            x = 1.0 if w < means[a] else 0.0
        else:
            x = means[a] + sds[a] * w
        update(ints, floats, counts, sums, scratch, t, a, x)
        arms_out[t - 1] = a + 1
        x_out[t - 1] = x
    return n_wrapped


@njit(cache=True, _nrt=False)
def run_batch(ints, floats, U, W, means, sds, target, stat, npulls, counts, sums, scratch):
    """Target-arm sample means for every (null, replicate) pair.

    ``U`` is (n, T, S), ``W`` is (n, T) standard normals, ``means`` is
    (G, K) with row g holding the simulation means under null g. Replicate i
    reuses the same draws for every null. Outputs are (G, n); a replicate
    that never pulls the target gets NaN.

    Compiled without reference counting: the loops allocate nothing, and
    refcount traffic on the work arrays otherwise dominates the step cost.
    """
    G = means.shape[0]
    n = W.shape[0]
    T = W.shape[1]
    for g in range(G):
        mu = means[g]
        for i in range(n):
            init_state(ints, counts, sums, scratch)
            wsum = 0.0
            for t in range(1, T + 1):
                a, _ = select(ints, floats, counts, sums, scratch, t, U[i, t - 1])
                w = W[i, t - 1]
                if a == target:
                    wsum += w
                update(ints, floats, counts, sums, scratch, t, a, mu[a] + sds[a] * w)
            nt = counts[target]
            npulls[g, i] = nt
            if nt > 0:
                # exact when sd == 0: the statistic is then the null value itself
                stat[g, i] = mu[target] + sds[target] * (wsum / nt)
            else:
                stat[g, i] = np.nan
