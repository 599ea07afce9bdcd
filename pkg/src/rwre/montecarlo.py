"""Monte Carlo simulators: plain, lazy, and backtrack-restricted walks.

Randomness is counter-based: replica i always draws from the Philox stream
keyed (master_seed, i), so aggregates are independent of scheduling and
worker count by construction.  Trajectories consume uniforms in chunks fed
to compiled kernels; a step cap aborts loudly rather than truncating.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .environments import Environment
from .errors import CapExceeded, PreconditionError
from .numerics import wilson_interval
from .potential import BlockDecomposition, ladder_blocks, potential

DEFAULT_STEP_CAP = 10**10
_CHUNK0 = 1024
_CHUNK_MAX = 1 << 20


@dataclass(frozen=True)
class RngStream:
    """Deterministic substream (master_seed, stream_index) of the Philox family."""
    master_seed: int
    stream_index: int

    def generator(self) -> np.random.Generator:
        key = np.array([np.uint64(self.master_seed & 0xFFFFFFFFFFFFFFFF),
                        np.uint64(self.stream_index & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def _require_reflected(env: Environment) -> int:
    n = env.reflected_at
    if n is None:
        raise ValueError("simulator needs an environment reflected at some n")
    return n


def _walk(omega: np.ndarray, target: int, stream: RngStream, lazy: bool,
          cap: int) -> int:
    rng = stream.generator()
    pos = 0
    total = 0
    chunk = _CHUNK0
    while True:
        us = rng.random(chunk)
        pos, used, hit = _kernels.walk_chunk(omega, target, pos, us, lazy)
        total += used
        if hit:
            return total
        if total >= cap:
            raise CapExceeded(f"step cap {cap} exceeded at position {pos}", spent=total)
        chunk = min(chunk * 2, _CHUNK_MAX)


def simulate_t(env: Environment, stream: RngStream, cap: int = DEFAULT_STEP_CAP) -> int:
    """One exact trajectory of the reflected walk from 0; returns the first
    hitting time of n."""
    n = _require_reflected(env)
    return _walk(env.omega_slice(0, n), n, stream, lazy=False, cap=cap)


def simulate_t_lazy(env: Environment, stream: RngStream, cap: int = DEFAULT_STEP_CAP) -> int:
    """Lazy variant: holds with probability 1/2 each step."""
    n = _require_reflected(env)
    return _walk(env.omega_slice(0, n), n, stream, lazy=True, cap=cap)


def simulate_restricted(env: Environment, n: int, stream: RngStream,
                        decomp: Optional[BlockDecomposition] = None,
                        debug: bool = False,
                        cap: int = DEFAULT_STEP_CAP) -> tuple[int, bool]:
    """Coupled (restricted, free) pair driven by shared uniforms.

    The restricted walk is forced right at the ladder site `horizon` blocks
    behind the highest block it has reached (the patch is a function of that
    record), so it cannot backtrack more than ceil((ln n)^2) blocks.  Both
    walks live on the half line with 0 forced right.  Returns (T_tilde,
    A_indicator) where A holds iff the free walk hits n at the same time.

    With debug=True the per-step dominance X_restricted >= X_free is checked.
    """
    if n < 2 or n > env.right:
        raise ValueError(f"n={n} outside window")
    if decomp is None:
        base = env
        if env.reflected_at is not None:
            raise ValueError("pass the unreflected environment (or a decomposition)")
        decomp = ladder_blocks(potential(base), n)
    horizon = math.ceil(math.log(n) ** 2)
    omega = np.array(env.omega_slice(0, n), dtype=np.float64)
    omega[0] = 1.0
    nu = np.asarray(decomp.nu, dtype=np.int64)
    state = np.zeros(8, dtype=np.int64)
    state[7] = 1
    rng = stream.generator()
    chunk = _CHUNK0
    while True:
        us = rng.random(chunk)
        _kernels.coupled_chunk(omega, nu, horizon, n, state, us, 1 if debug else 0)
        if state[5] == 1 and state[6] == 1:
            break
        if max(state[3], state[4]) >= cap:
            raise CapExceeded(f"step cap {cap} exceeded", spent=int(max(state[3], state[4])))
        chunk = min(chunk * 2, _CHUNK_MAX)
    if debug and state[7] != 1:
        raise AssertionError("coupled dominance violated: restricted walk fell behind")
    t_res, t_free = int(state[3]), int(state[4])
    return t_res, t_res == t_free


# ---------------------------------------------------------------------------
# Tail estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    k: int
    exceed: int
    replicas: int
    estimate: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class HittingSampleSummary:
    """Sample moments and tail estimates with Wilson 95% intervals."""
    replicas: int
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    tails: dict

    def tail_at(self, k: int) -> TailEstimate:
        return self.tails[int(k)]

    def tail_upper_bound(self, k: int, z: float = 3.0) -> tuple[float, float]:
        """(estimate, Wilson upper bound at z) for P(T > k)."""
        te = self.tail_at(k)
        return te.estimate, wilson_interval(te.exceed, te.replicas, z=z)[1]


def _run_replicas(omega: np.ndarray, target: int, lazy: bool, lo: int, hi: int,
                  master_seed: int, cap: int) -> np.ndarray:
    out = np.empty(hi - lo, dtype=np.int64)
    for i in range(lo, hi):
        out[i - lo] = _walk(omega, target, RngStream(master_seed, i), lazy, cap)
    return out


def sample_hitting_times(env: Environment, lazy: bool, replicas: int, master_seed: int,
                         workers: int = 1, cap: int = DEFAULT_STEP_CAP) -> np.ndarray:
    """T values for replicas 0..replicas-1; replica i uses stream (master_seed, i)."""
    n = _require_reflected(env)
    omega = np.array(env.omega_slice(0, n), dtype=np.float64)
    if workers <= 1 or replicas < 4 * workers:
        return _run_replicas(omega, n, lazy, 0, replicas, master_seed, cap)
    bounds = np.linspace(0, replicas, workers + 1, dtype=int)
    out = np.empty(replicas, dtype=np.int64)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [(lo, hi, pool.submit(_run_replicas, omega, n, lazy, int(lo), int(hi),
                                        master_seed, cap))
                   for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for lo, hi, fut in futures:
            out[lo:hi] = fut.result()
    return out


def estimate_tail(env: Environment, n: Optional[int], lazy: bool, ks: Sequence[int],
                  replicas: int, master_seed: int, workers: int = 1,
                  cap: int = DEFAULT_STEP_CAP) -> HittingSampleSummary:
    """Empirical tails P(T > k) at each k, with deterministic replica streams."""
    if replicas < 100:
        raise PreconditionError("need at least 100 replicas")
    if env.reflected_at is None:
        from .environments import reflect
        env = reflect(env, n)
    ts = sample_hitting_times(env, lazy, replicas, master_seed, workers=workers, cap=cap)
    return summarize_hitting_times(ts, ks)


def summarize_hitting_times(ts: np.ndarray, ks: Sequence[int] = ()) -> HittingSampleSummary:
    m = len(ts)
    tsf = ts.astype(np.float64)
    mean = float(np.mean(tsf))
    var = float(np.var(tsf, ddof=1)) if m > 1 else 0.0
    se_mean = math.sqrt(var / m)
    centered = tsf - mean
    m4 = float(np.mean(centered**4))
    se_var = math.sqrt(max(m4 - var * var, 0.0) / m)
    tails = {}
    for k in sorted(set(int(k) for k in ks)):
        exceed = int(np.sum(ts > k))
        lo, hi = wilson_interval(exceed, m)
        tails[k] = TailEstimate(k=k, exceed=exceed, replicas=m,
                                estimate=exceed / m, ci_low=lo, ci_high=hi)
    return HittingSampleSummary(replicas=m, mean=mean, variance=var,
                                se_mean=se_mean, se_variance=se_var, tails=tails)
