"""Exact finite-state analysis of the lazy reflected chain.

The lazy walk on {0..n} holds with probability 1/2 and otherwise moves like
the reflected walk.  Its stationary law, total-variation distance profiles,
mixing times, and cutoff-window scans are computed by exact distribution
evolution: no spectral shortcuts, the push-forward is the ground truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .environments import Environment, reflect
from .errors import CapExceeded, PreconditionError
from .hitting import hitting_moments
from .numerics import kahan_cumsum

DIST_TOL = 1e-12
DEFAULT_CAP = 10**9


@dataclass(frozen=True)
class LazyKernel:
    """Tridiagonal lazy kernel: up/down per site, hold = 1 - up - down exactly."""
    n: int
    up: np.ndarray
    down: np.ndarray
    hold: np.ndarray

    def __post_init__(self):
        for arr in (self.up, self.down, self.hold):
            arr.flags.writeable = False
        if self.up[self.n] != 0.0 or self.down[0] != 0.0:
            raise ValueError("boundary rates must vanish: up(n) = down(0) = 0")


def lazy_kernel(env: Environment) -> LazyKernel:
    n = env.reflected_at
    if n is None:
        raise ValueError("lazy_kernel needs a reflected environment")
    om = env.omega_slice(0, n)
    up = om / 2.0
    down = (1.0 - om) / 2.0
    up[n] = 0.0
    down[0] = 0.0
    hold = 1.0 - up - down
    return LazyKernel(n=n, up=up, down=down, hold=hold)


def validate_dist(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("negative probability mass")
    drift = abs(float(np.sum(p)) - 1.0)
    if drift > DIST_TOL:
        raise ValueError(f"mass drift {drift:.3e} exceeds {DIST_TOL}")
    return p


def delta(x: int, n: int) -> np.ndarray:
    d = np.zeros(n + 1)
    d[x] = 1.0
    return d


def stationary(env: Environment) -> np.ndarray:
    """Reversible law of the reflected chain (lazy or not; holding does not change it).

    pi(0) ~ e^{-V(1)}, pi(x) ~ e^{-V(x+1)} + e^{-V(x)} for 0 < x < n,
    pi(n) ~ e^{-V(n)}.  Every weight carries the common factor e^{-V(1)}, so
    only interior potential differences V(x) - V(1) enter; they are computed
    from interior sites and the overridden reflection sites drop out.
    """
    n = env.reflected_at
    if n is None:
        raise ValueError("stationary needs a reflected environment")
    om = env.omega_slice(1, n - 1) if n >= 2 else np.empty(0)
    lr = np.log((1.0 - om) / om)
    vts = np.concatenate([[0.0], kahan_cumsum(lr)])  # V(x) - V(1) for x = 1..n
    logw = np.empty(n + 1)
    logw[0] = -vts[0]
    if n >= 2:
        logw[1:n] = np.logaddexp(-vts[1:], -vts[:-1])
    logw[n] = -vts[n - 1]
    logw -= np.max(logw)
    w = np.exp(logw)
    return w / np.sum(w)


def _stationary_from_kernel(kernel: LazyKernel) -> np.ndarray:
    """pi via detailed balance on the kernel's own rates (zero-residual by construction)."""
    n = kernel.n
    lr = np.log(kernel.up[:n]) - np.log(kernel.down[1:])
    logpi = np.concatenate([[0.0], kahan_cumsum(lr)])
    logpi -= np.max(logpi)
    pi = np.exp(logpi)
    return pi / np.sum(pi)


def step(d: np.ndarray, kernel: LazyKernel) -> np.ndarray:
    """One exact push-forward d P."""
    d = validate_dist(d)
    if d.shape != (kernel.n + 1,):
        raise ValueError("distribution length must be n + 1")
    out = kernel.hold * d
    out[1:] += kernel.up[:-1] * d[:-1]
    out[:-1] += kernel.down[1:] * d[1:]
    return out


def tv(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance (1/2) sum |p - q|."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("length mismatch")
    return 0.5 * float(np.sum(np.abs(p - q)))


# ---------------------------------------------------------------------------
# Distribution evolution engine
# ---------------------------------------------------------------------------

class _Evolver:
    """Stateful forward evolution of one distribution row per start state.

    Rows whose TV has dropped below every threshold still being hunted can be
    dropped: per-row TV is nonincreasing, so they can never attain the max
    again at the remaining thresholds.
    """

    def __init__(self, kernel: LazyKernel, starts: Sequence[int], cap: int = DEFAULT_CAP):
        self.kernel = kernel
        self.d = np.zeros((len(starts), kernel.n + 1))
        for r, x in enumerate(starts):
            self.d[r, x] = 1.0
        self.buf = np.empty_like(self.d)
        self.k = 0
        self.cap = cap
        self.spent = 0

    def advance(self, steps: int) -> None:
        if steps <= 0:
            return
        self.spent += steps * self.d.shape[0]
        if self.spent > self.cap:
            raise CapExceeded(f"kernel application cap {self.cap} exceeded", spent=self.spent)
        _kernels.evolve_rows(self.kernel.up, self.kernel.down, self.kernel.hold,
                             self.d, self.buf, steps)
        self.k += steps

    def max_tv(self, pi: np.ndarray) -> float:
        return _kernels.max_row_tv(self.d, pi)

    def drop_settled(self, pi: np.ndarray, floor: float) -> None:
        tvs = np.empty(self.d.shape[0])
        _kernels.row_tvs(self.d, pi, tvs)
        keep = tvs > floor
        if keep.all() or not keep.any():
            return
        self.d = np.ascontiguousarray(self.d[keep])
        self.buf = np.empty_like(self.d)

    def snapshot(self) -> tuple[int, np.ndarray]:
        return self.k, self.d.copy()

    def restore(self, snap: tuple[int, np.ndarray]) -> None:
        self.k, d = snap
        self.d = d.copy()
        self.buf = np.empty_like(self.d)


def _resolve_starts(kernel: LazyKernel, starts: Union[str, Sequence[int]]) -> list[int]:
    if starts == "endpoints" or starts is None:
        return [0, kernel.n]
    if starts == "all":
        return list(range(kernel.n + 1))
    return sorted(set(int(s) for s in starts))


def _crossing_scan(kernel: LazyKernel, pi: np.ndarray, starts: Sequence[int],
                   record_ks: Sequence[int], thresholds: Sequence[float],
                   cap: int = DEFAULT_CAP) -> tuple[dict[int, float], dict[float, int]]:
    """One forward evolution computing d at the requested times and the first
    crossing time of each threshold.

    d(k) is nonincreasing in k, so crossings are bracketed at geometric
    checkpoints and refined by bisection from the last snapshot (the snapshot
    advances as the bisection resolves, bounding re-evolution work).
    """
    ev = _Evolver(kernel, starts, cap)
    record_ks = sorted(set(int(k) for k in record_ks))
    thresholds = sorted(set(thresholds), reverse=True)
    d_at: dict[int, float] = {}
    crossings: dict[float, int] = {}

    ti = 0
    d_cur = ev.max_tv(pi)
    while ti < len(thresholds) and d_cur <= thresholds[ti]:
        crossings[thresholds[ti]] = 0
        ti += 1
    pending = [k for k in record_ks if k > 0]
    if 0 in record_ks:
        d_at[0] = d_cur

    stride = 1
    while ti < len(thresholds) or pending:
        # next stop: either a requested k or a geometric checkpoint
        if pending:
            k_next = pending[0]
        else:
            ev.drop_settled(pi, thresholds[-1])
            k_next = ev.k + stride
            stride = min(2 * stride, 1 << 20)
        snap = ev.snapshot()
        d_prev = d_cur
        ev.advance(k_next - ev.k)
        d_cur = ev.max_tv(pi)
        if pending and ev.k == pending[0]:
            d_at[pending.pop(0)] = d_cur
        # resolve any thresholds crossed inside (snap.k, ev.k]
        while ti < len(thresholds) and d_cur <= thresholds[ti]:
            theta = thresholds[ti]
            lo_k, lo_d = snap[0], d_prev
            if lo_d <= theta:
                crossings[theta] = lo_k
                ti += 1
                continue
            lo_snap = snap
            hi_k = ev.k
            while hi_k - lo_snap[0] > 1:
                mid = (lo_snap[0] + hi_k) // 2
                probe = _Evolver(kernel, starts, cap)
                probe.restore(lo_snap)
                probe.advance(mid - lo_snap[0])
                if probe.max_tv(pi) <= theta:
                    hi_k = mid
                else:
                    lo_snap = probe.snapshot()
            crossings[theta] = hi_k
            ti += 1
    return d_at, crossings


# ---------------------------------------------------------------------------
# Power-chain evaluation for deep-trap chains
# ---------------------------------------------------------------------------

_POWER_LEVEL0 = 18          # below 2^18 remaining steps, finish by stepwise evolution
_POWER_MEM_LIMIT = 6 << 30  # bytes of stored power matrices

# measured throughputs used only to pick the cheaper exact method
_EVOLVE_RATE = 3.5e9        # element-ops per second, fused stepwise kernel
_GEMM_RATE = 9e10           # flops per second, dense matmul


class _PowerScan:
    """Crossing times via exact dyadic powers of the dense kernel.

    Sub-ballistic environments mix on the scale of exp(deepest trap), far
    beyond stepwise evolution budgets; advancing by P^(2^j) matrices (built
    by repeated squaring, all entries nonnegative, no cancellation) reaches
    any k in O(log k) dense products.  The last < 2^level0 steps run through
    the stepwise engine, so reported crossings are integer-exact; agreement
    of the two engines is pinned by tests on evolution-reachable scales.
    """

    def __init__(self, kernel: LazyKernel, pi: np.ndarray, starts: Sequence[int],
                 level0: int = _POWER_LEVEL0, cap: int = DEFAULT_CAP):
        n1 = kernel.n + 1
        self.kernel = kernel
        self.pi = pi
        self.level0 = level0
        self.cap = cap
        self.spent = 0
        p = np.diag(kernel.hold)
        p += np.diag(kernel.up[:-1], 1)
        p += np.diag(kernel.down[1:], -1)
        self.base = p
        self.mats: dict[int, np.ndarray] = {}
        self.top_level = -1
        self.v = np.zeros((len(starts), n1))
        for r, x in enumerate(starts):
            self.v[r, x] = 1.0
        self.k = 0

    def _charge(self, applications: int) -> None:
        self.spent += applications
        if self.spent > self.cap:
            raise CapExceeded(f"kernel application cap {self.cap} exceeded", spent=self.spent)

    def _ensure_level(self, j: int) -> None:
        if j <= self.top_level:
            return
        n1 = self.base.shape[0]
        if (len(self.mats) + max(0, j - max(self.top_level, self.level0 - 1))) * n1 * n1 * 8 \
                > _POWER_MEM_LIMIT:
            raise MemoryError("power-matrix stack would exceed the memory budget")
        if self.top_level < 0:
            m = self.base
            level = 0
        else:
            m = self.mats[self.top_level]
            level = self.top_level
        while level < j:
            self._charge(n1)
            m = m @ m
            level += 1
            if level >= self.level0:
                self.mats[level] = m
        self.top_level = level

    def _hop(self, v: np.ndarray, j: int) -> np.ndarray:
        self._ensure_level(j)
        return v @ self.mats[j]

    def _evolve_tail(self, v: np.ndarray, steps: int) -> np.ndarray:
        if steps <= 0:
            return v
        self._charge(steps * v.shape[0])
        d = v.copy()
        buf = np.empty_like(d)
        _kernels.evolve_rows(self.kernel.up, self.kernel.down, self.kernel.hold, d, buf, steps)
        return d

    def _tv(self, v: np.ndarray) -> float:
        return _kernels.max_row_tv(v, self.pi)

    def crossings(self, thresholds: Sequence[float]) -> dict[float, int]:
        """First k with d(k) <= theta for each threshold, largest first."""
        out = {}
        for theta in sorted(set(thresholds), reverse=True):
            if self._tv(self.v) <= theta:
                out[theta] = self.k
                continue
            # doubling hops from the current checkpoint until theta is crossed
            j = self.level0
            while True:
                w = self._hop(self.v, j)
                if self._tv(w) <= theta:
                    break
                self.v, self.k = w, self.k + (1 << j)
                j += 1
            # binary descent: commit hops that stay above theta
            for m in range(j - 1, self.level0 - 1, -1):
                w = self._hop(self.v, m)
                if self._tv(w) > theta:
                    self.v, self.k = w, self.k + (1 << m)
            # crossing now lies within 2^level0 steps: finish stepwise
            lo_k, lo_v = self.k, self.v
            span = 1 << self.level0
            while span > 1:
                half = span // 2
                w = self._evolve_tail(lo_v, half)
                if self._tv(w) > theta:
                    lo_v, lo_k = w, lo_k + half
                    span -= half
                else:
                    span = half
            out[theta] = lo_k + 1
            self.v, self.k = lo_v, lo_k
        return out


def _estimated_lazy_hitting(kernel: LazyKernel) -> float:
    """Closed-form 2 E T_n reconstructed from the kernel's own rates."""
    n = kernel.n
    if n == 1:
        return 2.0
    om = 2.0 * kernel.up[1:n]
    lr = np.log1p(-om) - np.log(om)
    lw = np.empty(n)
    lw[0] = -math.inf
    for i in range(1, n):
        lw[i] = lr[i - 1] + np.logaddexp(0.0, lw[i - 1])
    s = float(np.logaddexp.reduce(lw))
    log_e = np.logaddexp(math.log(n), math.log(2.0) + s)
    return 2.0 * (math.exp(log_e) if log_e < 700 else math.inf)


def _pick_method(kernel: LazyKernel, method: str, rows: int) -> str:
    if method in ("evolve", "power"):
        return method
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    n1 = kernel.n + 1
    k_hat = 16.0 * _estimated_lazy_hitting(kernel)
    t_evolve = k_hat * n1 * 3.0 * min(rows, 2) / _EVOLVE_RATE
    levels = max(math.log2(max(k_hat, 2.0)), _POWER_LEVEL0) + 4
    t_power = levels * 2.0 * n1**3 / _GEMM_RATE
    mem_ok = (levels - _POWER_LEVEL0 + 2) * n1 * n1 * 8 <= _POWER_MEM_LIMIT
    if not math.isfinite(t_evolve):
        return "power" if mem_ok else "evolve"
    return "power" if (t_power < t_evolve and mem_ok and rows <= 4) else "evolve"


# ---------------------------------------------------------------------------
# Profiles, mixing time, cutoff scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TVProfile:
    starts: tuple
    schedule: np.ndarray
    d: np.ndarray
    thresholds_crossed: dict

    def __post_init__(self):
        if np.any(self.d < -1e-15) or np.any(self.d > 1.0 + 1e-12):
            raise ValueError("TV values must lie in [0, 1]")
        if np.any(np.diff(self.d) > 1e-12):
            raise ValueError("TV profile must be nonincreasing along the schedule")


def distance_profile(env_or_kernel, starts=None, schedule: Sequence[int] = (),
                     cap: int = DEFAULT_CAP) -> TVProfile:
    """Worst-case-over-starts TV distance to stationarity at the scheduled times."""
    kernel = env_or_kernel if isinstance(env_or_kernel, LazyKernel) else lazy_kernel(env_or_kernel)
    schedule = sorted(set(int(k) for k in schedule))
    if schedule and schedule[0] < 0:
        raise ValueError("schedule times must be >= 0")
    pi = _stationary_from_kernel(kernel)
    start_list = _resolve_starts(kernel, starts)
    d_at, _ = _crossing_scan(kernel, pi, start_list, schedule, [], cap)
    d = np.array([d_at[k] for k in schedule])
    crossed = {}
    for theta in (0.75, 0.5, 0.25):
        hit = [k for k, dk in zip(schedule, d) if dk <= theta]
        crossed[theta] = hit[0] if hit else None
    return TVProfile(starts=tuple(start_list), schedule=np.array(schedule, dtype=np.int64),
                     d=d, thresholds_crossed=crossed)


def _find_crossings(kernel: LazyKernel, starts, thresholds: Sequence[float],
                    cap: int, method: str) -> dict[float, int]:
    pi = _stationary_from_kernel(kernel)
    start_list = _resolve_starts(kernel, starts)
    method = _pick_method(kernel, method, len(start_list))
    if method == "power":
        return _PowerScan(kernel, pi, start_list, cap=cap).crossings(thresholds)
    _, crossings = _crossing_scan(kernel, pi, start_list, [], list(thresholds), cap)
    return crossings


def mixing_time(env_or_kernel, eps: float = 0.25, starts=None, cap: int = DEFAULT_CAP,
                method: str = "auto") -> int:
    """Minimal l with d(l) <= eps for the chosen start set (exact, not bounded).

    Found by evolving to geometric checkpoints and bisecting on the monotone
    profile; deep-trap chains switch to exact dyadic kernel powers.  eps = 1
    returns 0 (d(0) <= 1 always).
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    kernel = env_or_kernel if isinstance(env_or_kernel, LazyKernel) else lazy_kernel(env_or_kernel)
    return _find_crossings(kernel, starts, [eps], cap, method)[eps]


@dataclass(frozen=True)
class CutoffReport:
    """d at t +- c f for the lazy chain, with the crossing-window diagnostic.

    t = lazy expected hitting time of n (= 2 E T_n of the plain walk),
    f = sqrt(Var T_n) of the plain walk.  window_ratio compares the
    0.75 -> 0.25 crossing spread with the mixing time.
    """
    n: int
    t: float
    f: float
    c_grid: tuple
    d_plus: np.ndarray
    d_minus: np.ndarray
    minus_clamped: np.ndarray
    k_three_quarter: int
    k_quarter: int
    t_mix: int
    window_ratio: float
    eps: float = 0.25


def cutoff_scan(env: Environment, n: Optional[int] = None, c_grid: Sequence[float] = (1.0, 2.0, 4.0),
                starts=None, cap: int = DEFAULT_CAP) -> CutoffReport:
    """Evaluate the TV profile at floor(t +- c f) and locate the drop window."""
    if env.reflected_at is None:
        if n is None:
            raise ValueError("specify n for an unreflected environment")
        env = reflect(env, n)
    n = env.reflected_at
    hm = hitting_moments(env)
    t = hm.lazy_expectation
    f = math.sqrt(hm.variance)
    if not math.isfinite(t) or not math.isfinite(f):
        raise PreconditionError("cutoff scan needs finite moments at this n")
    c_grid = tuple(float(c) for c in c_grid)
    ks_plus = [int(math.floor(t + c * f)) for c in c_grid]
    ks_minus_raw = [math.floor(t - c * f) for c in c_grid]
    minus_clamped = np.array([k < 0 for k in ks_minus_raw])
    ks_minus = [int(max(k, 0)) for k in ks_minus_raw]

    kernel = lazy_kernel(env)
    pi = _stationary_from_kernel(kernel)
    start_list = _resolve_starts(kernel, starts)
    d_at, crossings = _crossing_scan(kernel, pi, start_list, ks_plus + ks_minus,
                                     [0.75, 0.25], cap)
    k075 = crossings[0.75]
    k025 = crossings[0.25]
    window_ratio = (k025 - k075) / k025 if k025 > 0 else 0.0
    return CutoffReport(
        n=n, t=t, f=f, c_grid=c_grid,
        d_plus=np.array([d_at[k] for k in ks_plus]),
        d_minus=np.array([d_at[k] for k in ks_minus]),
        minus_clamped=minus_clamped,
        k_three_quarter=k075, k_quarter=k025,
        t_mix=k025, window_ratio=window_ratio,
    )


def drop_window(env: Environment, n: Optional[int] = None, starts=None,
                cap: int = DEFAULT_CAP, method: str = "auto") -> tuple[int, int, float]:
    """(k(0.75), k(0.25), window_ratio) without evaluating any t +- c f points.

    In the sub-ballistic regime t + c f can exceed the mixing time by orders
    of magnitude; the no-cutoff diagnostic only needs the crossing spread.
    """
    if env.reflected_at is None:
        env = reflect(env, n)
    kernel = lazy_kernel(env)
    crossings = _find_crossings(kernel, starts, [0.75, 0.25], cap, method)
    k075, k025 = crossings[0.75], crossings[0.25]
    ratio = (k025 - k075) / k025 if k025 > 0 else 0.0
    return k075, k025, ratio


@dataclass(frozen=True)
class TailBoundReport:
    k: int
    d_k: float
    tail_estimate: float
    tail_upper: float   # Wilson upper bound at z = 3 ("estimate + 3 SE")
    ok: bool


def tail_bound_check(env: Environment, n: Optional[int], k: int, mc_summary,
                     cap: int = DEFAULT_CAP) -> TailBoundReport:
    """Verify d(k) <= MC estimate of P(T_n^Y > k) plus three standard errors.

    mc_summary must carry a lazy hitting-time tail at k (see
    montecarlo.estimate_tail); the upper bound is the Wilson z=3 limit, which
    is the boundary-safe version of estimate + 3 SE.
    """
    if env.reflected_at is None:
        env = reflect(env, n)
    prof = distance_profile(env, schedule=[k], cap=cap)
    d_k = float(prof.d[0])
    est, upper = mc_summary.tail_upper_bound(k, z=3.0)
    return TailBoundReport(k=k, d_k=d_k, tail_estimate=est, tail_upper=upper,
                           ok=d_k <= upper)


def stationary_tail_mass(env: Environment, n: Optional[int] = None) -> float:
    """Stationary mass of [n - 2 (ln n)^2, n]."""
    if env.reflected_at is None:
        env = reflect(env, n)
    n = env.reflected_at
    if n < 3:
        raise ValueError("needs n >= 3")
    pi = stationary(env)
    xmin = max(0, math.ceil(n - 2.0 * math.log(n) ** 2))
    return float(np.sum(pi[xmin:]))
