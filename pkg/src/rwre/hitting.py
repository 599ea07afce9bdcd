"""Closed-form quenched hitting-time moments and an independent linear-system oracle.

For the walk confined to [0, n] the expected hitting time of n from 0 is

    E T_n = sum_{i=0}^{n-1} (1 + 2 W_i),   W_i = sum_{j=1}^{i} prod_{k=j}^{i} rho_k,

with W_0 = 0 (the forced site contributes exactly one step).  The variance is

    Var T_n = 4 sum_{j=0}^{n-1} (W_j + W_j^2)
            + 8 sum_{j=1}^{n-1} sum_{i=0}^{j-1} exp(V(j+1) - V(i+1)) (W_i + W_i^2),

the confinement killing every term of the full-line formula that reaches left
of 0.  This specialization is validated against the first-step-analysis
oracle below rather than trusted.

All sums run in the log domain (every summand is nonnegative): sub-ballistic
environments produce W of order n^(1/kappa), which overflows native floats at
modest n.  Linear values are exported only when ln(value) < ~700.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .environments import Environment
from .errors import CapExceeded
from .numerics import EXP_MAX, NEG_INF, exp_or_inf, kahan_cumsum, log_cumsum_exp, logsumexp_stream

LOG2 = math.log(2.0)
LOG4 = math.log(4.0)
LOG8 = math.log(8.0)

ORACLE_CAP = 2048


def _log_rho(env: Environment, lo: int, hi: int) -> np.ndarray:
    om = env.omega_slice(lo, hi)
    with np.errstate(divide="ignore"):
        return np.log((1.0 - om) / om)


def _softplus(x: float) -> float:
    """ln(1 + exp(x)), safe for x = -inf and large x."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _w_recursion(log_rho: np.ndarray, seed_log_w: float = NEG_INF) -> np.ndarray:
    """ln W along W_i = rho_i (1 + W_{i-1}); entry t uses log_rho[t]."""
    out = np.empty(len(log_rho))
    prev = float(seed_log_w)
    for t, lr in enumerate(log_rho):
        prev = lr + _softplus(prev)
        out[t] = prev
    return out


@dataclass(frozen=True)
class WSequence:
    """Per-site W values in the log domain.

    variant "reflected": W_i with products truncated at j >= 1 (W_0 = 0).
    variant "full_line": left tail truncated at the window edge, with a
    geometric estimate of the omitted mass attached.
    """
    log_values: np.ndarray
    start: int
    variant: str
    truncation_log_bound: Optional[float] = None
    bound_reliable: bool = True

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=np.float64)
        lv.flags.writeable = False
        object.__setattr__(self, "log_values", lv)

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    def log_at(self, i: int) -> float:
        return float(self.log_values[i - self.start])


def w_reflected(env: Environment) -> WSequence:
    """W_i for i = 0..n-1 of the environment reflected at n."""
    n = env.reflected_at
    if n is None:
        raise ValueError("w_reflected needs an environment reflected at some n")
    if n == 1:
        return WSequence(np.array([NEG_INF]), 0, "reflected")
    lr = _log_rho(env, 1, n - 1)
    lw = np.concatenate([[NEG_INF], _w_recursion(lr)])
    return WSequence(lw, 0, "reflected")


def _edge_decay(log_rho_left: np.ndarray) -> tuple[float, bool]:
    """Per-site decay rate of exp(-(V(j) - V(edge))) walking left from the edge.

    Estimated from the mean ln rho over the outermost window sites; toward
    -inf the potential climbs at rate -E[ln rho] per site, so the omitted
    summands shrink geometrically when that mean is negative.
    """
    m = min(len(log_rho_left), 16)
    if m == 0:
        return math.nan, False
    slope = float(np.mean(log_rho_left[:m]))
    if slope >= 0:
        return math.nan, False
    return slope, True  # ln r of the geometric ratio


def w_full_line(env: Environment, left_trunc: int) -> WSequence:
    """W_i seeded with W = 0 just left of -left_trunc, for i = -left_trunc..i_max.

    i_max is n-1 for a reflected environment, else the right window edge.
    The attached bound estimates max_i of the omitted left-tail mass
    exp(V(i+1) - V(-L)) * r/(1-r) from the edge slope.
    """
    if left_trunc < 0 or left_trunc > env.left:
        raise ValueError(f"left_trunc={left_trunc} outside window (left={env.left})")
    i_max = (env.reflected_at - 1) if env.reflected_at is not None else env.right
    lo = -left_trunc
    lr = _log_rho(env, lo, i_max)
    lw = _w_recursion(lr)
    # cumulative potential relative to the seed edge: c[t] = V(lo+t) - V(lo)
    c = np.concatenate([[0.0], kahan_cumsum(lr)])
    log_decay, ok = _edge_decay(lr)
    if ok:
        geo = math.exp(log_decay) / (1.0 - math.exp(log_decay))
        # worst omitted mass among the sites i >= 0 that feed the moments
        t0 = max(1, -lo + 1)
        log_bound = float(np.max(c[t0:])) + math.log(geo)
    else:
        log_bound = math.inf
    return WSequence(lw, lo, "full_line", truncation_log_bound=log_bound, bound_reliable=ok)


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HittingMoments:
    """Quenched moments of the hitting time of n, log-domain backed.

    The lazy chain's hitting time has expectation 2E and variance 4V + 2E.
    """
    n: int
    log_expectation: float
    log_variance: float
    truncation_log_bound: Optional[float] = None

    @property
    def expectation(self) -> float:
        return exp_or_inf(self.log_expectation)

    @property
    def variance(self) -> float:
        return exp_or_inf(self.log_variance)

    @property
    def log_lazy_expectation(self) -> float:
        return LOG2 + self.log_expectation

    @property
    def log_lazy_variance(self) -> float:
        return np.logaddexp(LOG4 + self.log_variance, LOG2 + self.log_expectation)

    @property
    def lazy_expectation(self) -> float:
        return exp_or_inf(self.log_lazy_expectation)

    @property
    def lazy_variance(self) -> float:
        return exp_or_inf(self.log_lazy_variance)


def lazy_moments(expectation: float, variance: float) -> tuple[float, float]:
    """(E, Var) of the plain walk -> (2E, 4 Var + 2E) of the lazy walk."""
    return 2.0 * expectation, 4.0 * variance + 2.0 * expectation


def _interior_potential(env: Environment, n: int) -> np.ndarray:
    """vts[x-1] = V(x) - V(1) for x = 1..n, built from interior sites only.

    Differences V(j+1) - V(i+1) for i, j >= 0 never involve site 0, so the
    reflected environment's overridden omega_0 drops out.
    """
    if n == 1:
        return np.zeros(1)
    lr = _log_rho(env, 1, n - 1)
    return np.concatenate([[0.0], kahan_cumsum(lr)])


def _moment_arrays(env: Environment, n: int):
    """Prefix arrays from which moments at every target <= n are read off."""
    if env.reflected_at is not None and env.reflected_at != n:
        raise ValueError("environment reflected at a different n")
    if n < 1 or n > env.right:
        raise ValueError(f"n={n} outside window")
    if n == 1:
        lw = np.array([NEG_INF])
    else:
        lw = np.concatenate([[NEG_INF], _w_recursion(_log_rho(env, 1, n - 1))])
    vts = _interior_potential(env, n)          # vts[x-1] = V(x) - V(1), x = 1..n
    lwq = lw + np.logaddexp(0.0, lw)           # ln(W + W^2) = ln W + ln(1 + W)
    ls_w = log_cumsum_exp(lw)                  # ln sum_{i<=t} W_i
    ls_wq = log_cumsum_exp(lwq)
    if n >= 2:
        b = -vts[: n - 1] + lwq[: n - 1]       # i' = 1..n-1: -V(i') + ln Wq_{i'-1}
        ls_s = log_cumsum_exp(b)
        t = vts[1:n] + ls_s                    # j = 1..n-1: V(j+1) + ln S_j
        ls_t = log_cumsum_exp(t)
    else:
        ls_t = np.empty(0)
    return ls_w, ls_wq, ls_t


def _moments_from_arrays(m: int, ls_w, ls_wq, ls_t) -> HittingMoments:
    log_e = np.logaddexp(math.log(m), LOG2 + ls_w[m - 1])
    if m >= 2:
        log_v = np.logaddexp(LOG4 + ls_wq[m - 1], LOG8 + ls_t[m - 2])
    else:
        log_v = NEG_INF
    return HittingMoments(n=m, log_expectation=float(log_e), log_variance=float(log_v))


def hitting_moments(env: Environment, n: Optional[int] = None) -> HittingMoments:
    """Expectation and variance of T_n for the reflected walk, in one pass."""
    if n is None:
        n = env.reflected_at
    if n is None:
        raise ValueError("specify n or pass a reflected environment")
    ls_w, ls_wq, ls_t = _moment_arrays(env, n)
    return _moments_from_arrays(n, ls_w, ls_wq, ls_t)


def moments_on_grid(env: Environment, ns: Sequence[int]) -> list[HittingMoments]:
    """Reflected-walk moments for every n in ns from a single prefix pass."""
    ns = sorted(int(x) for x in ns)
    ls_w, ls_wq, ls_t = _moment_arrays(env, ns[-1])
    return [_moments_from_arrays(m, ls_w, ls_wq, ls_t) for m in ns]


def quenched_expectation(env: Environment) -> float:
    """E T_n of the reflected walk: n + 2 sum W_i, log-domain accumulated."""
    return hitting_moments(env).expectation


def quenched_variance(env: Environment) -> float:
    """Var T_n of the reflected walk; oracle-gated specialization (module docstring)."""
    return hitting_moments(env).variance


def quenched_expectation_full_line(env: Environment, n: int, left_trunc: int) -> float:
    """E T_n for the unconfined walk, left tail truncated at -left_trunc."""
    ws = w_full_line(env, left_trunc)
    lw = ws.log_values[-ws.start: n - ws.start]
    return exp_or_inf(float(np.logaddexp(math.log(n), LOG2 + logsumexp_stream(lw))))


def quenched_variance_full_line(env: Environment, n: int, left_trunc: int) -> float:
    """Var T_n for the unconfined walk, left tail truncated at -left_trunc."""
    return full_line_moments(env, n, left_trunc).variance


def full_line_moments(env: Environment, n: int, left_trunc: int) -> HittingMoments:
    """Full-line moments of T_n with W sums truncated at -left_trunc.

    Same structure as the reflected formula but with the i-sums starting at
    the truncation edge; carries a truncation estimate for the omitted mass.
    """
    if n < 1 or n > env.right:
        raise ValueError(f"n={n} outside window")
    ws = w_full_line(env, left_trunc)
    lw = ws.log_values                       # i = -L..i_max
    lo = ws.start
    n_idx = n - lo                           # entries for i < n
    lw = lw[:n_idx]
    lr = _log_rho(env, lo, n - 1)
    c = np.concatenate([[0.0], kahan_cumsum(lr)])   # c[x-lo] = V(x) - V(lo), x = lo..n
    lwq = lw + np.logaddexp(0.0, lw)

    log_e = np.logaddexp(math.log(n), LOG2 + logsumexp_stream(lw[-lo:]))
    part1 = LOG4 + logsumexp_stream(lwq[-lo:])       # j = 0..n-1 only
    # S_j = sum_{i'=lo+1..j} exp(-(V(i') - V(lo))) Wq_{i'-1}; terms for j = 0..n-1
    b = -c[1:n_idx] + lwq[: n_idx - 1]               # i' = lo+1..n-1
    ls_s = log_cumsum_exp(b)
    j_sites = np.arange(lo + 1, n)                   # i' values
    mask = j_sites >= 0                              # keep j = 0..n-1 (ls_s index of i'=j)
    t = c[1 + (j_sites[mask] - lo)] + ls_s[mask]     # V(j+1) - V(lo) + ln S_j
    part2 = LOG8 + logsumexp_stream(t)
    log_v = np.logaddexp(part1, part2)
    return HittingMoments(n=n, log_expectation=float(log_e), log_variance=float(log_v),
                          truncation_log_bound=ws.truncation_log_bound)


# ---------------------------------------------------------------------------
# First-step-analysis oracle
# ---------------------------------------------------------------------------

def oracle_segment_moments(omega: np.ndarray, start: int = 0,
                           cap: int = ORACLE_CAP) -> tuple[float, float]:
    """(E, Var) of the hitting time of site m = len(omega) from `start`.

    omega[x] is the right-step probability at site x = 0..m-1; site 0 is
    treated as reflecting (forced right) regardless of omega[0].  Solves the
    tridiagonal first-step systems for E[T] and E[T^2] by forward elimination
    in extended precision: condition numbers grow like exp(max block height).
    """
    m = len(omega)
    if m > cap:
        raise CapExceeded(f"oracle target {m} exceeds cap {cap}", spent=m)
    if not 0 <= start <= m:
        raise ValueError("start outside segment")
    if start == m:
        return 0.0, 0.0
    p = np.asarray(omega, dtype=np.longdouble).copy()
    p[0] = 1.0
    q = 1.0 - p
    alpha = np.empty(m, dtype=np.longdouble)
    beta = np.empty(m, dtype=np.longdouble)
    alpha[0] = 1.0
    beta[0] = 1.0
    for x in range(1, m):
        denom = 1.0 - q[x] * beta[x - 1]
        beta[x] = p[x] / denom
        alpha[x] = (1.0 + q[x] * alpha[x - 1]) / denom
    h = np.zeros(m + 1, dtype=np.longdouble)
    for x in range(m - 1, -1, -1):
        h[x] = alpha[x] + beta[x] * h[x + 1]

    r = np.empty(m, dtype=np.longdouble)
    r[0] = 1.0 + 2.0 * h[1]
    if m > 1:
        xs = np.arange(1, m)
        r[1:] = 1.0 + 2.0 * (p[xs] * h[xs + 1] + q[xs] * h[xs - 1])
    a2 = np.empty(m, dtype=np.longdouble)
    a2[0] = r[0]
    for x in range(1, m):
        denom = 1.0 - q[x] * beta[x - 1]
        a2[x] = (r[x] + q[x] * a2[x - 1]) / denom
    g = np.zeros(m + 1, dtype=np.longdouble)
    for x in range(m - 1, -1, -1):
        g[x] = a2[x] + beta[x] * g[x + 1]

    expectation = h[start]
    variance = g[start] - expectation * expectation
    return float(expectation), float(max(variance, 0.0))


def oracle_moments(env: Environment, start: int = 0, target: Optional[int] = None,
                   cap: int = ORACLE_CAP) -> tuple[float, float]:
    """Independent (E, Var) of T_target for the reflected walk via linear solves."""
    n = env.reflected_at
    if n is None:
        raise ValueError("oracle_moments needs a reflected environment")
    if target is None:
        target = n
    if not 0 <= start <= target <= n:
        raise ValueError("need 0 <= start <= target <= n")
    om = env.omega_slice(0, target - 1) if target >= 1 else np.empty(0)
    return oracle_segment_moments(om, start=start, cap=cap)
