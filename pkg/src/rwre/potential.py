"""Potential of an environment, ladder/block decomposition, and event checkers.

The potential V is the cumulative sum of ln rho: V(0) = 0, V(x+1) - V(x) =
ln rho_x.  Under a rightward drift it is a random walk with negative mean
increments whose upward excursions ("blocks" between ladder locations) act
as traps; block heights control hitting-time moments and mixing.

The check_* functions evaluate the "good environment" events used in that
analysis.  Each one is a literal transcription of its defining quantifier,
evaluated by an equivalent scan; brute-force enumeration oracles in the test
suite pin the equivalence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .environments import Environment, EnvDistribution, TwoPoint, atoms, sample_environment, solve_kappa, mean_log_rho
from .errors import PreconditionError
from .numerics import kahan_cumsum


@dataclass(frozen=True)
class PotentialProfile:
    """V(x) on x in [lo, hi], base-e log units, V(0) = 0."""
    values: np.ndarray
    lo: int
    hi: int

    def __post_init__(self):
        if self.values.shape != (self.hi - self.lo + 1,):
            raise ValueError("values length must match [lo, hi]")
        if not (self.lo <= 0 <= self.hi):
            raise ValueError("profile must contain 0")
        v = np.asarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def v(self, x: int) -> float:
        if not self.lo <= x <= self.hi:
            raise IndexError(f"x={x} outside [{self.lo}, {self.hi}]")
        return float(self.values[x - self.lo])

    def slice(self, lo: int, hi: int) -> np.ndarray:
        if lo < self.lo or hi > self.hi:
            raise IndexError(f"[{lo}, {hi}] outside [{self.lo}, {self.hi}]")
        return self.values[lo - self.lo: hi - self.lo + 1]


def potential(env: Environment) -> PotentialProfile:
    """Potential of an (unreflected) environment on [-left, right+1].

    Both directional sums use compensated summation: windows up to 1e6 sites
    otherwise accumulate visible rounding in the telescoping identity.
    """
    if env.reflected_at is not None:
        raise ValueError("potential is defined for the unreflected environment")
    log_rho = np.log(env.rho_slice(-env.left, env.right))
    n_left = env.left
    # positive side: V(x) = sum_{i=0}^{x-1} ln rho_i for x = 1..right+1
    pos = kahan_cumsum(log_rho[n_left:])
    # negative side: V(x) = -sum_{i=x}^{-1} ln rho_i for x = -left..-1
    neg = -kahan_cumsum(log_rho[:n_left][::-1])[::-1] if n_left > 0 else np.empty(0)
    values = np.concatenate([neg, [0.0], pos])
    return PotentialProfile(values=values, lo=-env.left, hi=env.right + 1)


# ---------------------------------------------------------------------------
# Ladder locations and blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockDecomposition:
    """Ladder locations nu_i (nu_0 = 0) and the block heights between them.

    nu[i+1] is the least site > nu[i] where V drops strictly below V(nu[i]);
    ties do not open a new block.  heights[i] is the maximal rise of V inside
    block i.  When the scan ends before the last block closes, its height is
    reported as scanned and partial_last is set.  nu_neg holds the negative-
    side ladder locations (strict running minima seen from the left edge),
    in decreasing order.
    """
    nu: np.ndarray
    heights: np.ndarray
    partial_last: bool
    nu_neg: np.ndarray
    nu_bar_estimate: float

    def block_count(self) -> int:
        return len(self.heights)


def ladder_blocks(profile: PotentialProfile, upto: int) -> BlockDecomposition:
    """Single left-to-right scan emitting all nu_i <= upto and their heights."""
    if not (0 <= upto <= profile.hi):
        raise ValueError(f"upto={upto} outside profile window")
    v = profile.values
    off = -profile.lo
    nu = [0]
    heights = []
    base = v[off]
    run_max = 0.0
    for x in range(1, upto + 1):
        vx = v[off + x]
        if vx < base:
            heights.append(run_max)
            nu.append(x)
            base = vx
            run_max = 0.0
        else:
            run_max = max(run_max, vx - base)
    partial = True
    # the block that is still open at `upto` is reported with its partial height
    heights.append(run_max)

    nu_neg = []
    if profile.lo < 0:
        running_min = math.inf
        mins = []
        for x in range(profile.lo, 0):
            is_ladder = v[off + x] < running_min
            running_min = min(running_min, v[off + x])
            if is_ladder:
                mins.append(x)
        nu_neg = mins[::-1]

    widths = np.diff(np.asarray(nu))
    nu_bar = float(np.mean(widths)) if len(widths) else math.nan
    return BlockDecomposition(
        nu=np.asarray(nu, dtype=np.int64),
        heights=np.asarray(heights, dtype=np.float64),
        partial_last=partial,
        nu_neg=np.asarray(nu_neg, dtype=np.int64),
        nu_bar_estimate=nu_bar,
    )


def block_index(decomp: BlockDecomposition, n: int) -> int:
    """Largest l with nu_l <= n (the block n belongs to)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    idx = int(np.searchsorted(decomp.nu, n, side="right")) - 1
    if idx < 0:
        raise ValueError(f"decomposition does not cover {n}")
    return idx


# ---------------------------------------------------------------------------
# Event checkers
# ---------------------------------------------------------------------------

def check_b1(profile: PotentialProfile, n: int) -> bool:
    """No pair -n <= i < j <= n with j - i >= k (ln n)^2 and V(j) > V(i) - k ln n.

    Equivalent scan: with prefix minima of V, the worst pair at lag >= m is
    max_j V(j) - min_{i <= j-m} V(i); a violation at any admissible k shows up
    there.  For n < 3, (ln n)^2 < 1.21 degenerates the event (every short lag
    is constrained), so such windows are treated as vacuously good.
    """
    if n < 3:
        return True
    if profile.lo > -n or profile.hi < n:
        raise ValueError(f"profile must cover [-{n}, {n}]")
    v = profile.slice(-n, n)
    ln_n = math.log(n)
    l2 = ln_n * ln_n
    prefmin = np.minimum.accumulate(v)
    k = 1
    while True:
        m = math.ceil(k * l2)
        if m > 2 * n:
            return True
        rise = v[m:] - prefmin[:-m]
        if np.max(rise) > -k * ln_n:
            return False
        k += 1


def check_b2(decomp: BlockDecomposition, n: int, nu_bar: float) -> bool:
    """-2 nu_bar n <= nu_{-n} and nu_n <= 2 nu_bar n."""
    if len(decomp.nu) <= n or len(decomp.nu_neg) < n:
        raise PreconditionError(f"decomposition holds {len(decomp.nu)-1} / {len(decomp.nu_neg)} "
                                f"blocks; need {n} on both sides")
    nu_n = decomp.nu[n]
    nu_minus_n = decomp.nu_neg[n - 1]
    return bool(-2.0 * nu_bar * n <= nu_minus_n and nu_n <= 2.0 * nu_bar * n)


def max_rise(profile: PotentialProfile, n: int, buffer: int) -> tuple[float, bool, float]:
    """max over -n <= i <= n, i <= k <= n+buffer of V(k) - V(i).

    The defining maximum ranges over all k >= i; it is truncated at
    n + buffer.  Returns (value, truncation_safe, margin): a later k could
    only alter the value by rising more than `margin` above the window-edge
    potential, an event exponentially unlikely under the downward drift.
    """
    if profile.lo > -n or profile.hi < n + buffer:
        raise ValueError(f"profile must cover [-{n}, {n + buffer}]")
    v_all = profile.slice(-n, n + buffer)
    suffmax = np.maximum.accumulate(v_all[::-1])[::-1]
    starts = v_all[: 2 * n + 1]
    q = float(np.max(suffmax[: 2 * n + 1] - starts))
    edge = float(v_all[-1])
    margin = q - (edge - float(np.min(starts)))
    return q, margin > 0, margin


def default_buffer(n: int) -> int:
    return math.ceil(10.0 * math.log(n) ** 2)


def check_b3(profile: PotentialProfile, n: int, kappa: float, buffer: Optional[int] = None) -> bool:
    """Largest potential rise ahead of any site in [-n, n] stays below
    (1/kappa)(ln n + 2 ln ln n)."""
    if kappa is None or kappa <= 0:
        raise PreconditionError("check_b3 requires kappa > 0")
    if buffer is None:
        buffer = default_buffer(n)
    q, _, _ = max_rise(profile, n, buffer)
    return q <= (math.log(n) + 2.0 * math.log(math.log(n))) / kappa


def check_b4(profile: PotentialProfile, n: int, kappa: float, buffer: Optional[int] = None) -> bool:
    """Some potential rise ahead of a site in [-n, n] exceeds
    (1/kappa)(ln n - 4 ln ln n)."""
    if kappa is None or kappa <= 0:
        raise PreconditionError("check_b4 requires kappa > 0")
    if buffer is None:
        buffer = default_buffer(n)
    q, _, _ = max_rise(profile, n, buffer)
    return q > (math.log(n) - 4.0 * math.log(math.log(n))) / kappa


def check_d(decomp: BlockDecomposition, n: int, m: int, kappa: float) -> bool:
    """Not too many high blocks: for every l in 1..m-1, fewer than n^(1-l/m)
    blocks among 0..n_0 have height >= (l/(kappa m))(ln n + 2 ln ln n)."""
    if kappa is None or kappa <= 0:
        raise PreconditionError("check_d requires kappa > 0")
    if m < 2:
        raise ValueError("m must be >= 2")
    n0 = block_index(decomp, n)
    h = decomp.heights[: n0 + 1]
    base = math.log(n) + 2.0 * math.log(math.log(n))
    for l in range(1, m):
        thr = (l / (kappa * m)) * base
        count = int(np.sum(h >= thr))
        if count >= n ** (1.0 - l / m):
            return False
    return True


def check_e(profile: PotentialProfile, n: int, a: float, kappa: float) -> bool:
    """No site 0 <= k <= n has a backward rise > (a/kappa) ln n within (ln n)^2
    before it and a forward rise > ((1 - 3a/4)/kappa) ln n within (ln n)^2 after it."""
    if not 0.0 < a < 1.0:
        raise ValueError("a must lie in (0,1)")
    if kappa is None or kappa <= 0:
        raise PreconditionError("check_e requires kappa > 0")
    ln_n = math.log(n)
    l2 = ln_n * ln_n
    back_lo = math.ceil(-l2)
    fwd_hi = math.floor(n + l2)
    if profile.lo > back_lo or profile.hi < fwd_hi:
        raise ValueError(f"profile must cover [{back_lo}, {fwd_hi}]")
    thr_back = (a / kappa) * ln_n
    thr_fwd = ((1.0 - 0.75 * a) / kappa) * ln_n
    v = profile.values
    off = -profile.lo
    for k in range(0, n + 1):
        lmin = math.ceil(k - l2)
        back = v[off + k] - np.min(v[off + lmin: off + k]) if lmin < k else -math.inf
        if back <= thr_back:
            continue
        jmax = math.floor(k + l2)
        best = -math.inf
        run_min = math.inf
        for j in range(k + 1, jmax + 1):
            if run_min < math.inf:
                best = max(best, v[off + j] - run_min)
                if best > thr_fwd:
                    return False
            run_min = min(run_min, v[off + j])
    return True


# ---------------------------------------------------------------------------
# Tail constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailConstants:
    """Window-truncated sums of exp(-V) to the left, exp(V) to the right, and
    the weighted left sum entering the variance's left-tail contribution."""
    c_minus: float
    c_plus: float
    d_minus: float
    truncation_bound: float
    bound_reliable: bool


def _edge_tail_estimate(edge_terms_log: np.ndarray) -> tuple[float, bool]:
    """Geometric tail estimate from the last window slope.

    edge_terms_log: ln of the summand at the outermost sites, ordered from
    the interior toward the edge.  If the summand decays toward the edge at
    per-site rate r < 1, the omitted mass is at most last * r / (1 - r).
    """
    if len(edge_terms_log) < 2:
        return math.inf, False
    m = min(len(edge_terms_log) - 1, 16)
    slope = (edge_terms_log[-1] - edge_terms_log[-1 - m]) / m
    if slope >= 0:
        return math.inf, False
    r = math.exp(slope)
    return math.exp(edge_terms_log[-1]) * r / (1.0 - r), True


def tail_constants(profile: PotentialProfile, w_left: Sequence[float]) -> TailConstants:
    """Truncated C-, C+, D- sums with a geometric truncation estimate.

    w_left: full-line W values for the sites lo..-1 (same order as the
    profile's negative side).
    """
    if profile.lo >= 0:
        raise ValueError("profile has no left window")
    v_neg = profile.slice(profile.lo, -1)          # V(j), j = lo..-1
    v_pos = profile.slice(0, profile.hi)           # V(j), j = 0..hi
    w_left = np.asarray(w_left, dtype=np.float64)
    if w_left.shape != v_neg.shape:
        raise ValueError("w_left must cover exactly the sites left of 0")
    c_minus = float(np.sum(np.exp(-v_neg)))
    c_plus = float(np.sum(np.exp(v_pos)))
    d_minus = float(np.sum(np.exp(-v_neg) * (w_left + w_left**2)))

    # left tail: summand exp(-V(j)) toward j -> lo; right tail: exp(V(j)) toward hi
    left_bound, left_ok = _edge_tail_estimate((-v_neg)[::-1])
    right_bound, right_ok = _edge_tail_estimate(v_pos)
    reliable = left_ok and right_ok
    if reliable:
        w_edge = float(w_left[0])
        bound = left_bound * (1.0 + w_edge + w_edge**2) + right_bound
    else:
        bound = math.inf
    return TailConstants(c_minus, c_plus, d_minus, bound, reliable)


# ---------------------------------------------------------------------------
# nu_bar estimation and distribution fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NuBarEstimate:
    value: float
    ci_low: float
    ci_high: float
    analytic: bool
    sample_size: int


def estimate_nu_bar(dist: EnvDistribution, n_blocks: int = 10_000, seed: int = 0) -> NuBarEstimate:
    """Mean ladder width E[nu_1], analytic when rho < 1 a.s., else plug-in.

    When every support point keeps rho < 1 the potential drops at each step
    and nu_i = i exactly.  Otherwise widths are measured on simulated
    environments, a diagnostic-quality estimate (B2 is not load-bearing).
    """
    at = atoms(dist)
    if at is not None:
        vals, wts = at
        if np.all(vals[wts > 0] > 0.5):
            return NuBarEstimate(1.0, 1.0, 1.0, True, 0)
    if mean_log_rho(dist) >= 0:
        raise PreconditionError("ladder widths have finite mean only under a downward drift")
    widths = []
    right = max(4 * n_blocks, 1024)
    attempt = 0
    while len(widths) < n_blocks and attempt < 8:
        env = sample_environment(dist, 0, right, seed + attempt)
        prof = potential(env)
        dec = ladder_blocks(prof, right)
        widths = list(np.diff(dec.nu))
        right *= 2
        attempt += 1
    widths = np.asarray(widths[:n_blocks], dtype=np.float64)
    mean = float(np.mean(widths))
    half = 1.959963984540054 * float(np.std(widths, ddof=1)) / math.sqrt(len(widths))
    return NuBarEstimate(mean, mean - half, mean + half, False, len(widths))


def fit_two_point(kappa: float, target_mean_log_rho: float, r_max: float = 1e6) -> TwoPoint:
    """TwoPoint law with the requested kappa and E[ln rho].

    Uses the symmetric family rho in {r, 1/r}: for each r > 1 the weight
    beta(r) making E[rho^kappa] = 1 is explicit, and E[ln rho] is then
    monotone in r, so a scalar root-find recovers r.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if target_mean_log_rho >= 0:
        raise ValueError("target E[ln rho] must be negative")

    def q_of(r: float) -> float:
        # q = P(rho = r) making E[rho^kappa] = 1; equals 1/(r^kappa + 1)
        rk = r**kappa
        return (1.0 - rk ** -1) / (rk - rk ** -1) if r > 1 else 0.5

    def mlr(r: float) -> float:
        return (2.0 * q_of(r) - 1.0) * math.log(r)

    # mlr(1+) -> 0- and decreases in r; bracket then solve
    lo, hi = 1.0 + 1e-9, 2.0
    while mlr(hi) > target_mean_log_rho:
        hi *= 2.0
        if hi > r_max:
            raise PreconditionError("requested mean log rho unreachable in the symmetric family")
    r = brentq(lambda x: mlr(x) - target_mean_log_rho, lo, hi, xtol=1e-13, rtol=8.9e-16)
    q = q_of(r)
    # omega = 1/(1+rho): rho = 1/r <-> omega = r/(1+r), carrying weight 1 - q
    return TwoPoint(p_hi=r / (1.0 + r), p_lo=1.0 / (1.0 + r), beta=1.0 - q)
