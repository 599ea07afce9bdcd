"""Environment distributions, sampling, assumption checks, and the kappa solve.

An environment is an i.i.d. vector of site transition probabilities
omega_i in (0,1) on a window [-left, right].  The odds ratio
rho_i = (1 - omega_i)/omega_i drives everything downstream: the walk drifts
right when E[ln rho] < 0, and the unique kappa > 0 with E[rho^kappa] = 1
separates the ballistic (kappa > 1) from the sub-ballistic regime.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from scipy import integrate, special

from .errors import PreconditionError, QuadratureError

WEIGHT_TOL = 1e-12
LATTICE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoPoint:
    """omega_0 = p_hi with probability beta, else p_lo."""
    p_hi: float
    p_lo: float
    beta: float

    def __post_init__(self):
        for p in (self.p_hi, self.p_lo):
            if not 0.0 < p < 1.0:
                raise ValueError(f"support point {p} must lie strictly inside (0,1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0,1]")


@dataclass(frozen=True)
class BetaLike:
    """Continuous density on (0,1) proportional to w^(a-1) (1-w)^(b-1)."""
    shape_a: float
    shape_b: float

    def __post_init__(self):
        if self.shape_a <= 0 or self.shape_b <= 0:
            raise ValueError("shape parameters must be positive")


@dataclass(frozen=True)
class Discrete:
    """Finite support {values} with the given probability weights."""
    values: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.values) != len(self.weights) or not self.values:
            raise ValueError("values and weights must be nonempty and equal-length")
        for v in self.values:
            if not 0.0 < v < 1.0:
                raise ValueError(f"support point {v} must lie strictly inside (0,1)")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must sum to 1 within 1e-12")


EnvDistribution = Union[TwoPoint, BetaLike, Discrete]


def atoms(dist: EnvDistribution) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """(support, weights) for finitely supported distributions, None for BetaLike."""
    if isinstance(dist, TwoPoint):
        return np.array([dist.p_hi, dist.p_lo]), np.array([dist.beta, 1.0 - dist.beta])
    if isinstance(dist, Discrete):
        return np.array(dist.values), np.array(dist.weights)
    return None


def dist_to_dict(dist: EnvDistribution) -> dict:
    if isinstance(dist, TwoPoint):
        return {"type": "two_point", "p_hi": dist.p_hi, "p_lo": dist.p_lo, "beta": dist.beta}
    if isinstance(dist, BetaLike):
        return {"type": "beta_like", "shape_a": dist.shape_a, "shape_b": dist.shape_b}
    if isinstance(dist, Discrete):
        return {"type": "discrete", "values": list(dist.values), "weights": list(dist.weights)}
    raise TypeError(f"unknown distribution {dist!r}")


def dist_from_dict(d: dict) -> EnvDistribution:
    kind = d.get("type")
    if kind == "two_point":
        return TwoPoint(d["p_hi"], d["p_lo"], d["beta"])
    if kind == "beta_like":
        return BetaLike(d["shape_a"], d["shape_b"])
    if kind == "discrete":
        return Discrete(tuple(d["values"]), tuple(d["weights"]))
    raise ValueError(f"unknown distribution type {kind!r}")


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    """A realized vector of site probabilities on the window [-left, right].

    reflected_at = n marks the confinement modification: omega_0 = 1 and
    omega_n = 0 exactly, so the walk is forced right at 0 and left at n.
    """
    omega: np.ndarray
    left: int
    right: int
    spec: Optional[EnvDistribution] = None
    seed: Optional[int] = None
    reflected_at: Optional[int] = None

    def __post_init__(self):
        if self.left < 0 or self.right < 1:
            raise ValueError("window must satisfy left >= 0 and right >= 1")
        om = np.asarray(self.omega, dtype=np.float64)
        if om.shape != (self.left + self.right + 1,):
            raise ValueError("omega length must match the window")
        interior = np.ones(len(om), dtype=bool)
        if self.reflected_at is not None:
            n = self.reflected_at
            if not (0 <= n <= self.right):
                raise ValueError("reflected_at must lie inside the window")
            if om[self.left] != 1.0 or om[self.left + n] != 0.0:
                raise ValueError("reflection sites must hold omega_0 = 1 and omega_n = 0 exactly")
            interior[self.left] = False
            interior[self.left + n] = False
        if not np.all((om[interior] > 0.0) & (om[interior] < 1.0)):
            raise ValueError("site probabilities must lie strictly inside (0,1)")
        om.flags.writeable = False
        object.__setattr__(self, "omega", om)

    def omega_at(self, i: int) -> float:
        if not -self.left <= i <= self.right:
            raise IndexError(f"site {i} outside window [{-self.left}, {self.right}]")
        return float(self.omega[i + self.left])

    def omega_slice(self, lo: int, hi: int) -> np.ndarray:
        """omega values for sites lo..hi inclusive."""
        if lo < -self.left or hi > self.right:
            raise IndexError(f"sites [{lo}, {hi}] outside window [{-self.left}, {self.right}]")
        return self.omega[lo + self.left: hi + self.left + 1]

    def rho_slice(self, lo: int, hi: int) -> np.ndarray:
        om = self.omega_slice(lo, hi)
        return (1.0 - om) / om


def rho(omega_i: float) -> float:
    """Odds ratio (1 - omega)/omega of a single site probability."""
    if not 0.0 < omega_i < 1.0:
        raise ValueError(f"omega must lie strictly inside (0,1), got {omega_i}")
    return (1.0 - omega_i) / omega_i


def _generator(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_environment(dist: EnvDistribution, left: int, right: int, seed: int) -> Environment:
    """Draw omega_i i.i.d. from dist on [-left, right]; pure in (dist, window, seed)."""
    if right < 1:
        raise ValueError("right must be >= 1")
    if left < 0:
        raise ValueError("left must be >= 0")
    size = left + right + 1
    rng = _generator(seed)
    if isinstance(dist, TwoPoint):
        om = np.where(rng.random(size) < dist.beta, dist.p_hi, dist.p_lo)
    elif isinstance(dist, Discrete):
        idx = rng.choice(len(dist.values), size=size, p=np.array(dist.weights) / sum(dist.weights))
        om = np.array(dist.values)[idx]
    elif isinstance(dist, BetaLike):
        om = rng.beta(dist.shape_a, dist.shape_b, size=size)
        # Exact endpoints have probability zero but can appear in float; redraw them.
        bad = (om <= 0.0) | (om >= 1.0)
        while np.any(bad):
            om[bad] = rng.beta(dist.shape_a, dist.shape_b, size=int(bad.sum()))
            bad = (om <= 0.0) | (om >= 1.0)
    else:
        raise TypeError(f"unknown distribution {dist!r}")
    return Environment(om, left, right, spec=dist, seed=int(seed))


def reflect(env: Environment, n: int) -> Environment:
    """Copy of env confined to [0, n]: omega_0 = 1, omega_n = 0."""
    if n < 1 or n > env.right or env.left < 0:
        raise ValueError(f"window [{-env.left}, {env.right}] does not cover [0, {n}]")
    if env.reflected_at is not None and env.reflected_at != n:
        raise ValueError("environment already reflected at a different site")
    om = np.array(env.omega)
    om[env.left] = 1.0
    om[env.left + n] = 0.0
    return Environment(om, env.left, env.right, spec=env.spec, seed=env.seed, reflected_at=n)


# ---------------------------------------------------------------------------
# Moments of rho and kappa
# ---------------------------------------------------------------------------

def _beta_quad(fn, dist: BetaLike, tol: float = 1e-12) -> float:
    """Adaptive quadrature of fn(w) * beta-density over (0,1).

    The integrands blow up at the endpoints (rho and ln rho do), so let
    QUADPACK's extrapolating subdivider see the raw integrand on (0,1).
    """
    a, b = dist.shape_a, dist.shape_b
    log_norm = special.betaln(a, b)

    def integrand(w):
        return fn(w) * math.exp((a - 1.0) * math.log(w) + (b - 1.0) * math.log1p(-w) - log_norm)

    value, err = integrate.quad(integrand, 0.0, 1.0, epsabs=tol, epsrel=1e-12, limit=400)
    if not math.isfinite(value) or err > 1e-8:
        raise QuadratureError(f"quadrature failed: value={value}, err={err}")
    return value


def mean_log_rho(dist: EnvDistribution) -> float:
    """E[ln rho_0]; exact finite sum for atoms, quadrature for BetaLike."""
    at = atoms(dist)
    if at is not None:
        vals, wts = at
        return float(np.sum(wts * np.log((1.0 - vals) / vals)))
    return _beta_quad(lambda w: math.log1p(-w) - math.log(w), dist)


def moment_rho(dist: EnvDistribution, s: float) -> float:
    """E[rho_0^s] for s >= 0, with +inf when the integral diverges."""
    if s < 0:
        raise ValueError("s must be >= 0")
    if s == 0:
        return 1.0
    at = atoms(dist)
    if at is not None:
        vals, wts = at
        lr = np.log((1.0 - vals) / vals)
        # log-domain sum keeps large s from overflowing prematurely
        terms = np.log(wts, out=np.full(len(wts), -np.inf), where=wts > 0) + s * lr
        m = np.max(terms)
        if m > 700.0:
            return math.inf
        return float(np.sum(np.exp(terms)))
    # rho^s = w^{-s} (1-w)^{s}: the integrand near 0 behaves like w^{a-s-1},
    # so the moment diverges exactly when s >= shape_a.
    if s >= dist.shape_a:
        return math.inf
    return _beta_quad(lambda w: math.exp(s * (math.log1p(-w) - math.log(w))), dist)


def prob_rho_above_one(dist: EnvDistribution) -> float:
    """P(rho_0 > 1) = P(omega_0 < 1/2)."""
    at = atoms(dist)
    if at is not None:
        vals, wts = at
        return float(np.sum(wts[vals < 0.5]))
    return float(special.betainc(dist.shape_a, dist.shape_b, 0.5))


def solve_kappa(dist: EnvDistribution, tol: float = 1e-12) -> float:
    """The unique kappa > 0 with E[rho^kappa] = 1.

    s -> E[rho^s] is log-convex, equals 1 at s = 0, and has negative initial
    slope under E[ln rho] < 0, so it dips below 1 and recrosses exactly once
    provided rho > 1 has positive probability.  Bracketing by doubling and
    bisection is therefore robust; derivative-based methods are not.
    """
    if mean_log_rho(dist) >= 0:
        raise PreconditionError("no kappa: requires E[ln rho] < 0")
    if prob_rho_above_one(dist) <= 0.0:
        raise PreconditionError("no kappa: rho <= 1 almost surely, E[rho^s] never recrosses 1")
    s_hi = 1.0
    for _ in range(80):
        m = moment_rho(dist, s_hi)
        if m > 1.0:
            break
        s_hi *= 2.0
    else:
        raise PreconditionError("no kappa: E[rho^s] stays below 1 on the searchable range")
    s_lo = 0.0
    # bisection: moment(s_lo) <= 1 < moment(s_hi) (inf counts as > 1)
    for _ in range(200):
        mid = 0.5 * (s_lo + s_hi)
        m = moment_rho(dist, mid)
        if m > 1.0:
            s_hi = mid
        else:
            s_lo = mid
        if s_hi - s_lo < 1e-15 * max(1.0, s_hi):
            break
    kappa = 0.5 * (s_lo + s_hi)
    resid = moment_rho(dist, kappa)
    if not math.isfinite(resid) or abs(resid - 1.0) > max(tol, 1e-9):
        raise PreconditionError(f"kappa bracket did not converge: E[rho^{kappa}] = {resid}")
    return kappa


def annealed_et1(dist: EnvDistribution) -> float:
    """Annealed mean first passage to site 1: (1 + E rho)/(1 - E rho), inf if E rho >= 1."""
    m1 = moment_rho(dist, 1.0)
    if m1 >= 1.0:
        return math.inf
    return (1.0 + m1) / (1.0 - m1)


# ---------------------------------------------------------------------------
# Assumption report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    mean_log_rho: float
    kappa: Optional[float]
    kappa_moment_check: Optional[float]  # E[rho^kappa ln+ rho], finite under the moment assumption
    lattice_flag: str                    # "lattice" | "non_lattice" | "unknown"
    ballistic: bool

    def __post_init__(self):
        if self.kappa is not None and not self.mean_log_rho < 0:
            raise ValueError("kappa can only exist when E[ln rho] < 0")
        if self.ballistic != (self.kappa is not None and self.kappa > 1.0):
            raise ValueError("ballistic flag must equal kappa > 1")


def _lattice_flag(dist: EnvDistribution) -> str:
    """Exact-rational test on ln rho differences for finitely supported laws.

    ln rho is lattice iff all support values lie on some x + y*Z; equivalently
    all pairwise differences are rational multiples of one another (tested via
    continued-fraction approximation at 1e-9).
    """
    at = atoms(dist)
    if at is None:
        return "unknown"
    vals, wts = at
    lr = sorted(set(float(np.log((1 - v) / v)) for v, w in zip(vals, wts) if w > 0))
    if len(lr) <= 1:
        return "lattice"
    diffs = [x - lr[0] for x in lr[1:]]
    base = diffs[0]
    for d in diffs[1:]:
        ratio = d / base
        frac = Fraction(ratio).limit_denominator(10**6)
        if abs(ratio - float(frac)) > LATTICE_TOL:
            return "non_lattice"
    return "lattice"


def assumption_report(dist: EnvDistribution, tol: float = 1e-12) -> AssumptionReport:
    mlr = mean_log_rho(dist)
    kappa = None
    moment_check = None
    if mlr < 0 and prob_rho_above_one(dist) > 0:
        try:
            kappa = solve_kappa(dist, tol)
        except PreconditionError:
            kappa = None
    if kappa is not None:
        at = atoms(dist)
        if at is not None:
            vals, wts = at
            r = (1.0 - vals) / vals
            moment_check = float(np.sum(wts * r**kappa * np.maximum(np.log(r), 0.0)))
        else:
            k = kappa
            moment_check = _beta_quad(
                lambda w: math.exp(k * (math.log1p(-w) - math.log(w)))
                * max(math.log1p(-w) - math.log(w), 0.0),
                dist,
            )
    return AssumptionReport(
        mean_log_rho=mlr,
        kappa=kappa,
        kappa_moment_check=moment_check,
        lattice_flag=_lattice_flag(dist),
        ballistic=kappa is not None and kappa > 1.0,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def env_to_json(env: Environment) -> str:
    """Serialize with 17-significant-digit probabilities (round-trip exact)."""
    omega_json = "[" + ", ".join(_fmt17(x) for x in env.omega) + "]"
    head = {
        "spec": dist_to_dict(env.spec) if env.spec is not None else None,
        "seed": env.seed,
        "left": env.left,
        "right": env.right,
        "reflected_at": env.reflected_at,
    }
    body = json.dumps(head)
    return body[:-1] + ', "omega": ' + omega_json + "}"


def env_from_json(text: str) -> Environment:
    d = json.loads(text)
    spec = dist_from_dict(d["spec"]) if d.get("spec") else None
    return Environment(
        omega=np.array(d["omega"], dtype=np.float64),
        left=int(d["left"]),
        right=int(d["right"]),
        spec=spec,
        seed=d.get("seed"),
        reflected_at=d.get("reflected_at"),
    )


def save_environment(env: Environment, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(env_to_json(env))
        fh.write("\n")


def load_environment(path) -> Environment:
    with open(path, "r", encoding="utf-8") as fh:
        return env_from_json(fh.read())
