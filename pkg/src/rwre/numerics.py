"""Small numeric helpers: compensated summation, log-domain sums, Wilson intervals.

Everything here operates on plain floats / numpy arrays.  Log-domain values
use the convention ln(0) = -inf; all quantities handled this way are
nonnegative, so no sign tracking is needed.
"""
from __future__ import annotations

import math

import numpy as np

# exp() overflows float64 just above 709.78; stay below it when exporting
# linear values from log-domain storage.
EXP_MAX = 700.0

NEG_INF = float("-inf")


def kahan_cumsum(values: np.ndarray) -> np.ndarray:
    """Compensated (Kahan) cumulative sum of a 1-d array."""
    out = np.empty(len(values))
    total = 0.0
    comp = 0.0
    for i, v in enumerate(values):
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[i] = total
    return out


def logsumexp_stream(log_terms: np.ndarray) -> float:
    """ln(sum(exp(terms))) for a 1-d array, tolerating -inf entries."""
    if len(log_terms) == 0:
        return NEG_INF
    m = np.max(log_terms)
    if m == NEG_INF:
        return NEG_INF
    return float(m + math.log(np.sum(np.exp(log_terms - m))))


def log_cumsum_exp(log_terms: np.ndarray) -> np.ndarray:
    """Running ln(sum(exp(...))) along a 1-d array."""
    return np.logaddexp.accumulate(log_terms)


def exp_or_inf(log_value: float) -> float:
    """exp(log_value), returning inf past the float64 range instead of raising."""
    if log_value == NEG_INF:
        return 0.0
    if log_value > EXP_MAX:
        return math.inf
    return math.exp(log_value)


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Behaves sensibly at the boundaries (0 or all successes), which is the
    regime tail estimates live in.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2.0 * trials)) / denom
    half = (z / denom) * math.sqrt(phat * (1.0 - phat) / trials + z2 / (4.0 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))
