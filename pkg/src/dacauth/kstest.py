"""Empirical distribution functions and the Kolmogorov-Smirnov test.

The two-sample statistic is computed exactly as the supremum of the EDF
difference over the merged sample points (evaluated right of every jump,
which is where the sup of two step functions is attained, ties included).
P-values use the asymptotic Kolmogorov survival function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

ArrayLike = Union[Sequence[float], np.ndarray]

# Terms below this size no longer move the Kolmogorov series sum.
_SERIES_TOL = 1e-12


@dataclass(frozen=True)
class Edf:
    """Empirical distribution function of a finite sample.

    sorted_samples are ascending; n is the sample count.
    """

    sorted_samples: np.ndarray
    n: int

    @classmethod
    def from_samples(cls, values: ArrayLike) -> "Edf":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            arr = arr.ravel()
        if arr.size == 0:
            raise ValueError("EDF requires at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("EDF samples must be finite")
        return cls(sorted_samples=np.sort(arr), n=int(arr.size))


@dataclass(frozen=True)
class KsResult:
    """K-S statistic and p-value, with the sample sizes that produced them."""

    statistic: float
    p_value: float
    n: int
    m: int


def _as_edf(x: Union[Edf, ArrayLike]) -> Edf:
    return x if isinstance(x, Edf) else Edf.from_samples(x)


def edf_eval(e: Union[Edf, ArrayLike], x: float) -> float:
    """Fraction of samples <= x (right-continuous step function)."""
    e = _as_edf(e)
    return float(np.searchsorted(e.sorted_samples, x, side="right")) / e.n


def kolmogorov_sf(lam: float) -> float:
    """Survival function Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2).

    Series truncated once a term drops below 1e-12; result clamped to [0, 1].
    Q(0) is taken as 1 (the series itself does not converge there).
    """
    if lam <= 0.0:
        return 1.0
    total = 0.0
    sign = 1.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < _SERIES_TOL:
            break
        sign = -sign
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a: Union[Edf, ArrayLike], b: Union[Edf, ArrayLike]) -> KsResult:
    """Exact two-sample K-S statistic with asymptotic p-value.

    The statistic is sup_x |F_a(x) - F_b(x)|, found by evaluating both EDFs
    just after every jump point of either sample (side='right' consumes all
    tied values at once, which is what makes the sup exact under ties).
    A statistic of exactly 0 maps to a p-value of exactly 1.
    """
    a = _as_edf(a)
    b = _as_edf(b)
    points = np.concatenate([a.sorted_samples, b.sorted_samples])
    fa = np.searchsorted(a.sorted_samples, points, side="right") / a.n
    fb = np.searchsorted(b.sorted_samples, points, side="right") / b.n
    d = float(np.max(np.abs(fa - fb)))
    if d == 0.0:
        return KsResult(statistic=0.0, p_value=1.0, n=a.n, m=b.n)
    lam = d * math.sqrt(a.n * b.n / (a.n + b.n))
    return KsResult(statistic=d, p_value=kolmogorov_sf(lam), n=a.n, m=b.n)


def ks_one_sample(e: Union[Edf, ArrayLike], cdf: Callable[[float], float]) -> KsResult:
    """Exact one-sample K-S statistic against a reference CDF.

    Evaluates the EDF from both sides of every distinct sample point, so the
    sup is exact for step-vs-continuous comparisons. Raises ValueError if the
    CDF is non-monotone or out of [0, 1] at the evaluated points.
    """
    e = _as_edf(e)
    values, counts = np.unique(e.sorted_samples, return_counts=True)
    cum_right = np.cumsum(counts) / e.n
    cum_left = cum_right - counts / e.n
    f = np.array([float(cdf(float(v))) for v in values])
    if np.any(f < 0.0) or np.any(f > 1.0) or np.any(np.diff(f) < 0.0):
        raise ValueError("reference cdf must be nondecreasing with values in [0, 1]")
    d = float(max(np.max(f - cum_left), np.max(cum_right - f), 0.0))
    if d == 0.0:
        return KsResult(statistic=0.0, p_value=1.0, n=e.n, m=0)
    lam = math.sqrt(e.n) * d
    return KsResult(statistic=d, p_value=kolmogorov_sf(lam), n=e.n, m=0)


def critical_value(alpha: float, n: int, m: int) -> float:
    """Rejection threshold c(alpha) * sqrt((n + m) / (n m)) for the two-sample test."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if n < 1 or m < 1:
        raise ValueError("sample sizes must be >= 1")
    c = math.sqrt(-0.5 * math.log(alpha))
    return c * math.sqrt((n + m) / (n * m))


def reject(d: float, alpha: float, n: int, m: int) -> bool:
    """True when a statistic d rejects the same-distribution hypothesis at level alpha."""
    return d > critical_value(alpha, n, m)
