"""Pearson correlation table with two-sided t-test significance stars.

Binary variables enter as 0/1 numerics (point-biserial), so one table covers
the mixed variable set. Missing data is handled by pairwise deletion; a pair
with fewer than three complete rows, or zero variance on either side, is
flagged missing rather than fabricated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ANALYSIS_VARIABLES, FeatureRow, feature_matrix

STAR_P05 = 0.05
STAR_P01 = 0.01

_BETA_EPS = 1e-15
_BETA_TINY = 1e-300
_BETA_MAX_ITER = 400


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz's method)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-14."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # The continued fraction converges fast only below the symmetry point.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """One-sided upper tail P(T > t) of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    x = df / (df + t * t)
    tail = 0.5 * betainc_regularized(0.5 * df, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation, clamped to [-1, 1] against rounding."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError(f"series length mismatch: {xa.shape} vs {ya.shape}")
    n = xa.size
    if n < 3:
        raise ValueError(f"need at least 3 paired values, got {n}")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined: a series has zero variance")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def significance_p(r: float, n: int) -> float:
    """Two-sided p for an observed correlation r at sample size n.

    Uses t = r*sqrt(n-2)/sqrt(1-r^2) with n-2 degrees of freedom; |r| = 1
    maps to p = 0 exactly.
    """
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    if abs(r) > 1.0 + 1e-12:
        raise ValueError(f"|r| must not exceed 1, got {r}")
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        return 0.0
    df = n - 2
    t = abs(r) * math.sqrt(df / (1.0 - r * r))
    return min(1.0, 2.0 * student_t_sf(t, df))


def stars_for_p(p: float) -> str:
    if math.isnan(p):
        return ""
    if p < STAR_P01:
        return "**"
    if p < STAR_P05:
        return "*"
    return ""


@dataclass(frozen=True)
class CorrelationTable:
    variables: tuple
    r: np.ndarray
    p: np.ndarray
    stars: np.ndarray
    n: np.ndarray
    missing: np.ndarray

    def entry(self, a: str, b: str) -> tuple[float, float, str, int]:
        i = self.variables.index(a)
        j = self.variables.index(b)
        return float(self.r[i, j]), float(self.p[i, j]), str(self.stars[i, j]), int(self.n[i, j])


def correlation_table_from_matrix(
    data: np.ndarray, variables: Sequence[str], min_n: int = 3
) -> CorrelationTable:
    """Pairwise-complete correlation matrix over the columns of ``data``.

    NaN marks missing cells. Pairs with fewer than ``min_n`` complete rows or
    with a constant series are flagged missing (NaN r, empty stars).
    """
    data = np.asarray(data, dtype=np.float64)
    k = data.shape[1]
    if k != len(variables):
        raise ValueError(f"{data.shape[1]} columns for {len(variables)} variable names")
    r = np.full((k, k), np.nan)
    p = np.full((k, k), np.nan)
    n = np.zeros((k, k), dtype=np.int64)
    missing = np.zeros((k, k), dtype=bool)
    stars = np.full((k, k), "", dtype=object)
    finite = np.isfinite(data)
    for i in range(k):
        n[i, i] = int(finite[:, i].sum())
        r[i, i] = 1.0
        p[i, i] = 0.0
        for j in range(i + 1, k):
            mask = finite[:, i] & finite[:, j]
            m = int(mask.sum())
            n[i, j] = n[j, i] = m
            if m < min_n:
                missing[i, j] = missing[j, i] = True
                continue
            xi = data[mask, i]
            yj = data[mask, j]
            if np.all(xi == xi[0]) or np.all(yj == yj[0]):
                missing[i, j] = missing[j, i] = True
                continue
            rij = pearson_r(xi, yj)
            pij = significance_p(rij, m)
            r[i, j] = r[j, i] = rij
            p[i, j] = p[j, i] = pij
            s = stars_for_p(pij)
            stars[i, j] = stars[j, i] = s
    return CorrelationTable(tuple(variables), r, p, stars, n, missing)


def correlation_table(
    rows: Sequence[FeatureRow], variables: Sequence[str] = ANALYSIS_VARIABLES
) -> CorrelationTable:
    """Correlation table over feature rows in the canonical report order."""
    return correlation_table_from_matrix(feature_matrix(rows, variables), variables)
