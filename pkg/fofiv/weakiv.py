# fofiv/weakiv.py
"""
Anderson-Rubin tests and confidence sets for the scalar endogenous effect.

With g(b) = xi_hat - b pi_hat and Omega(b) = V_xi - 2 b Cov + b^2 V_pi at
asymptotic scale (n times the coefficient-scale block),

    AR(b) = n g(b)^2 / Omega(b)  ~  chi2(1)  under H0: beta = b.

A value b whose Omega(b) is not positive (see estimate.OMEGA_RTOL) cannot be
tested; it is marked invalid and never rejected, so it always belongs to the
confidence set.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from fofiv.estimate import OMEGA_RTOL, IvFit, Which

Span = Tuple[float, float]


def chi2_critical(alpha: float, df: int = 1) -> float:
    return float(stats.chi2.ppf(1.0 - alpha, df))


def omega_at(beta0: float, v_xi: float, v_pi: float, cov_xipi: float) -> float:
    return v_xi - 2.0 * beta0 * cov_xipi + beta0 ** 2 * v_pi


# --- 1. Point tests ---

@dataclass(frozen=True)
class ArResult:
    beta0: float
    statistic: float
    p_value: float
    reject: bool
    omega: float
    valid: bool = True


def _asymptotic_block(fit: IvFit, which: Which) -> Tuple[float, float, float]:
    b = fit.vcov(which)
    return fit.n * b.v_xi, fit.n * b.v_pi, fit.n * b.cov


def ar_test(beta0: float, fit: IvFit, which: Which = "homo", alpha: float = 0.05) -> ArResult:
    v_xi, v_pi, cov = _asymptotic_block(fit, which)
    omega = omega_at(beta0, v_xi, v_pi, cov)
    if not omega > OMEGA_RTOL * (abs(v_xi) + beta0 ** 2 * abs(v_pi)):
        return ArResult(beta0, math.nan, 1.0, False, omega, valid=False)
    g = fit.xi_hat - beta0 * fit.pi_hat
    stat = fit.n * g * g / omega
    return ArResult(
        beta0=beta0,
        statistic=stat,
        p_value=float(stats.chi2.sf(stat, 1)),
        reject=bool(stat > chi2_critical(alpha)),
        omega=omega,
    )


def ar_statistics(fit: IvFit, which: Which, betas: np.ndarray) -> np.ndarray:
    """Vectorized AR(b); nan where b cannot be tested."""
    v_xi, v_pi, cov = _asymptotic_block(fit, which)
    betas = np.asarray(betas, dtype=float)
    omega = omega_at(betas, v_xi, v_pi, cov)
    g = fit.xi_hat - betas * fit.pi_hat
    out = np.full(betas.shape, np.nan)
    ok = omega > OMEGA_RTOL * (abs(v_xi) + betas ** 2 * abs(v_pi))
    out[ok] = fit.n * g[ok] ** 2 / omega[ok]
    return out


# --- 2. Confidence sets ---

class SetKind(str, Enum):
    EMPTY = "empty"
    BOUNDED = "bounded"
    TWO_RAYS = "two_rays"
    WHOLE_LINE = "whole_line"
    LEFT_RAY = "left_ray"     # (-inf, hi]
    RIGHT_RAY = "right_ray"   # [lo, inf)
    UNION = "union"           # several pieces, only when Omega turns negative


@dataclass(frozen=True)
class ConfidenceSet:
    """Closed, sorted, disjoint spans; endpoints may be infinite."""

    spans: Tuple[Span, ...]
    level: float

    @property
    def kind(self) -> SetKind:
        s = self.spans
        if not s:
            return SetKind.EMPTY
        if len(s) == 1:
            lo, hi = s[0]
            if math.isinf(lo) and math.isinf(hi):
                return SetKind.WHOLE_LINE
            if math.isinf(lo):
                return SetKind.LEFT_RAY
            if math.isinf(hi):
                return SetKind.RIGHT_RAY
            return SetKind.BOUNDED
        if len(s) == 2 and math.isinf(s[0][0]) and math.isinf(s[1][1]):
            return SetKind.TWO_RAYS
        return SetKind.UNION

    def contains(self, beta0: float) -> bool:
        return any(lo <= beta0 <= hi for lo, hi in self.spans)

    @property
    def is_infinite(self) -> bool:
        return any(math.isinf(lo) or math.isinf(hi) for lo, hi in self.spans)

    @property
    def length(self) -> float:
        return math.inf if self.is_infinite else float(sum(hi - lo for lo, hi in self.spans))


def _sublevel(a: float, b: float, c: float) -> List[Span]:
    """{t : a t^2 + b t + c <= 0} as sorted spans."""
    if a == 0.0:
        if b == 0.0:
            return [(-math.inf, math.inf)] if c <= 0 else []
        root = -c / b
        return [(-math.inf, root)] if b > 0 else [(root, math.inf)]
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return [] if a > 0 else [(-math.inf, math.inf)]
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    if q == 0.0:
        r1 = r2 = 0.0
    else:
        r1, r2 = sorted((q / a, c / q))
    if a > 0:
        return [(r1, r2)]
    return [(-math.inf, r1), (r2, math.inf)]


def _union(pieces: Sequence[Span]) -> Tuple[Span, ...]:
    merged: List[List[float]] = []
    for lo, hi in sorted(pieces):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


def ar_confidence_set_closed_form(fit: IvFit, which: Which = "homo", alpha: float = 0.05) -> ConfidenceSet:
    """
    Invert the AR test: A b^2 + B b + C <= 0 with

        A = n pi^2 - c V_pi,  B = -2 n xi pi + 2 c Cov,  C = n xi^2 - c V_xi,

    united with the untestable region where Omega(b) is not positive.
    """
    v_xi, v_pi, cov = _asymptotic_block(fit, which)
    c = chi2_critical(alpha)
    n, xi, pi = fit.n, fit.xi_hat, fit.pi_hat
    accepted = _sublevel(n * pi * pi - c * v_pi, -2.0 * n * xi * pi + 2.0 * c * cov, n * xi * xi - c * v_xi)
    untestable = _sublevel(v_pi - OMEGA_RTOL * abs(v_pi), -2.0 * cov, v_xi - OMEGA_RTOL * abs(v_xi))
    return ConfidenceSet(spans=_union(accepted + untestable), level=1.0 - alpha)


def beta_grid(lo: float = -10.0, hi: float = 10.0, points: int = 10_000) -> np.ndarray:
    return np.linspace(lo, hi, points)


def grid_confidence_set(fit: IvFit, which: Which = "homo", alpha: float = 0.05,
                        grid: Optional[np.ndarray] = None) -> np.ndarray:
    """Grid points the AR test does not reject."""
    grid = beta_grid() if grid is None else np.asarray(grid, dtype=float)
    ar = ar_statistics(fit, which, grid)
    keep = np.isnan(ar) | (ar <= chi2_critical(alpha))
    return grid[keep]


def ci_summary(cs: ConfidenceSet) -> Tuple[float, bool]:
    """(length, is_infinite); an empty set has length 0."""
    return cs.length, cs.is_infinite


# --- 3. Null distribution ---

@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    draws: int = field(default=0)

    def passes(self, level: float = 0.01) -> bool:
        return self.p_value >= level


def ar_null_ks(statistics: np.ndarray) -> KsResult:
    """Kolmogorov-Smirnov test of AR draws against chi2(1); invalid draws are dropped."""
    x = np.asarray(statistics, dtype=float)
    x = x[np.isfinite(x)]
    res = stats.kstest(x, "chi2", args=(1,))
    return KsResult(statistic=float(res.statistic), p_value=float(res.pvalue), draws=int(x.size))
