# fofiv/theory.py
"""
Theoretical first-stage objects evaluated on concrete graphs.

Conditional on G and for mean-zero X with variance sigma_x^2,

    (1/n) Cov(G2 X, G Y) = (sigma_x^2 / n) Tr(G2 (gamma I + delta G) G (I - beta G)^{-1})
    (1/n) Var(G2 X)      = (sigma_x^2 / n) ||G2||_F^2

and the spectral form of the covariance splits into sum_j lambda_j^3 (gamma + delta lambda_j)
/ (1 - beta lambda_j) minus a diagonal remainder from D = diag(G^2).
"""
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from fofiv.config import DEFAULT_SEED, DENSE_CAP, ModelParams, Regime, rng_for
from fofiv.errors import (
    DegenerateInstrumentError,
    ParameterError,
    SingularBoundaryError,
    SolveError,
)
from fofiv.graph import (
    NetworkOperator,
    frobenius_sq,
    full_spectrum,
    largest_eigenvalue,
    sample_er,
    scale_weight,
)

BOUNDARY_TOL = 1e-10
AMPLIFICATION_FLAG = 10.0
_BATCH = 256


# --- 1. Covariance / variance ratio ---

def _resolvent_trace(op: NetworkOperator, beta: float, left: sp.csr_matrix,
                     dense_cap: int = DENSE_CAP) -> float:
    """Tr(left @ S) with S = (I - beta G)^{-1} G, solved column batch by column batch."""
    n = op.n
    g = op.matrix.tocsc()
    system = (sp.identity(n, format="csc") - beta * g).tocsc()
    if n <= dense_cap:
        lu = scipy.linalg.lu_factor(system.toarray(), check_finite=False)
        if np.abs(np.diag(lu[0])).min(initial=1.0) < 1e-12 * max(1.0, abs(system).max()):
            raise SolveError(f"I - beta*G is singular (beta={beta:g})")
        s = scipy.linalg.lu_solve(lu, g.toarray(), check_finite=False)
        return float(left.multiply(s.T).sum())
    try:
        lu = scipy.sparse.linalg.splu(system)
    except RuntimeError as e:
        raise SolveError(f"I - beta*G is singular (beta={beta:g})") from e
    left = left.tocsr()
    total = 0.0
    for start in range(0, n, _BATCH):
        cols = np.arange(start, min(start + _BATCH, n))
        s = lu.solve(g[:, cols].toarray())
        # diagonal entries j in cols of left @ s
        total += float(np.einsum("ij,ji->", left[cols, :].toarray(), s))
    return total


def _covariance_left(op: NetworkOperator, params: ModelParams) -> sp.csr_matrix:
    g2 = op.square_offdiag.matrix
    return (params.gamma * g2 + params.delta * (g2 @ op.matrix)).tocsr()


def conditional_cov(op: NetworkOperator, params: ModelParams, sigma_x: float = 1.0,
                    dense_cap: int = DENSE_CAP) -> float:
    """(1/n) Cov(G2 X, G Y | G)."""
    if op.n == 0:
        raise ParameterError("empty operator")
    trace = _resolvent_trace(op, params.beta, _covariance_left(op, params), dense_cap)
    return sigma_x ** 2 * trace / op.n


def conditional_var(op: NetworkOperator, sigma_x: float = 1.0) -> float:
    """(1/n) Var(G2 X | G)."""
    return sigma_x ** 2 * frobenius_sq(op.square_offdiag) / op.n


def conditional_varnorm_cov(op: NetworkOperator, params: ModelParams, sigma_x: float = 1.0,
                            dense_cap: int = DENSE_CAP) -> float:
    var = conditional_var(op, sigma_x)
    if var == 0.0:
        raise DegenerateInstrumentError(
            "||G2||_F = 0: the friends-of-friends instrument has no variance and the estimand is ill-defined"
        )
    return conditional_cov(op, params, sigma_x, dense_cap) / var


@dataclass(frozen=True)
class FrobeniusSplit:
    """(1/n) Cov = leading + remainder with leading = (sigma_x^2/n)(beta gamma + delta)||G2||_F^2."""

    leading: float
    remainder: float

    @property
    def total(self) -> float:
        return self.leading + self.remainder


def covariance_frobenius_split(op: NetworkOperator, params: ModelParams, sigma_x: float = 1.0,
                               dense_cap: int = DENSE_CAP) -> FrobeniusSplit:
    total = conditional_cov(op, params, sigma_x, dense_cap)
    leading = (params.beta * params.gamma + params.delta) * conditional_var(op, sigma_x)
    return FrobeniusSplit(leading=leading, remainder=total - leading)


# --- 2. Upper bounds ---

@dataclass(frozen=True)
class BoundReport:
    n: int
    d_n: float
    w_n: float
    scaled: bool
    bound_unscaled: float
    bound_scaled: float
    constant: Optional[float] = None  # None when |beta| ||G||_2 >= 1

    @property
    def rate(self) -> float:
        return self.bound_scaled if self.scaled else self.bound_unscaled

    @property
    def bound(self) -> Optional[float]:
        return None if self.constant is None else self.constant * self.rate


def bound_constant(params: ModelParams, g_norm: float) -> Optional[float]:
    """(|gamma| + |delta|/|beta|) / (1 - |beta| ||G||_2), or None when undefined."""
    b = abs(params.beta)
    if b == 0.0 or b * g_norm >= 1.0:
        return None
    return (abs(params.gamma) + abs(params.delta) / b) / (1.0 - b * g_norm)


def upper_bound(n: int, d_n: float, w_n: float = 1.0, scaled: bool = False,
                params: Optional[ModelParams] = None, g_norm: Optional[float] = None) -> BoundReport:
    """Rate factors 1/sqrt(d + d^3/n) and w/sqrt(d + d^3/n)."""
    if not d_n > 0:
        raise ParameterError(f"d_n must be positive, got {d_n}")
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    base = 1.0 / math.sqrt(d_n + d_n ** 3 / n)
    constant = bound_constant(params, g_norm) if params is not None and g_norm is not None else None
    return BoundReport(
        n=n, d_n=d_n, w_n=w_n, scaled=scaled,
        bound_unscaled=base, bound_scaled=w_n * base, constant=constant,
    )


@dataclass(frozen=True)
class BoundCheck:
    value: float                    # conditional variance-normalized covariance
    constant: Optional[float]
    frobenius_bound: Optional[float]  # constant * ||G||_F / ||G2||_F
    rate_bound: Optional[float]       # constant * rate at the realized mean degree

    @property
    def holds(self) -> Optional[bool]:
        if self.frobenius_bound is None:
            return None
        return abs(self.value) <= self.frobenius_bound * (1.0 + 1e-9)


def check_bound(op: NetworkOperator, params: ModelParams, sigma_x: float = 1.0,
                dense_cap: int = DENSE_CAP) -> BoundCheck:
    """Per-graph comparison of the covariance ratio with its deterministic bound."""
    value = conditional_varnorm_cov(op, params, sigma_x, dense_cap)
    g_norm = largest_eigenvalue(op)
    constant = bound_constant(params, g_norm)
    if constant is None:
        return BoundCheck(value, None, None, None)
    frob = constant * math.sqrt(frobenius_sq(op) / frobenius_sq(op.square_offdiag))
    report = upper_bound(op.n, op.base.mean_degree, op.scale, op.is_scaled)
    return BoundCheck(value, constant, frob, constant * report.rate)


def bound_curve(regime: Regime, n_grid: Iterable[int], seeds: int = 500, scaled: bool = False,
                master_seed: int = DEFAULT_SEED) -> pd.DataFrame:
    """
    Mean and sd of the per-graph rate factor at the realized mean degree and w_n.

    Graphs with no edges have no defined rate and are counted as skipped.
    """
    rows = []
    for n in n_grid:
        p = regime.link_probability(n)
        values: List[float] = []
        for s in range(seeds):
            g = sample_er(n, p, rng_for(master_seed, "bounds", regime.label, n, s))
            if g.num_edges == 0:
                continue
            r = upper_bound(n, g.mean_degree, scale_weight(g), scaled)
            values.append(r.rate)
        arr = np.asarray(values)
        rows.append({
            "n": n,
            "regime": regime.label,
            "mean_bound": float(arr.mean()) if arr.size else math.nan,
            "sd_bound": float(arr.std(ddof=1)) if arr.size > 1 else math.nan,
            "scaling": "scaled" if scaled else "unscaled",
            "graphs_used": int(arr.size),
            "graphs_skipped": seeds - int(arr.size),
        })
    return pd.DataFrame(rows)


# --- 3. Spectral decomposition ---

@dataclass(frozen=True)
class SpectralCovReport:
    leading_sum: float
    remainder_exact: float
    remainder_bound: float
    boundary_count: int
    max_amplification: float

    @property
    def total(self) -> float:
        return self.leading_sum + self.remainder_exact


def _check_boundary(eigenvalues: np.ndarray, beta: float) -> None:
    hits = np.flatnonzero(np.abs(beta * eigenvalues - 1.0) < BOUNDARY_TOL)
    if hits.size:
        j = int(hits[0])
        raise SingularBoundaryError(j + 1, float(eigenvalues[j]), beta)


def _amplification(eigenvalues: np.ndarray, beta: float):
    bl = beta * eigenvalues
    count = int(np.sum(bl >= 1.0))
    below = bl[bl < 1.0]
    amp = float(np.max(1.0 / np.abs(1.0 - below))) if below.size else math.nan
    return count, amp


def spectral_cov_decomposition(op: NetworkOperator, params: ModelParams, sigma_x: float = 1.0,
                               dense_cap: int = DENSE_CAP) -> SpectralCovReport:
    """
    leading   = (s^2/n) sum_j lambda_j^3 (gamma + delta lambda_j) / (1 - beta lambda_j)
    remainder = -(s^2/n) Tr(D G (I - beta G)^{-1} (gamma I + delta G))
    bound     = (s^2/n) ||D||_F ||G||_F ||(I - beta G)^{-1}||_2 ||gamma I + delta G||_2
    """
    spec = full_spectrum(op, dense_cap)
    lam, v = spec.eigenvalues, spec.eigenvectors
    beta, gamma, delta = params.beta, params.gamma, params.delta
    _check_boundary(lam, beta)
    count, amp = _amplification(lam, beta)
    n = op.n
    if n == 0 or op.base.num_edges == 0:
        return SpectralCovReport(0.0, 0.0, 0.0, count, amp)
    scale = sigma_x ** 2 / n
    h = lam * (gamma + delta * lam) / (1.0 - beta * lam)
    leading = scale * float(np.sum(lam ** 2 * h))
    d = np.asarray((op.matrix @ op.matrix).diagonal()).ravel()
    h_diag = np.einsum("ij,j,ij->i", v, h, v)
    remainder = -scale * float(d @ h_diag)
    bound = scale * (
        float(np.linalg.norm(d))
        * float(np.linalg.norm(lam))
        * float(np.max(1.0 / np.abs(1.0 - beta * lam)))
        * float(np.max(np.abs(gamma + delta * lam)))
    )
    return SpectralCovReport(leading, remainder, bound, count, amp)


@dataclass(frozen=True, eq=False)
class BoundaryDiagnostics:
    boundary_count: int
    max_amplification: float
    sign_profile: np.ndarray  # sign of lambda^3 (gamma + delta lambda) / (1 - beta lambda) per eigenvalue

    @property
    def amplified(self) -> bool:
        return self.max_amplification > AMPLIFICATION_FLAG


def boundary_diagnostics(op: NetworkOperator, beta: float, params: Optional[ModelParams] = None,
                         dense_cap: int = DENSE_CAP) -> BoundaryDiagnostics:
    lam = full_spectrum(op, dense_cap).eigenvalues
    count, amp = _amplification(lam, beta)
    params = params or ModelParams(beta=beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = lam ** 3 * (params.gamma + params.delta * lam) / (1.0 - beta * lam)
    return BoundaryDiagnostics(count, amp, np.sign(np.nan_to_num(terms)).astype(int))


def eigenvalue_rate_ratio(op: NetworkOperator, p: float) -> float:
    """lambda_1 / max(sqrt(Delta), n p) for the unscaled adjacency; stays O(1) on G(n, p)."""
    if op.is_scaled:
        raise ParameterError("eigenvalue_rate_ratio expects the unscaled adjacency")
    ref = max(math.sqrt(op.base.max_degree), op.n * p)
    if ref == 0.0:
        return math.nan
    return largest_eigenvalue(op) / ref


def collinearity_angle(op: NetworkOperator) -> float:
    """
    Angle in degrees between G and G2 under the Frobenius inner product; 0 when
    G2 is proportional to G (complete graphs), nan when G2 = 0.
    """
    g, g2 = op.matrix, op.square_offdiag.matrix
    norm = math.sqrt(frobenius_sq(op) * frobenius_sq(op.square_offdiag))
    if norm == 0.0:
        return math.nan
    cos = float(g.multiply(g2).sum()) / norm
    if cos > 1.0 - 1e-12:
        return 0.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))
