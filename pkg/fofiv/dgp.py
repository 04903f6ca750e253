# fofiv/dgp.py
"""
Linear-in-means data-generating process

    y = alpha*iota + beta*G y + gamma*x + delta*G x + eps

with a direct factorized solver and an independent Neumann-series solver.
"""
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from fofiv.config import DENSE_CAP, CovariateSpec, ModelParams, StabilityFlag
from fofiv.errors import DivergenceError, NonConvergenceError, ParameterError, SolveError
from fofiv.graph import NetworkOperator, largest_eigenvalue

NEAR_BOUNDARY = 0.9
PIVOT_TOL = 1e-12
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SimulatedSample:
    x: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    stability_flag: StabilityFlag
    gx: Optional[np.ndarray] = None
    gy: Optional[np.ndarray] = None
    g2x: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    def to_frame(self) -> pd.DataFrame:
        """Debug view with the column order i, x, eps, y, gx, gy, g2x."""
        nan = np.full(self.n, np.nan)
        return pd.DataFrame({
            "i": np.arange(self.n),
            "x": self.x,
            "eps": self.eps,
            "y": self.y,
            "gx": nan if self.gx is None else self.gx,
            "gy": nan if self.gy is None else self.gy,
            "g2x": nan if self.g2x is None else self.g2x,
        })


@dataclass(frozen=True)
class NeumannResult:
    y: np.ndarray
    terms: int  # K: highest power of beta*G included


# --- 1. Draws ---

def sample_covariates(n: int, spec: CovariateSpec, rng: np.random.Generator) -> np.ndarray:
    """X_i = B_i * exp(mu + sigma Z_i), B_i ~ Bernoulli(1 - zero_mass)."""
    gate = rng.random(n) < (1.0 - spec.zero_mass)
    z = rng.standard_normal(n)
    x = np.where(gate, np.exp(spec.lognormal_mu + spec.lognormal_sigma * z), 0.0)
    if spec.demean:
        x = x - x.mean()
    return x


def sample_errors(n: int, sigma_eps: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_eps < 0:
        raise ParameterError(f"sigma_eps must be nonnegative, got {sigma_eps}")
    return sigma_eps * rng.standard_normal(n)


# --- 2. Stability ---

def stability_flag(op: NetworkOperator, beta: float, lambda1: Optional[float] = None) -> StabilityFlag:
    lam = largest_eigenvalue(op) if lambda1 is None else lambda1
    r = abs(beta) * lam
    if r >= 1.0:
        return StabilityFlag.UNSTABLE
    if r >= NEAR_BOUNDARY:
        return StabilityFlag.NEAR_BOUNDARY
    return StabilityFlag.STABLE


def structural_rhs(op: NetworkOperator, params: ModelParams, x: np.ndarray, eps: np.ndarray,
                   gx: Optional[np.ndarray] = None) -> np.ndarray:
    gx = op.apply(x) if gx is None else gx
    return params.alpha + params.gamma * x + params.delta * gx + eps


# --- 3. Direct solver ---

class OutcomeSolver:
    """
    Factorization of (I - beta G), built once and reused across replications.

    Dense LU with partial pivoting up to the dense cap, sparse LU above it.
    """

    def __init__(self, op: NetworkOperator, beta: float, dense_cap: int = DENSE_CAP,
                 lambda1: Optional[float] = None, cell: Optional[Dict[str, Any]] = None):
        self.op = op
        self.beta = beta
        self.cell = dict(cell or {})
        self.lambda1 = largest_eigenvalue(op) if lambda1 is None else lambda1
        self.flag = stability_flag(op, beta, self.lambda1)
        n = op.n
        system = sp.identity(n, format="csc") - beta * op.matrix.tocsc()
        self._scale = float(abs(system).max()) if n else 1.0
        if n <= dense_cap:
            self._lu = scipy.linalg.lu_factor(system.toarray(), check_finite=False)
            pivots = np.abs(np.diag(self._lu[0]))
            self._system = None
            self._sparse = None
        else:
            self._lu = None
            self._system = system
            self._sparse = scipy.sparse.linalg.splu(system)
            pivots = np.abs(self._sparse.U.diagonal())
        smallest = float(pivots.min()) if n else 1.0
        if smallest < PIVOT_TOL * self._scale:
            raise SolveError(
                f"I - beta*G is singular (pivot {smallest:.3e}, beta={beta:g})",
                pivot=smallest,
                cell={**self.cell, "beta": beta, "lambda1": self.lambda1},
            )

    def __getstate__(self):
        # SuperLU handles do not pickle; refactored on load
        return {**self.__dict__, "_sparse": None}

    def __setstate__(self, state):
        self.__dict__.update(state)
        if self._system is not None:
            self._sparse = scipy.sparse.linalg.splu(self._system)

    def solve_rhs(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        return self._sparse.solve(rhs)

    def solve(self, params: ModelParams, x: np.ndarray, eps: np.ndarray,
              gx: Optional[np.ndarray] = None) -> SimulatedSample:
        gx = self.op.apply(x) if gx is None else gx
        y = self.solve_rhs(structural_rhs(self.op, params, x, eps, gx))
        gy = self.op.apply(y)
        resid = y - (params.alpha + params.beta * gy + params.gamma * x + params.delta * gx + eps)
        bound = RESIDUAL_TOL * (1.0 + np.abs(y).max(initial=0.0))
        if not np.all(np.isfinite(y)) or np.abs(resid).max(initial=0.0) > bound:
            raise SolveError(
                "fixed-point residual above tolerance; the system is numerically singular",
                cell={**self.cell, "beta": self.beta, "lambda1": self.lambda1},
            )
        return SimulatedSample(x=x, eps=eps, y=y, stability_flag=self.flag, gx=gx, gy=gy)


def solve_outcomes(op: NetworkOperator, params: ModelParams, x: np.ndarray, eps: np.ndarray,
                   dense_cap: int = DENSE_CAP) -> SimulatedSample:
    """Reduced form y = (I - beta G)^{-1}(alpha iota + gamma x + delta G x + eps)."""
    return OutcomeSolver(op, params.beta, dense_cap).solve(params, x, eps)


# --- 4. Neumann series ---

def neumann_outcomes(op: NetworkOperator, params: ModelParams, x: np.ndarray, eps: np.ndarray,
                     tol: float = 1e-10, k_max: int = 100_000,
                     lambda1: Optional[float] = None) -> NeumannResult:
    """
    Partial sum of sum_k (beta G)^k b. Stops once the remaining tail, bounded by
    ||term_K|| r / (1 - r) with r = |beta| lambda_1, is below tol.
    """
    lam = largest_eigenvalue(op) if lambda1 is None else lambda1
    r = abs(params.beta) * lam
    if r >= 1.0:
        raise DivergenceError(f"|beta| * lambda_1 = {r:.6g} >= 1; the Neumann series diverges")
    tail = max(1.0, r / (1.0 - r))
    term = structural_rhs(op, params, x, eps)
    total = term.copy()
    k = 0
    while True:
        term = params.beta * op.apply(term)
        if np.linalg.norm(term) * tail <= tol:
            break
        total += term
        k += 1
        if k > k_max:
            raise NonConvergenceError(f"Neumann series not converged after {k_max} terms")
    return NeumannResult(y=total, terms=k)


# --- 5. Instruments ---

def build_instruments(op: NetworkOperator, sample: SimulatedSample) -> SimulatedSample:
    """Fill gx = Gx, gy = Gy and g2x = G2 x under the operator's scaling."""
    return replace(
        sample,
        gx=op.apply(sample.x),
        gy=op.apply(sample.y),
        g2x=op.square_offdiag @ sample.x,
    )
