# fofiv/estimate.py
"""
Least-squares machinery for the network-IV system.

Both reduced-form regressions share Z = (iota, X, GX, G2X):

    first stage     GY = Z pi + eta
    reduced form     Y = Z xi + eps_tilde

and beta_hat = xi_hat / pi_hat for the coefficient on G2X. Variance blocks are
reported at coefficient scale (V_xi, V_pi, Cov_xipi) under a homoskedastic
and a network-HAC estimator.
"""
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy import stats

from fofiv.config import HacConfig, Kernel
from fofiv.errors import (
    CollinearityError,
    DegenerateInstrumentError,
    DegenerateVarianceError,
    FofivError,
    ParameterError,
)
from fofiv.graph import Network, distance_shell_matrices

Which = Literal["homo", "hac"]

# |R_kk| of the column-normalized QR below which a column counts as dependent
RANK_TOL = 1e-7
SYMMETRY_TOL = 1e-10
# Omega(b) at or below this fraction of |V_xi| + b^2 |V_pi| counts as zero
OMEGA_RTOL = 1e-10


# --- 1. Design ---

@dataclass(frozen=True, eq=False)
class Design:
    """Regression inputs for one sample; x, gx and g2x may carry d > 1 columns."""

    y: np.ndarray
    gy: np.ndarray
    x: np.ndarray
    gx: np.ndarray
    g2x: np.ndarray

    def __post_init__(self):
        n = self.y.shape[0]
        for name in ("gy", "x", "gx", "g2x"):
            if getattr(self, name).shape[0] != n:
                raise ParameterError(f"column '{name}' has length {getattr(self, name).shape[0]}, expected {n}")

    @classmethod
    def from_sample(cls, sample) -> "Design":
        if sample.gx is None or sample.gy is None or sample.g2x is None:
            raise ParameterError("sample has no instruments; call build_instruments first")
        return cls(y=sample.y, gy=sample.gy, x=sample.x, gx=sample.gx, g2x=sample.g2x)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def d(self) -> int:
        return 1 if self.x.ndim == 1 else int(self.x.shape[1])

    def _names(self, stem: str) -> List[str]:
        return [stem] if self.d == 1 else [f"{stem}{j}" for j in range(self.d)]

    @property
    def exog_names(self) -> List[str]:
        return ["const"] + self._names("x") + self._names("gx")

    @property
    def instrument_names(self) -> List[str]:
        return self._names("g2x")

    @property
    def exog(self) -> np.ndarray:
        """(iota, X, GX)"""
        return np.column_stack([np.ones(self.n), self.x, self.gx])

    @property
    def z(self) -> np.ndarray:
        """(iota, X, GX, G2X)"""
        return np.column_stack([self.exog, self.g2x])

    @property
    def z_names(self) -> List[str]:
        return self.exog_names + self.instrument_names

    @property
    def excluded(self) -> np.ndarray:
        """Indices of the G2X columns inside Z."""
        k0 = 1 + 2 * self.d
        return np.arange(k0, k0 + self.d)


# --- 2. OLS ---

@dataclass(frozen=True, eq=False)
class OlsResult:
    coef: np.ndarray        # (k,) or (k, r) for r stacked responses
    resid: np.ndarray
    fitted: np.ndarray
    xtx_inv: np.ndarray     # (Z'Z)^{-1}
    names: List[str]

    @property
    def n(self) -> int:
        return int(self.resid.shape[0])

    @property
    def k(self) -> int:
        return int(self.xtx_inv.shape[0])


def ols(columns: np.ndarray, response: np.ndarray, names: Optional[Sequence[str]] = None) -> OlsResult:
    """
    Least squares through a QR factorization of the column-normalized design.

    Raises CollinearityError naming the first column that lies in the span of
    the columns before it.
    """
    x = np.asarray(columns, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, k = x.shape
    names = list(names) if names is not None else [f"c{j}" for j in range(k)]
    norms = np.linalg.norm(x, axis=0)
    for j in np.flatnonzero(norms == 0.0):
        raise CollinearityError(names[j], f"column '{names[j]}' is identically zero")
    q, r = scipy.linalg.qr(x / norms, mode="economic")
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero(diag < RANK_TOL)
    if bad.size:
        raise CollinearityError(names[bad[0]])
    if k >= n:
        raise ParameterError(f"{k} columns need more than {n} observations")
    y = np.asarray(response, dtype=float)
    coef = scipy.linalg.solve_triangular(r, q.T @ y)
    coef = coef / (norms[:, None] if coef.ndim == 2 else norms)
    r_inv = scipy.linalg.solve_triangular(r, np.eye(k))
    xtx_inv = (r_inv @ r_inv.T) / np.outer(norms, norms)
    fitted = x @ coef
    return OlsResult(coef=coef, resid=y - fitted, fitted=fitted, xtx_inv=xtx_inv, names=names)


def tsls(design: Design) -> np.ndarray:
    """
    Projection-form 2SLS of Y on (iota, X, GX, GY) with instruments Z.

    Returns the coefficient vector; the last entry is the endogenous effect.
    """
    z = design.z
    first = ols(z, design.gy, design.z_names)
    w_hat = np.column_stack([design.exog, first.fitted])
    second = ols(w_hat, design.y, design.exog_names + ["gy_hat"])
    return second.coef


# --- 3. Variance estimators ---

@dataclass(frozen=True)
class VcovBlock:
    """Coefficient-scale variances of (xi_hat, pi_hat) for a single instrument."""

    v_xi: float
    v_pi: float
    cov: float

    def omega(self, beta0: float) -> float:
        return self.v_xi - 2.0 * beta0 * self.cov + beta0 ** 2 * self.v_pi

    def is_testable(self, beta0: float) -> bool:
        return self.omega(beta0) > OMEGA_RTOL * (abs(self.v_xi) + beta0 ** 2 * abs(self.v_pi))


def _to_block(joint: np.ndarray) -> VcovBlock:
    return VcovBlock(v_xi=float(joint[0, 0]), v_pi=float(joint[1, 1]), cov=float(joint[0, 1]))


def homoskedastic_vcov(fit: OlsResult, cols: np.ndarray) -> np.ndarray:
    """
    Joint (2q x 2q) vcov of (xi_G2X, pi_G2X) with residual moments

        s_ab = e_a' e_b / n

    multiplying the shared G2X block of (Z'Z)^{-1}. fit.resid holds the
    reduced-form residuals in column 0 and the first-stage residuals in column 1.
    """
    e = fit.resid
    s = (e.T @ e) / fit.n
    block = fit.xtx_inv[np.ix_(cols, cols)]
    return np.kron(s, block)


def kernel_weights(cfg: HacConfig) -> np.ndarray:
    """omega(s / b) for s = 0..b; omega(0) = 1 for every kernel."""
    b = cfg.bandwidth
    if b == 0:
        return np.ones(1)
    s = np.arange(b + 1)
    if cfg.kernel == Kernel.RECTANGULAR:
        return np.ones(b + 1)
    return np.maximum(0.0, 1.0 - s / b)


@dataclass(frozen=True, eq=False)
class HacKernel:
    """K = sum_s omega(s/b) D_s over the distance shells; built once per cell."""

    matrix: sp.csr_matrix
    cfg: HacConfig

    @classmethod
    def build(cls, g: Network, cfg: HacConfig) -> "HacKernel":
        weights = kernel_weights(cfg)
        shells = distance_shell_matrices(g, cfg.bandwidth)
        k = sp.csr_matrix((g.n, g.n))
        for w, d in zip(weights, shells):
            if w:
                k = k + w * d
        return cls(matrix=k.tocsr(), cfg=cfg)


def network_hac_vcov(
    z: np.ndarray,
    resid: np.ndarray,
    kernel: Union[HacKernel, Network],
    cols: np.ndarray,
    cfg: Optional[HacConfig] = None,
) -> np.ndarray:
    """
    Network-HAC joint vcov of the G2X coefficients of both equations.

    Moments M = [eps_tilde * z, eta * z] are weighted over node pairs within the
    bandwidth: V = M' K M / n, and vcov = A V A / n with A = blockdiag(Szz^{-1}, Szz^{-1}),
    Szz = Z'Z / n.
    """
    if isinstance(kernel, Network):
        kernel = HacKernel.build(kernel, cfg or HacConfig())
    n, k = z.shape
    m = np.column_stack([z * resid[:, [0]], z * resid[:, [1]]])
    v = m.T @ (kernel.matrix @ m) / n
    asym = np.abs(v - v.T).max(initial=0.0)
    if asym > SYMMETRY_TOL * max(1.0, np.abs(v).max(initial=0.0)):
        raise FofivError(f"HAC middle matrix is not symmetric (max asymmetry {asym:.3e})")
    v = 0.5 * (v + v.T)
    szz_inv = np.linalg.inv(z.T @ z / n)
    a = scipy.linalg.block_diag(szz_inv, szz_inv)
    full = a @ v @ a / n
    idx = np.concatenate([cols, cols + k])
    joint = full[np.ix_(idx, idx)]
    return 0.5 * (joint + joint.T)


# --- 4. IV fit ---

@dataclass(frozen=True, eq=False)
class IvFit:
    n: int
    xi: np.ndarray              # reduced-form coefficients on G2X, (q,)
    pi: np.ndarray              # first-stage coefficients on G2X, (q,)
    beta_hat: float
    coef_reduced: np.ndarray    # all coefficients of Y on Z
    coef_first: np.ndarray      # all coefficients of GY on Z
    resid_reduced: np.ndarray   # eps_tilde
    resid_first: np.ndarray     # eta
    fitted_first: np.ndarray
    joint_homo: np.ndarray
    joint_hac: Optional[np.ndarray]
    corr_endog_instr: float
    names: List[str]

    @property
    def q(self) -> int:
        return int(self.pi.shape[0])

    @property
    def xi_hat(self) -> float:
        self._require_scalar()
        return float(self.xi[0])

    @property
    def pi_hat(self) -> float:
        self._require_scalar()
        return float(self.pi[0])

    def _require_scalar(self) -> None:
        if self.q != 1:
            raise ParameterError(f"scalar quantities need a single excluded instrument, got {self.q}")

    def joint(self, which: Which) -> np.ndarray:
        if which == "homo":
            return self.joint_homo
        if which == "hac":
            if self.joint_hac is None:
                raise ParameterError("fit was computed without a HAC kernel")
            return self.joint_hac
        raise ParameterError(f"unknown variance estimator '{which}'")

    def vcov(self, which: Which) -> VcovBlock:
        self._require_scalar()
        return _to_block(self.joint(which))

    @property
    def vcov_homo(self) -> VcovBlock:
        return self.vcov("homo")

    @property
    def vcov_hac(self) -> Optional[VcovBlock]:
        return None if self.joint_hac is None else self.vcov("hac")

    @property
    def f_first_stage(self) -> float:
        return first_stage_F(self, "homo")


def fit_iv(design: Design, hac: Optional[HacKernel] = None) -> IvFit:
    """Run both reduced-form regressions on Z and form beta_hat = xi_hat / pi_hat."""
    if not np.any(design.g2x):
        raise DegenerateInstrumentError("G2X is identically zero; the instrument carries no variation")
    z = design.z
    cols = design.excluded
    res = ols(z, np.column_stack([design.y, design.gy]), design.z_names)
    xi = res.coef[cols, 0]
    pi = res.coef[cols, 1]
    if design.d == 1:
        beta_hat = float(xi[0] / pi[0]) if pi[0] != 0.0 else math.nan
    else:
        beta_hat = float(tsls(design)[-1])
    joint_homo = homoskedastic_vcov(res, cols)
    joint_hac = network_hac_vcov(z, res.resid, hac, cols) if hac is not None else None
    g2x = design.g2x if design.d == 1 else design.g2x[:, 0]
    return IvFit(
        n=design.n,
        xi=xi,
        pi=pi,
        beta_hat=beta_hat,
        coef_reduced=res.coef[:, 0],
        coef_first=res.coef[:, 1],
        resid_reduced=res.resid[:, 0],
        resid_first=res.resid[:, 1],
        fitted_first=res.fitted[:, 1],
        joint_homo=joint_homo,
        joint_hac=joint_hac,
        corr_endog_instr=corr_endog_instrument(design.gy, g2x),
        names=design.z_names,
    )


def first_stage_F(fit: IvFit, which: Which = "homo") -> float:
    """pi_hat^2 / V_pi; with q > 1 excluded instruments, the Wald statistic over q."""
    q = fit.q
    v_pi = fit.joint(which)[q:, q:]
    if q == 1:
        if not v_pi[0, 0] > 0:
            raise DegenerateVarianceError(f"V_pi = {v_pi[0, 0]:.3e} under the {which} estimator")
        return float(fit.pi[0] ** 2 / v_pi[0, 0])
    try:
        wald = float(fit.pi @ np.linalg.solve(v_pi, fit.pi))
    except np.linalg.LinAlgError as e:
        raise DegenerateVarianceError(f"V_pi is singular under the {which} estimator") from e
    return wald / q


def corr_endog_instrument(gy: np.ndarray, g2x: np.ndarray) -> float:
    """Pearson correlation; nan when either vector is constant."""
    if np.std(gy) == 0.0 or np.std(g2x) == 0.0:
        return math.nan
    return float(np.corrcoef(gy, g2x)[0, 1])


# --- 5. Frisch-Waugh-Lovell first stage ---

@dataclass(frozen=True)
class FwlFirstStage:
    slope: float
    partial_cov: float
    partial_var: float


def fwl_first_stage(design: Design) -> FwlFirstStage:
    """Residualize GY and G2X on (iota, X, GX); slope = partial_cov / partial_var."""
    if design.d != 1:
        raise ParameterError("the partialled-out first stage is defined for a single covariate")
    exog = ols(design.exog, np.column_stack([design.gy, design.g2x]), design.exog_names)
    r_gy, r_z = exog.resid[:, 0], exog.resid[:, 1]
    n = design.n
    var = float(r_z @ r_z) / n
    cov = float(r_z @ r_gy) / n
    if var == 0.0:
        raise DegenerateInstrumentError("G2X lies in the span of (iota, X, GX)")
    return FwlFirstStage(slope=cov / var, partial_cov=cov, partial_var=var)


# --- 6. Wald intervals ---

@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    se: float

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def t_interval(fit: IvFit, which: Which = "homo", alpha: float = 0.05) -> Interval:
    """beta_hat +/- z * sqrt(Omega(beta_hat)) / |pi_hat|; unbounded when Omega(beta_hat) is not positive."""
    block = fit.vcov(which)
    if not math.isfinite(fit.beta_hat):
        return Interval(-math.inf, math.inf, math.inf)
    if not block.is_testable(fit.beta_hat):
        return Interval(-math.inf, math.inf, math.inf)
    se = math.sqrt(block.omega(fit.beta_hat)) / abs(fit.pi_hat)
    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    return Interval(fit.beta_hat - z * se, fit.beta_hat + z * se, se)
