# fofiv/montecarlo.py
"""
Replication grids over (n, degree regime, beta, scaling).

Each cell draws ONE network and ONE covariate vector, factors (I - beta G)
once, then replicates only the structural errors. Streams are derived from
the master seed:

    graph, covariates   tags (n, regime)            shared across beta and scaling
    errors              tags (cell id, rep index)

so any worker count produces the same rows.
"""
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from fofiv.config import DEFAULT_SEED, CellConfig, CovariateSpec, ModelParams, Regime, Scaling, StabilityFlag, rng_for
from fofiv.dgp import OutcomeSolver, sample_covariates, sample_errors
from fofiv.errors import DegenerateInstrumentError, FofivError
from fofiv.estimate import Design, HacKernel, first_stage_F, fit_iv, t_interval
from fofiv.graph import Network, NetworkOperator, largest_eigenvalue, sample_er, scale_weight
from fofiv.utils.debug_utils import tracker
from fofiv.weakiv import SetKind, ar_confidence_set_closed_form, ar_test

_CHUNK = 50


# --- 1. Per-cell setup ---

@dataclass(frozen=True, eq=False)
class CellSetup:
    """Immutable per-cell state shared read-only by every replication."""

    cfg: CellConfig
    network: Network
    op: NetworkOperator
    x: np.ndarray
    gx: np.ndarray
    g2x: np.ndarray
    solver: OutcomeSolver
    hac: HacKernel
    lambda1: float


def draw_network(n: int, regime: Regime, master_seed: int) -> Network:
    return sample_er(n, regime.link_probability(n), rng_for(master_seed, "graph", n, regime.label))


def draw_covariates(n: int, regime: Regime, spec: CovariateSpec, master_seed: int) -> np.ndarray:
    return sample_covariates(n, spec, rng_for(master_seed, "covariates", n, regime.label))


def setup_cell(cfg: CellConfig) -> CellSetup:
    g = draw_network(cfg.n, cfg.regime, cfg.master_seed)
    op = NetworkOperator.scaled(g) if cfg.scaling == Scaling.SCALED else NetworkOperator.unscaled(g)
    x = draw_covariates(cfg.n, cfg.regime, cfg.covariates, cfg.master_seed)
    gx = op.apply(x)
    g2x = op.square_offdiag @ x
    if not np.any(g2x):
        raise DegenerateInstrumentError(f"G2X is identically zero in cell {cfg.cell_id}")
    lam = largest_eigenvalue(op)
    solver = OutcomeSolver(op, cfg.beta_true, cfg.dense_cap, lambda1=lam, cell=cfg.id_columns())
    return CellSetup(cfg, g, op, x, gx, g2x, solver, HacKernel.build(g, cfg.hac), lam)


# --- 2. One replication ---

@dataclass(frozen=True)
class RepDraw:
    rep: int
    beta_hat: float
    pi_hat: float
    t_homo: float
    t_hac: float
    f_homo: float
    f_hac: float
    ar_homo: float
    ar_hac: float
    corr: float
    cov: float
    var_instrument: float
    cover_t_homo: bool
    cover_t_hac: bool
    cover_ar_homo: bool
    cover_ar_hac: bool
    len_t_homo: float
    len_t_hac: float
    len_ar_homo: float
    len_ar_hac: float
    empty_ar_homo: bool
    empty_ar_hac: bool
    invalid_omega_homo: bool
    invalid_omega_hac: bool
    stability_flag: str


def _safe_F(fit, which) -> float:
    try:
        return first_stage_F(fit, which)
    except FofivError:
        return math.nan


def run_rep(setup: CellSetup, rep: int) -> RepDraw:
    cfg = setup.cfg
    params = cfg.model_params
    eps = sample_errors(cfg.n, params.sigma_eps, rng_for(cfg.master_seed, "errors", cfg.cell_id, rep))
    sample = setup.solver.solve(params, setup.x, eps, gx=setup.gx)
    design = Design(y=sample.y, gy=sample.gy, x=setup.x, gx=setup.gx, g2x=setup.g2x)
    fit = fit_iv(design, setup.hac)
    beta = cfg.beta_true
    out: Dict[str, Any] = {}
    for which in ("homo", "hac"):
        ci = t_interval(fit, which, cfg.alpha)
        cs = ar_confidence_set_closed_form(fit, which, cfg.alpha)
        test = ar_test(beta, fit, which, cfg.alpha)
        out[f"t_{which}"] = (fit.beta_hat - beta) / ci.se if math.isfinite(ci.se) else math.nan
        out[f"f_{which}"] = _safe_F(fit, which)
        out[f"ar_{which}"] = test.statistic
        out[f"cover_t_{which}"] = ci.contains(beta)
        out[f"cover_ar_{which}"] = cs.contains(beta)
        out[f"len_t_{which}"] = ci.length
        out[f"len_ar_{which}"] = cs.length
        out[f"empty_ar_{which}"] = cs.kind == SetKind.EMPTY
        out[f"invalid_omega_{which}"] = not test.valid
    c = np.cov(sample.gy, setup.g2x)
    return RepDraw(
        rep=rep,
        beta_hat=fit.beta_hat,
        pi_hat=fit.pi_hat,
        corr=fit.corr_endog_instr,
        cov=float(c[0, 1]),
        var_instrument=float(c[1, 1]),
        stability_flag=sample.stability_flag.value,
        **out,
    )


# --- 3. Aggregation ---

@dataclass
class CellSummary:
    cfg: CellConfig
    reps: int
    failed_reps: int = 0
    mean_beta_hat: float = math.nan
    median_beta_hat: float = math.nan
    sd_beta_hat: float = math.nan
    mean_corr: float = math.nan
    mean_cov: float = math.nan
    mean_var_instrument: float = math.nan
    mean_F: float = math.nan
    mean_F_hac: float = math.nan
    coverage_t_homo: float = math.nan
    coverage_t_hac: float = math.nan
    coverage_ar_homo: float = math.nan
    coverage_ar_hac: float = math.nan
    mean_ci_len_t_homo: float = math.nan
    mean_ci_len_t_hac: float = math.nan
    mean_ci_len_ar_homo: float = math.nan
    mean_ci_len_ar_hac: float = math.nan
    pct_ci_infinite_ar_homo: float = math.nan
    pct_ci_infinite_ar_hac: float = math.nan
    pct_ci_empty_ar_homo: float = math.nan
    pct_ci_empty_ar_hac: float = math.nan
    invalid_omega_homo: int = 0
    invalid_omega_hac: int = 0
    info_index: float = math.nan
    lambda1: float = math.nan
    w_n: float = math.nan
    mean_degree: float = math.nan
    max_degree: float = math.nan
    stability: Dict[str, int] = field(default_factory=dict)
    status: str = "ok"
    draws: Optional[List[RepDraw]] = None

    @property
    def counted_reps(self) -> int:
        return self.reps - self.failed_reps

    def as_row(self) -> Dict[str, Any]:
        row = dict(self.cfg.id_columns())
        for f in fields(self):
            if f.name not in ("cfg", "draws", "stability"):
                row[f.name] = getattr(self, f.name)
        for flag in StabilityFlag:
            row[f"n_{flag.value}"] = self.stability.get(flag.value, 0)
        return row


def _mean(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(arr.mean()) if arr.size else math.nan


def _share(flags: Sequence[bool]) -> float:
    return float(np.mean(flags)) if len(flags) else math.nan


def summarize(setup: CellSetup, draws: List[RepDraw], failed: int, keep_draws: bool = False) -> CellSummary:
    cfg = setup.cfg
    s = CellSummary(cfg=cfg, reps=cfg.reps, failed_reps=failed)
    s.lambda1 = setup.lambda1
    s.w_n = scale_weight(setup.network)
    s.mean_degree = setup.network.mean_degree
    s.max_degree = float(setup.network.max_degree)
    if keep_draws:
        s.draws = draws
    if not draws:
        s.status = "failed: every replication failed"
        return s
    col = lambda name: [getattr(d, name) for d in draws]
    beta_hat = np.asarray(col("beta_hat"), dtype=float)
    finite = beta_hat[np.isfinite(beta_hat)]
    s.mean_beta_hat = _mean(finite)
    s.median_beta_hat = float(np.median(finite)) if finite.size else math.nan
    s.sd_beta_hat = float(finite.std(ddof=1)) if finite.size > 1 else math.nan
    s.mean_corr = _mean(col("corr"))
    s.mean_cov = _mean(col("cov"))
    s.mean_var_instrument = _mean(col("var_instrument"))
    s.mean_F = _mean(col("f_homo"))
    s.mean_F_hac = _mean(col("f_hac"))
    for which in ("homo", "hac"):
        setattr(s, f"coverage_t_{which}", _share(col(f"cover_t_{which}")))
        setattr(s, f"coverage_ar_{which}", _share(col(f"cover_ar_{which}")))
        setattr(s, f"mean_ci_len_t_{which}", _mean(col(f"len_t_{which}")))
        nonempty = [v for v, e in zip(col(f"len_ar_{which}"), col(f"empty_ar_{which}")) if not e]
        setattr(s, f"mean_ci_len_ar_{which}", _mean(nonempty))
        setattr(s, f"pct_ci_infinite_ar_{which}", _share([math.isinf(v) for v in col(f"len_ar_{which}")]))
        setattr(s, f"pct_ci_empty_ar_{which}", _share(col(f"empty_ar_{which}")))
        setattr(s, f"invalid_omega_{which}", int(sum(col(f"invalid_omega_{which}"))))
    pi_hat = np.asarray(col("pi_hat"), dtype=float)
    sd_pi = float(pi_hat.std(ddof=1)) if pi_hat.size > 1 else math.nan
    s.info_index = 1.0 / sd_pi if sd_pi > 0 else math.nan
    flags = col("stability_flag")
    s.stability = {f.value: flags.count(f.value) for f in StabilityFlag}
    if failed:
        s.status = f"partial: {failed} failed reps"
    return s


# --- 4. Cells and grids ---

def _run_chunk(setup: CellSetup, reps: Sequence[int]):
    done, failed = [], []
    for k in reps:
        try:
            done.append(run_rep(setup, k))
        except FofivError as e:
            failed.append((k, str(e)))
    return done, failed


def run_cell(cfg: CellConfig, keep_draws: bool = False, threads: int = 1) -> CellSummary:
    """
    Replicate one cell, spreading replication chunks over `threads` worker
    processes. Setup failures (degenerate instrument, singular
    system) mark the whole cell; per-rep failures are counted in failed_reps.
    """
    started = time.perf_counter()
    try:
        setup = setup_cell(cfg)
    except FofivError as e:
        tracker.record(cfg.cell_id, status=f"failed: {type(e).__name__}", error=str(e))
        return CellSummary(cfg=cfg, reps=cfg.reps, failed_reps=cfg.reps,
                           status=f"failed: {type(e).__name__}: {e}")
    chunks = [range(i, min(i + _CHUNK, cfg.reps)) for i in range(0, cfg.reps, _CHUNK)]
    if threads > 1 and len(chunks) > 1:
        # LAPACK solves on a shared factor are not thread-safe; chunks run in worker processes
        parts = Parallel(n_jobs=threads)(delayed(_run_chunk)(setup, c) for c in chunks)
    else:
        parts = [_run_chunk(setup, c) for c in chunks]
    draws = sorted((d for done, _ in parts for d in done), key=lambda d: d.rep)
    failed = sum(len(f) for _, f in parts)
    summary = summarize(setup, draws, failed, keep_draws)
    tracker.record(cfg.cell_id, status="ok" if summary.status == "ok" else summary.status,
                   failed_reps=failed, seconds=round(time.perf_counter() - started, 3))
    return summary


def _run_cell_quiet(cfg: CellConfig, keep_draws: bool) -> CellSummary:
    try:
        return run_cell(cfg, keep_draws)
    except Exception as e:  # never abort the grid
        return CellSummary(cfg=cfg, reps=cfg.reps, failed_reps=cfg.reps,
                           status=f"failed: {type(e).__name__}: {e}")


def run_grid(cells: Sequence[CellConfig], threads: int = 1, keep_draws: bool = False,
             progress=None) -> List[CellSummary]:
    """
    One CellSummary per cell, in input order. A single cell parallelizes over
    replications; several cells parallelize over cells.
    """
    if not cells:
        raise ValueError("run_grid needs at least one cell")
    if len(cells) == 1:
        try:
            return [run_cell(cells[0], keep_draws, threads)]
        except Exception as e:
            return [CellSummary(cfg=cells[0], reps=cells[0].reps, failed_reps=cells[0].reps,
                                status=f"failed: {type(e).__name__}: {e}")]
    if threads > 1:
        results = []
        jobs = Parallel(n_jobs=threads, return_as="generator")(
            delayed(_run_cell_quiet)(c, keep_draws) for c in cells
        )
        for r in jobs:
            tracker.record(r.cfg.cell_id, status=r.status, failed_reps=r.failed_reps)
            results.append(r)
            if progress is not None:
                progress()
        return results
    results = []
    for c in cells:
        results.append(_run_cell_quiet(c, keep_draws))
        if progress is not None:
            progress()
    return results


def grid_frame(summaries: Iterable[CellSummary]) -> pd.DataFrame:
    return pd.DataFrame([s.as_row() for s in summaries])


def draws_frame(summaries: Iterable[CellSummary]) -> pd.DataFrame:
    rows = []
    for s in summaries:
        for d in s.draws or []:
            rows.append({**s.cfg.id_columns(), **asdict(d)})
    return pd.DataFrame(rows)


# --- 5. First-stage curves ---

def first_stage_curves(regimes: Sequence[Regime], n_grid: Sequence[int], reps: int = 200,
                       scaled: bool = True, params: ModelParams = ModelParams(),
                       covariates: CovariateSpec = CovariateSpec(), master_seed: int = DEFAULT_SEED,
                       threads: int = 1) -> pd.DataFrame:
    """
    Mean first-stage F, Cov(GY, G2X) and Var(G2X) per (regime, n) on a network
    fixed per n, with X and eps redrawn every replication.
    """
    jobs = [(r, n) for r in regimes for n in n_grid]
    rows = Parallel(n_jobs=threads)(
        delayed(_curve_point)(r, n, reps, scaled, params, covariates, master_seed) for r, n in jobs
    )
    return pd.DataFrame(rows)


def _curve_point(regime: Regime, n: int, reps: int, scaled: bool, params: ModelParams,
                 covariates: CovariateSpec, master_seed: int) -> Dict[str, Any]:
    g = draw_network(n, regime, master_seed)
    op = NetworkOperator.scaled(g) if scaled else NetworkOperator.unscaled(g)
    row: Dict[str, Any] = {
        "n": n, "regime": regime.label, "d_n": regime.degree(n),
        "scaling": "scaled" if scaled else "unscaled",
    }
    f_vals, cov_vals, var_vals, failed = [], [], [], 0
    try:
        solver = OutcomeSolver(op, params.beta)
    except FofivError as e:
        return {**row, "mean_F": math.nan, "mean_cov": math.nan, "mean_var_instrument": math.nan,
                "reps": reps, "failed_reps": reps, "status": f"failed: {type(e).__name__}"}
    g2 = op.square_offdiag
    for k in range(reps):
        rng = rng_for(master_seed, "curves", regime.label, n, row["scaling"], k)
        x = sample_covariates(n, covariates, rng)
        eps = sample_errors(n, params.sigma_eps, rng)
        try:
            sample = solver.solve(params, x, eps)
            g2x = g2 @ x
            fit = fit_iv(Design(y=sample.y, gy=sample.gy, x=x, gx=sample.gx, g2x=g2x))
            f_vals.append(first_stage_F(fit, "homo"))
            c = np.cov(sample.gy, g2x)
            cov_vals.append(float(c[0, 1]))
            var_vals.append(float(c[1, 1]))
        except FofivError:
            failed += 1
    return {
        **row,
        "mean_F": _mean(f_vals),
        "mean_cov": _mean(cov_vals),
        "mean_var_instrument": _mean(var_vals),
        "reps": reps,
        "failed_reps": failed,
        "status": "ok" if not failed else f"partial: {failed} failed reps",
    }
