# fofiv/presets.py
"""Named reproduction grids."""
from typing import List, Sequence

from fofiv.config import (
    DEFAULT_SEED,
    CellConfig,
    CovariateSpec,
    HacConfig,
    ModelParams,
    Regime,
    Scaling,
)

GRID_BETAS = (0.4666, 0.95)
GRID_DEGREES = (0.25, 0.5, 0.75, 1.0, 2.0, 5.0)
GRID_NS = (250, 500, 1000, 2000)

BOUND_NS = (200, 400, 800, 1200, 1600)
BOUND_SEEDS = 500
BOUND_REGIMES = ("constant:1", "loglog:1", "vanishing:1,0.5", "dense:1,0.5")

# which CSV files each preset writes
PRESET_OUTPUTS = {
    "paper-grid": ("estimates", "coverage", "ci_lengths", "covariance"),
    "table2": ("estimates", "covariance"),
    "table3": ("coverage", "ci_lengths"),
    "bounds": ("bounds",),
}


def build_cells(
    ns: Sequence[int],
    regimes: Sequence[Regime],
    betas: Sequence[float],
    scalings: Sequence[Scaling],
    reps: int = 1000,
    master_seed: int = DEFAULT_SEED,
    alpha: float = 0.05,
    hac: HacConfig = HacConfig(),
    params: ModelParams = ModelParams(),
    covariates: CovariateSpec = CovariateSpec(),
) -> List[CellConfig]:
    """Cartesian grid, ordered scaling > beta > regime > n (table panel order)."""
    return [
        CellConfig(
            n=n, regime=regime, beta_true=beta, scaling=scaling, reps=reps,
            master_seed=master_seed, alpha=alpha, hac=hac, params=params, covariates=covariates,
        )
        for scaling in scalings
        for beta in betas
        for regime in regimes
        for n in ns
    ]


def full_grid(**kwargs) -> List[CellConfig]:
    """2 betas x 6 degrees x 4 sizes x 2 scalings = 96 cells."""
    regimes = [Regime(name="constant", params=(d,)) for d in GRID_DEGREES]
    return build_cells(GRID_NS, regimes, GRID_BETAS, [Scaling.UNSCALED, Scaling.SCALED], **kwargs)


def bound_regimes() -> List[Regime]:
    return [Regime.parse(text) for text in BOUND_REGIMES]
