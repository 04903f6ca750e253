# fofiv/reporting.py
"""
CSV schemas and the run manifest.

Column order is part of the output contract. Floats are written with their
shortest round-trip representation, coverage columns with 3 decimals, and
missing values as NA.
"""
import json
import math
import subprocess
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

ID_COLUMNS = ["n", "regime", "d_n", "beta", "scaling"]

SCHEMAS: Dict[str, List[str]] = {
    "estimates": ID_COLUMNS + [
        "mean_beta_hat", "median_beta_hat", "sd_beta_hat", "mean_corr", "mean_F", "mean_F_hac",
        "info_index", "lambda1", "w_n", "mean_degree", "max_degree",
        "n_stable", "n_near_boundary", "n_unstable", "reps", "failed_reps", "status",
    ],
    "coverage": ID_COLUMNS + [
        "coverage_t_homo", "coverage_t_hac", "coverage_ar_homo", "coverage_ar_hac",
        "reps", "failed_reps", "status",
    ],
    "ci_lengths": ID_COLUMNS + [
        "mean_ci_len_t_homo", "mean_ci_len_t_hac", "mean_ci_len_ar_homo", "mean_ci_len_ar_hac",
        "pct_ci_infinite_ar_homo", "pct_ci_infinite_ar_hac",
        "pct_ci_empty_ar_homo", "pct_ci_empty_ar_hac",
        "invalid_omega_homo", "invalid_omega_hac", "status",
    ],
    "covariance": ID_COLUMNS + ["mean_cov", "mean_var_instrument", "mean_corr", "status"],
    "draws": ID_COLUMNS + [
        "rep", "beta_hat", "pi_hat", "t_homo", "t_hac", "f_homo", "f_hac", "ar_homo", "ar_hac",
        "corr", "cov", "var_instrument", "stability_flag",
    ],
    "bounds": ["n", "regime", "mean_bound", "sd_bound", "scaling", "graphs_used", "graphs_skipped"],
    "curves": ["n", "regime", "d_n", "scaling", "mean_F", "mean_cov", "mean_var_instrument",
               "reps", "failed_reps", "status"],
    "graph_stats": ["graph", "n", "min", "median", "mean", "mode", "max"],
    "diagnose": ["n", "edges", "scaling", "w_n", "lambda1", "beta", "beta_lambda1", "stability_flag",
                 "boundary_count", "max_amplification", "amplified", "collinearity_angle_deg",
                 "varnorm_cov", "status"],
}

THREE_DECIMALS = {"coverage_t_homo", "coverage_t_hac", "coverage_ar_homo", "coverage_ar_hac"}


def format_value(column: str, value: Any) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if column in THREE_DECIMALS:
            return f"{v:.3f}"
        return repr(v)
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def to_schema(frame: pd.DataFrame, name: str) -> pd.DataFrame:
    """Select and format the schema's columns; missing columns become NA."""
    columns = SCHEMAS[name]
    out = pd.DataFrame(index=frame.index)
    for col in columns:
        values = frame[col] if col in frame.columns else [None] * len(frame)
        out[col] = [format_value(col, v) for v in values]
    return out


def write_csv(frame: pd.DataFrame, name: str, out_dir: Path) -> Path:
    path = Path(out_dir) / f"{name}.csv"
    to_schema(frame, name).to_csv(path, index=False)
    return path


def artifact_version() -> str:
    from fofiv import __version__
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"{__version__}+{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(
    out_dir: Path,
    config: Dict[str, Any],
    master_seed: int,
    started: datetime,
    files: Sequence[Path],
    cells: Iterable[Dict[str, Any]] = (),
) -> Path:
    """Written last; its presence marks a completed run."""
    cells = list(cells)
    manifest = {
        "config": config,
        "version": artifact_version(),
        "master_seed": master_seed,
        "started": started.isoformat(),
        "finished": datetime.now().isoformat(),
        "files": [Path(f).name for f in files],
        "cells": cells,
        "cells_failed": sum(1 for c in cells if str(c.get("status", "")).startswith("failed")),
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    return path


def missing_outputs(out_dir: Path, manifest: Optional[Dict[str, Any]] = None) -> List[str]:
    """Manifest entries that are absent or empty on disk."""
    out_dir = Path(out_dir)
    if manifest is None:
        manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    return [f for f in manifest["files"] if not (out_dir / f).is_file() or (out_dir / f).stat().st_size == 0]
