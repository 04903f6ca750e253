# fofiv/cli.py
import math
import sys
import warnings
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import pandas as pd
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from fofiv import __version__, presets
from fofiv.config import (
    DEFAULT_SEED,
    CovariateSpec,
    HacConfig,
    Kernel,
    ModelParams,
    Regime,
    Scaling,
    load_run_options,
    rng_for,
)
from fofiv.dgp import build_instruments, sample_covariates, sample_errors, solve_outcomes, stability_flag
from fofiv.errors import ConfigError, FofivError, SelfLoopWarning
from fofiv.graph import (
    NetworkOperator,
    degree_stats,
    largest_eigenvalue,
    load_edge_list,
    sample_er,
    scale_weight,
    support_degree_stats,
)
from fofiv.montecarlo import draws_frame, first_stage_curves, grid_frame, run_grid
from fofiv.reporting import to_schema, write_csv, write_manifest
from fofiv.theory import (
    bound_curve,
    boundary_diagnostics,
    collinearity_angle,
    conditional_varnorm_cov,
)
from fofiv.utils.debug_utils import tracker

console = Console()

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_FAILED = 0, 2, 3, 4


def _banner(title: str, subtitle: str):
    console.print(Panel.fit(
        f"[bold cyan]{title}[/bold cyan]\n[dim]{subtitle}[/dim]",
        border_style="cyan"
    ))


def _fail(message: str, title: str = "❌ Failed"):
    console.print(Panel(f"[bold red]{message}[/bold red]", title=title, border_style="red"))


def _usage(key: str, message: str) -> click.UsageError:
    flag = "--" + key.replace("_", "-")
    return click.UsageError(f"{flag}: {message}")


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        TimeElapsedColumn(),
        console=console
    )


def _parse_regimes(texts: Sequence[str]) -> List[Regime]:
    try:
        return [Regime.parse(t) for t in texts]
    except ConfigError as e:
        raise _usage(e.key, e.message)


def _scalings(scaled: Optional[bool]) -> List[Scaling]:
    if scaled is None:
        return [Scaling.UNSCALED, Scaling.SCALED]
    return [Scaling.SCALED if scaled else Scaling.UNSCALED]


def _exit_code(statuses: Sequence[str]) -> int:
    failed = sum(1 for s in statuses if s.startswith("failed"))
    if statuses and failed == len(statuses):
        return EXIT_FAILED
    return EXIT_PARTIAL if failed else EXIT_OK


def _surface_warnings(caught):
    for w in caught:
        if issubclass(w.category, SelfLoopWarning):
            console.print(f"[yellow]⚠ {w.message}[/yellow]")


@click.group()
@click.version_option(version=__version__, message="%(version)s")
def main():
    """
    Friends-of-friends IV laboratory: peer-effect simulations on Erdos-Renyi networks.

    Run with:
        python run_lab.py simulate --n 250 --regime constant:1 --beta 0.4666 --scaled --reps 10
        python run_lab.py simulate --reproduce paper-grid --reps 200 --threads 8
    """


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

@main.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='Flat JSON config file')
@click.option('--reproduce', type=click.Choice(['paper-grid', 'table2', 'table3', 'bounds']), help='Run a named preset')
@click.option('--n', 'ns', type=int, multiple=True, help='Network size (repeatable)')
@click.option('--regime', 'regimes', multiple=True, help='Degree regime name:params, e.g. constant:1 (repeatable)')
@click.option('--beta', 'betas', type=float, multiple=True, help='True endogenous effect (repeatable)')
@click.option('--scaled/--unscaled', default=None, help='Operator scaling (default: both)')
@click.option('--reps', type=int, help='Replications per cell')
@click.option('--seed', type=int, help='Master seed')
@click.option('--alpha', type=float, help='Test level')
@click.option('--hac-kernel', type=click.Choice([k.value for k in Kernel]), help='Network-HAC kernel')
@click.option('--hac-bandwidth', type=int, help='Network-HAC bandwidth (path length)')
@click.option('--out-dir', type=click.Path(file_okay=False), help='Output directory')
@click.option('--threads', type=int, help='Worker processes')
@click.option('--draws', is_flag=True, default=None, help='Also write per-replication draws.csv')
@click.option('--verbose', '-v', is_flag=True, help='Print the run step tree')
def simulate(config_path, reproduce, ns, regimes, betas, scaled, reps, seed, alpha,
             hac_kernel, hac_bandwidth, out_dir, threads, draws, verbose):
    """Monte Carlo grid: estimates, coverage, CI lengths and covariance tables."""
    overrides = {
        "reproduce": reproduce,
        "n": list(ns) or None,
        "regime": list(regimes) or None,
        "beta": list(betas) or None,
        "scaled": scaled,
        "reps": reps,
        "seed": seed,
        "alpha": alpha,
        "hac_kernel": hac_kernel,
        "hac_bandwidth": hac_bandwidth,
        "out_dir": out_dir,
        "threads": threads,
        "draws": draws,
    }
    try:
        opts = load_run_options(config_path, overrides)
    except ConfigError as e:
        raise _usage(e.key, e.message)

    _banner("🕸️  Friends-of-Friends IV Lab", f"simulate · seed {opts.seed}")
    tracker.reset()
    started = datetime.now()
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if opts.reproduce == "bounds":
        code = _run_bounds(presets.bound_regimes(), presets.BOUND_NS, presets.BOUND_SEEDS,
                           _scalings(opts.scaled), opts.seed, out, started, opts.model_dump(mode="json"))
        sys.exit(code)

    hac = HacConfig(kernel=opts.hac_kernel, bandwidth=opts.hac_bandwidth)
    common = dict(reps=opts.reps, master_seed=opts.seed, alpha=opts.alpha, hac=hac)
    try:
        if opts.reproduce:
            cells = presets.full_grid(**common)
            outputs = presets.PRESET_OUTPUTS[opts.reproduce]
        else:
            for key in ("n", "regime", "beta"):
                if not getattr(opts, key):
                    raise _usage(key, "required unless --reproduce or --config provides it")
            cells = presets.build_cells(opts.n, _parse_regimes(opts.regime), opts.beta,
                                        _scalings(opts.scaled), **common)
            outputs = presets.PRESET_OUTPUTS["paper-grid"]
    except ValidationError as e:
        first = e.errors()[0]
        raise _usage(str(first["loc"][0]) if first["loc"] else "config", first["msg"])

    console.print(f"[green]✓ {len(cells)} cells × {opts.reps} reps → {out}[/green]")
    with _progress() as progress:
        task = progress.add_task("[cyan]Running cells...", total=len(cells))
        summaries = run_grid(cells, threads=opts.threads, keep_draws=opts.draws,
                             progress=lambda: progress.update(task, advance=1))

    frame = grid_frame(summaries)
    files = [write_csv(frame, name, out) for name in outputs]
    if opts.draws:
        files.append(write_csv(draws_frame(summaries), "draws", out))
    statuses = [s.status for s in summaries]
    write_manifest(out, opts.model_dump(mode="json"), opts.seed, started, files,
                   [{"cell": s.cfg.cell_id, "status": s.status, "failed_reps": s.failed_reps} for s in summaries])

    _print_grid_table(summaries)
    for s in summaries:
        if s.status.startswith("failed"):
            _fail(f"{s.cfg.cell_id}: {s.status}", title="❌ Cell failed")
    if verbose:
        tracker.print_tree()
        tracker.print_final_summary()
    sys.exit(_exit_code(statuses))


def _fmt(v: Any, digits: int = 3) -> str:
    if isinstance(v, float):
        return "NA" if math.isnan(v) else f"{v:.{digits}f}"
    return str(v)


def _print_grid_table(summaries):
    table = Table(title="Cell summaries", show_header=True, header_style="bold cyan")
    for col in ("cell", "β̂", "F", "cov t", "cov AR", "AR ∞ %", "status"):
        table.add_column(col)
    for s in summaries[:40]:
        table.add_row(
            s.cfg.cell_id, _fmt(s.mean_beta_hat, 4), _fmt(s.mean_F, 2),
            _fmt(s.coverage_t_homo), _fmt(s.coverage_ar_homo),
            _fmt(100 * s.pct_ci_infinite_ar_homo, 1), s.status,
        )
    console.print(table)
    if len(summaries) > 40:
        console.print(f"[dim]... {len(summaries) - 40} more rows in the CSV files[/dim]")


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------

def _run_bounds(regimes, ns, seeds, scalings, seed, out, started, config) -> int:
    frames = []
    with _progress() as progress:
        task = progress.add_task("[cyan]Bound curves...", total=len(regimes) * len(scalings))
        for scaling in scalings:
            for regime in regimes:
                try:
                    frames.append(bound_curve(regime, ns, seeds, scaling == Scaling.SCALED, seed))
                    tracker.record(f"{regime.label}|{scaling.value}")
                except FofivError as e:
                    tracker.record(f"{regime.label}|{scaling.value}", status=f"failed: {e}")
                progress.update(task, advance=1)
    if not frames:
        _fail("no bound curve could be computed")
        return EXIT_FAILED
    frame = pd.concat(frames, ignore_index=True)
    path = write_csv(frame, "bounds", out)
    cells = [{"cell": k, "status": v} for k, v in tracker.statuses().items()]
    write_manifest(out, config, seed, started, [path], cells)

    table = Table(title="Mean rate factor", show_header=True, header_style="bold cyan")
    for col in ("regime", "scaling", "n", "mean", "sd"):
        table.add_column(col)
    for row in frame.itertuples():
        table.add_row(row.regime, row.scaling, str(row.n), _fmt(row.mean_bound, 4), _fmt(row.sd_bound, 4))
    console.print(table)
    return _exit_code([c["status"] for c in cells])


@main.command()
@click.option('--regime', 'regimes', multiple=True, help='Degree regime name:params (repeatable)')
@click.option('--n', 'ns', type=int, multiple=True, help='Network sizes (repeatable)')
@click.option('--seeds', type=int, default=presets.BOUND_SEEDS, show_default=True, help='Graphs per (regime, n)')
@click.option('--scaled/--unscaled', default=None, help='Operator scaling (default: both)')
@click.option('--seed', type=int, default=DEFAULT_SEED, show_default=True, help='Master seed')
@click.option('--out-dir', type=click.Path(file_okay=False), default="results", show_default=True)
@click.option('--verbose', '-v', is_flag=True)
def bounds(regimes, ns, seeds, scaled, seed, out_dir, verbose):
    """Mean and sd of the per-graph covariance upper bound across seeds."""
    if seeds < 1:
        raise _usage("seeds", "must be at least 1")
    regimes = _parse_regimes(regimes) if regimes else presets.bound_regimes()
    ns = list(ns) or list(presets.BOUND_NS)
    _banner("📉 Bound curves", f"{len(regimes)} regimes · n ∈ {ns} · {seeds} seeds")
    tracker.reset()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = {"regime": [r.label for r in regimes], "n": ns, "seeds": seeds, "scaled": scaled, "seed": seed}
    code = _run_bounds(regimes, ns, seeds, _scalings(scaled), seed, out, datetime.now(), config)
    if verbose:
        tracker.print_tree()
    sys.exit(code)


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------

@main.command()
@click.option('--regime', 'regimes', multiple=True, help='Degree regime name:params (repeatable)')
@click.option('--n', 'ns', type=int, multiple=True, help='Network sizes (repeatable)')
@click.option('--beta', type=float, default=0.4666, show_default=True)
@click.option('--reps', type=int, default=200, show_default=True)
@click.option('--scaled/--unscaled', default=None, help='Operator scaling (default: both)')
@click.option('--seed', type=int, default=DEFAULT_SEED, show_default=True)
@click.option('--threads', type=int, default=1, show_default=True)
@click.option('--out-dir', type=click.Path(file_okay=False), default="results", show_default=True)
def curves(regimes, ns, beta, reps, scaled, seed, threads, out_dir):
    """First-stage F, Cov(GY, G2X) and Var(G2X) against n with X redrawn per replication."""
    if reps < 1:
        raise _usage("reps", "must be at least 1")
    regimes = _parse_regimes(regimes) if regimes else [
        Regime(name="constant", params=(d,)) for d in presets.GRID_DEGREES
    ]
    ns = list(ns) or list(presets.GRID_NS)
    _banner("📈 First-stage curves", f"{len(regimes)} regimes · n ∈ {ns} · {reps} reps")
    started = datetime.now()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = ModelParams(beta=beta)
    frames = [
        first_stage_curves(regimes, ns, reps, s == Scaling.SCALED, params, master_seed=seed, threads=threads)
        for s in _scalings(scaled)
    ]
    frame = pd.concat(frames, ignore_index=True)
    path = write_csv(frame, "curves", out)
    statuses = list(frame["status"])
    write_manifest(out, {"regime": [r.label for r in regimes], "n": ns, "beta": beta, "reps": reps,
                         "scaled": scaled, "seed": seed}, seed, started, [path],
                   [{"cell": f"{r.regime}|n={r.n}|{r.scaling}", "status": r.status} for r in frame.itertuples()])
    console.print(f"[green]✓ wrote {path}[/green]")
    sys.exit(_exit_code(statuses))


# --------------------------------------------------------------------------
# graph-stats
# --------------------------------------------------------------------------

@main.command("graph-stats")
@click.argument('edge_list', type=click.Path(exists=True, dir_okay=False))
@click.option('--indexing', type=click.Choice(['zero', 'one']), default='zero', show_default=True)
@click.option('--nodes', 'n', type=int, help='Node count when isolated nodes are not listed')
@click.option('--out', type=click.Path(dir_okay=False), help='Write the summary CSV here')
def graph_stats(edge_list, indexing, n, out):
    """Degree distribution of G and of the friends-of-friends matrix G2."""
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SelfLoopWarning)
            g = load_edge_list(edge_list, indexing=indexing, n=n)
        _surface_warnings(caught)
        rows = graph_stat_rows(g)
    except FofivError as e:
        _fail(str(e))
        sys.exit(EXIT_FAILED)

    table = Table(title=f"Degree statistics · {edge_list}", show_header=True, header_style="bold cyan")
    for col in ("graph", "n", "min", "median", "mean", "mode", "max"):
        table.add_column(col)
    for row in rows:
        table.add_row(*[_fmt(row[c], 4) if isinstance(row[c], float) else str(row[c])
                        for c in ("graph", "n", "min", "median", "mean", "mode", "max")])
    console.print(table)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        to_schema(pd.DataFrame(rows), "graph_stats").to_csv(out, index=False)
        console.print(f"[green]✓ wrote {out}[/green]")
    sys.exit(EXIT_OK)


def graph_stat_rows(g) -> List[Dict[str, Any]]:
    op = NetworkOperator.unscaled(g)
    support, weighted = support_degree_stats(op.square_offdiag)
    rows = []
    for name, summary in (("G", degree_stats(g)), ("G2_support", support), ("G2_weighted", weighted)):
        rows.append({"graph": name, "n": g.n, **summary.as_row()})
    return rows


# --------------------------------------------------------------------------
# diagnose
# --------------------------------------------------------------------------

@main.command()
@click.option('--edges', type=click.Path(exists=True, dir_okay=False), help='Edge list to diagnose')
@click.option('--indexing', type=click.Choice(['zero', 'one']), default='zero', show_default=True)
@click.option('--n', type=int, help='Generate G(n, p) instead of reading an edge list')
@click.option('--regime', help='Degree regime for the generated graph')
@click.option('--beta', type=float, default=0.4666, show_default=True)
@click.option('--scaled/--unscaled', default=False, show_default=True)
@click.option('--seed', type=int, default=DEFAULT_SEED, show_default=True)
@click.option('--out', type=click.Path(dir_okay=False), help='Write the report CSV here')
@click.option('--sample-out', type=click.Path(dir_okay=False),
              help='Simulate one sample on this network and write it as CSV')
def diagnose(edges, indexing, n, regime, beta, scaled, seed, out, sample_out):
    """Spectral, boundary and collinearity report for one network."""
    if edges is None and (n is None or regime is None):
        raise click.UsageError("give --edges, or --n together with --regime")
    try:
        if edges:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", SelfLoopWarning)
                g = load_edge_list(edges, indexing=indexing, n=n)
            _surface_warnings(caught)
        else:
            r = _parse_regimes([regime])[0]
            g = sample_er(n, r.link_probability(n), rng_for(seed, "graph", n, r.label))
        row = diagnose_row(g, beta, scaled)
        sample = simulated_sample(g, beta, scaled, seed) if sample_out else None
    except FofivError as e:
        _fail(str(e))
        sys.exit(EXIT_FAILED)

    table = Table(show_header=False, box=None, padding=(0, 2))
    table.add_column(style="bold cyan")
    table.add_column(style="white")
    for key, value in row.items():
        table.add_row(key, _fmt(value, 6) if isinstance(value, float) else str(value))
    style = "green" if row["status"] == "ok" else "yellow"
    console.print(Panel(table, title=f"[bold {style}]🔬 Diagnostics[/bold {style}]", border_style=style))
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        to_schema(pd.DataFrame([row]), "diagnose").to_csv(out, index=False)
        console.print(f"[green]✓ wrote {out}[/green]")
    if sample is not None:
        Path(sample_out).parent.mkdir(parents=True, exist_ok=True)
        sample.to_frame().to_csv(sample_out, index=False)
        console.print(f"[green]✓ wrote {sample_out}[/green]")
    sys.exit(EXIT_OK)


def simulated_sample(g, beta: float, scaled: bool, seed: int):
    """One draw of (x, eps, y) on g with its instruments, for debugging."""
    op = NetworkOperator.scaled(g) if scaled else NetworkOperator.unscaled(g)
    params = ModelParams(beta=beta)
    x = sample_covariates(g.n, CovariateSpec(), rng_for(seed, "covariates", g.n, "diagnose"))
    eps = sample_errors(g.n, params.sigma_eps, rng_for(seed, "errors", g.n, "diagnose"))
    return build_instruments(op, solve_outcomes(op, params, x, eps))


def diagnose_row(g, beta: float, scaled: bool) -> Dict[str, Any]:
    op = NetworkOperator.scaled(g) if scaled else NetworkOperator.unscaled(g)
    lam = largest_eigenvalue(op)
    row: Dict[str, Any] = {
        "n": g.n,
        "edges": g.num_edges,
        "scaling": "scaled" if scaled else "unscaled",
        "w_n": scale_weight(g),
        "lambda1": lam,
        "beta": beta,
        "beta_lambda1": beta * lam,
        "stability_flag": stability_flag(op, beta, lam).value,
        "boundary_count": None,
        "max_amplification": math.nan,
        "amplified": None,
        "collinearity_angle_deg": collinearity_angle(op),
        "varnorm_cov": math.nan,
        "status": "ok",
    }
    try:
        diag = boundary_diagnostics(op, beta)
        row.update(boundary_count=diag.boundary_count, max_amplification=diag.max_amplification,
                   amplified=diag.amplified)
    except FofivError as e:
        row["status"] = f"spectrum unavailable: {e}"
    try:
        row["varnorm_cov"] = conditional_varnorm_cov(op, ModelParams(beta=beta))
    except FofivError as e:
        row["status"] = f"{type(e).__name__}: {e}"
    return row


if __name__ == "__main__":
    main()
