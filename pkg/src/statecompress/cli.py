"""Command-line interface: ``statecompress <subcommand> ...``.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
"""
from __future__ import annotations

import functools
import json
import warnings
from pathlib import Path
from typing import Optional

import click
import numpy as np

from statecompress import io as sio
from statecompress import synth, taxi
from statecompress.errors import NumericalError, StateCompressError, ValidationError
from statecompress.experiments import SweepConfig, run_sweep, summary_json
from statecompress.kmeans import KMeansConfig
from statecompress.markov import (
    as_trajectory,
    chain_diagnostics,
    empirical_counts,
    simulate_trajectory,
    stationary_distribution,
    to_stochastic,
    transition_from_counts,
)
from statecompress.metrics import misclassification_rate
from statecompress.spectral import (
    estimate_low_rank_matrix,
    leading_subspaces,
    spectral_lumpable_partition,
    spectral_state_aggregation,
)

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
# mixing-time search inside diagnostics stops here; the CLI must stay responsive
DIAGNOSTIC_MAX_STEPS = 10_000


class CliFailure(click.ClickException):
    def __init__(self, message, exit_code):
        super().__init__(message)
        self.exit_code = exit_code


def handled(fn):
    """Map package errors to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as exc:
            raise CliFailure(f"numerical failure: {exc}", EXIT_NUMERICAL) from exc
        except (ValidationError, StateCompressError) as exc:
            raise CliFailure(str(exc), EXIT_VALIDATION) from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise CliFailure(str(exc), EXIT_VALIDATION) from exc

    return wrapper


def _load_transition(path) -> np.ndarray:
    M = sio.read_matrix(path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        P, renormalized = to_stochastic(M)
    if renormalized:
        click.echo(f"warning: {caught[0].message if caught else 'rows renormalized'}", err=True)
    return P


def _load_traj(path, p):
    return as_trajectory(sio.read_trajectory(path), p)


def _kmeans_config(restarts, seed):
    return KMeansConfig(restarts=restarts, seed=seed)


input_opt = click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
output_opt = click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
rank_opt = click.option("-r", "r", required=True, type=click.IntRange(min=1), help="Rank / number of blocks.")
states_opt = click.option("-p", "p", type=click.IntRange(min=1), default=None, help="State-space size (default: max state + 1).")
seed_opt = click.option("--seed", type=int, default=0, show_default=True)
restarts_opt = click.option("--restarts", type=click.IntRange(min=1), default=20, show_default=True, help="k-means restarts.")


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Spectral estimation and state compression for finite Markov chains."""


@cli.command()
@input_opt
@output_opt
@click.option("-n", "n", required=True, type=click.IntRange(min=1), help="Number of transitions.")
@click.option("--initial", default="0", show_default=True, help="Start state index, or 'stationary'.")
@seed_opt
@handled
def simulate(input_path, output_path, n, initial, seed):
    """Simulate a trajectory of N transitions from a transition matrix file."""
    P = _load_transition(input_path)
    if initial == "stationary":
        start = stationary_distribution(P).probs
    else:
        try:
            start = int(initial)
        except ValueError:
            raise ValidationError(f"--initial must be a state index or 'stationary', got {initial!r}") from None
    traj = simulate_trajectory(P, start, n, seed)
    sio.write_trajectory(traj.states, output_path)


@cli.command()
@click.option("--generator", type=click.Choice(["low_rank", "imbalanced", "aggregatable", "lumpable"]), required=True)
@click.option("-p", "p", required=True, type=click.IntRange(min=1))
@rank_opt
@click.option("--delta", type=float, default=4.0, show_default=True, help="Imbalance factor (imbalanced only).")
@seed_opt
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@handled
def generate(generator, p, r, delta, seed, output_dir):
    """Draw a ground-truth chain; writes P.csv, chain.json and truth.csv (when partitioned)."""
    if generator == "low_rank":
        chain = synth.gen_low_rank_chain(p, r, seed)
    elif generator == "imbalanced":
        chain = synth.gen_imbalanced_chain(p, r, delta, seed)
    elif generator == "aggregatable":
        chain = synth.gen_aggregatable_chain(p, r, seed)
    else:
        chain = synth.gen_lumpable_chain(p, r, seed)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_matrix(chain.P, out / "P.csv")
    sio.write_json(sio.chain_bundle(chain, generator=generator, seed=seed, r=r), out / "chain.json")
    if chain.partition is not None:
        sio.write_partition(chain.partition, out / "truth.csv")


@cli.command()
@input_opt
@output_opt
@rank_opt
@states_opt
@click.option("--with-empirical", is_flag=True, help="Also emit the empirical F~ and P~.")
@handled
def estimate(input_path, output_path, r, p, with_empirical):
    """Spectral low-rank estimate of F and P from a trajectory."""
    traj = _load_traj(input_path, p)
    counts = empirical_counts(traj)
    F_tilde = counts / traj.n_transitions
    est = estimate_low_rank_matrix(F_tilde, r)
    try:
        diagnostics = chain_diagnostics(est.P_hat, r, max_steps=DIAGNOSTIC_MAX_STEPS).to_dict()
    except (StateCompressError, np.linalg.LinAlgError) as exc:
        diagnostics = {"error": str(exc)}
    out = {
        "p": traj.p,
        "n": traj.n_transitions,
        "r": r,
        "F_hat": sio.matrix_envelope(est.F_hat, "frequency"),
        "P_hat": sio.matrix_envelope(est.P_hat, "stochastic"),
        "diagnostics": diagnostics,
    }
    if with_empirical:
        out["F_tilde"] = sio.matrix_envelope(F_tilde, "frequency")
        out["P_tilde"] = sio.matrix_envelope(transition_from_counts(counts), "stochastic")
    sio.write_json(out, output_path)


@cli.command()
@input_opt
@output_opt
@rank_opt
@states_opt
@handled
def subspaces(input_path, output_path, r, p):
    """Leading left/right singular subspaces of the empirical F and P."""
    traj = _load_traj(input_path, p)
    bases = leading_subspaces(traj, r)
    out = {
        name: sio.matrix_envelope(b.basis, "basis", side=b.side, source=b.source)
        for name, b in bases.as_dict().items()
    }
    sio.write_json(out, output_path)


def _partition_command(kind):
    @input_opt
    @output_opt
    @rank_opt
    @states_opt
    @restarts_opt
    @seed_opt
    @click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Partition CSV to score against (misclassification rate).")
    @handled
    def command(input_path, output_path, r, p, restarts, seed, truth):
        traj = _load_traj(input_path, p)
        truth_part = None
        if truth is not None:
            truth_part = sio.read_partition(truth)
            if truth_part.p != traj.p:
                raise ValidationError(f"--truth lists {truth_part.p} states but the trajectory has {traj.p}")
        cfg = _kmeans_config(restarts, seed)
        if kind == "aggregate":
            part = spectral_state_aggregation(traj, r, cfg)
        else:
            part = spectral_lumpable_partition(traj, r, cfg)
        sio.write_partition(part, output_path)
        if truth_part is not None:
            click.echo(f"misclassification_rate={misclassification_rate(truth_part, part)!r}")

    return command


cli.command("aggregate", help="Spectral state aggregation: k-means on the left features of P~.")(
    _partition_command("aggregate")
)
cli.command("lump", help="Spectral lumpable partition: k-means on the right features of F~.")(
    _partition_command("lump")
)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Override the config's worker count.")
@handled
def bench(config_path, output_dir, workers):
    """Run a sweep from a JSON config; writes sweep.csv and summary.json."""
    try:
        raw = json.loads(Path(config_path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{config_path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValidationError("bench config must be a JSON object")
    if workers is not None:
        raw["workers"] = workers
    config = SweepConfig.from_dict(raw)
    result = run_sweep(config)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(result.to_csv())
    (out / "summary.json").write_text(summary_json(result))
    if result.degraded:
        click.echo(f"warning: degraded cells {result.degraded_cells}", err=True)


def _parse_bbox(text: Optional[str]):
    if text is None:
        return {}
    try:
        lat_min, lat_max, lon_min, lon_max = (float(x) for x in text.split(","))
    except ValueError:
        raise ValidationError("--bbox must be 'lat_min,lat_max,lon_min,lon_max'") from None
    return dict(lat_min=lat_min, lat_max=lat_max, lon_min=lon_min, lon_max=lon_max)


@cli.command("taxi")
@input_opt
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@rank_opt
@click.option("--method", type=click.Choice(["aggregate", "lump"]), default="aggregate", show_default=True)
@click.option("--segments", is_flag=True, help="Split into morning/afternoon/evening.")
@click.option("--segment-spec", default=None, help="Custom segments 'name=HH:MM-HH:MM,...' (implies --segments).")
@click.option("--grid-cell-lat", type=float, default=None, help="Cell height in degrees (default 0.0018).")
@click.option("--grid-cell-lon", type=float, default=None, help="Cell width in degrees (default 0.0022).")
@click.option("--bbox", default=None, help="lat_min,lat_max,lon_min,lon_max (default: Manhattan).")
@click.option("--min-visits", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "geojson"]), default="csv", show_default=True)
@click.option("--utc-offset", type=float, default=0.0, show_default=True, help="Hours added to pickup times.")
@restarts_opt
@seed_opt
@handled
def taxi_cmd(input_path, output_dir, r, method, segments, segment_spec, grid_cell_lat, grid_cell_lon, bbox,
             min_visits, fmt, utc_offset, restarts, seed):
    """Trip CSV -> grid states -> transition matrices -> partition exports."""
    grid_kwargs = _parse_bbox(bbox)
    if grid_cell_lat is not None:
        grid_kwargs["cell_lat"] = grid_cell_lat
    if grid_cell_lon is not None:
        grid_kwargs["cell_lon"] = grid_cell_lon
    grid = taxi.GridSpec(**grid_kwargs)
    segs = None
    if segment_spec is not None:
        segs = taxi.parse_segments(segment_spec)
    elif segments:
        segs = list(taxi.DEFAULT_SEGMENTS)
    outputs = taxi.run_pipeline(
        input_path, r, grid=grid, min_visits=min_visits, segments=segs, method=method,
        kmeans_config=_kmeans_config(restarts, seed), utc_offset_hours=utc_offset,
    )
    root = Path(output_dir)
    for seg in outputs:
        d = root / seg.name if segs is not None else root
        d.mkdir(parents=True, exist_ok=True)
        (d / "counts.csv").write_text(sio.format_matrix_csv(seg.counts.counts))
        sio.write_json(sio.matrix_envelope(seg.counts.F_tilde, "frequency"), d / "F_tilde.json")
        sio.write_json(sio.matrix_envelope(seg.counts.P_tilde, "stochastic"), d / "P_tilde.json")
        lat_idx, lon_idx = grid.indices(seg.state_map.cells)
        lines = ["state,cell,cell_lat_index,cell_lon_index,visits"]
        lines += [f"{s},{c},{i},{j},{v}" for s, (c, i, j, v) in
                  enumerate(zip(seg.state_map.cells, lat_idx, lon_idx, seg.state_map.visits))]
        (d / "states.csv").write_text("\n".join(lines) + "\n")
        taxi.export_partition(seg.state_map, seg.partition, grid, d / f"partition.{fmt}", fmt)
        report = {
            "segment": seg.name,
            "p": seg.state_map.p,
            "r": r,
            "method": method,
            "counters": vars(seg.counters),
            "counters_reconcile": seg.counters.reconciles(),
            "grid": grid.to_dict(),
            "grid_note": "bounding box and cell sizes are artifact defaults unless overridden",
            "min_visits": min_visits,
        }
        sio.write_json(report, d / "report.json")


def main(argv=None):
    return cli.main(args=argv, prog_name="statecompress")


if __name__ == "__main__":
    main()
