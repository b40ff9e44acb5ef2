#!/usr/bin/env python3
"""
mask-slic command line.

Segments a volume inside a mask with maskSLIC or one of the whole-image
baselines, scores partitions, clusters cohorts of perfusion series into
shared subregions, builds phantoms and times the backends.

Every failure ends with a single ``ERROR <CODE>: <message>`` line on stderr;
data errors exit 1 and usage errors exit 2. Reports go to stdout as JSON.
"""

import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import colorlog
import numpy as np
from colorama import Fore, Style, just_fix_windows_console

from utils.bench_utils import run_bench
from utils.cohort_utils import (
    CohortCase,
    CohortSettings,
    TemporalSeries,
    descriptors_to_frame,
    run_cohort,
    summarise_clusters,
)
from utils.config_utils import ExperimentConfig, load_config, resolve_threads
from utils.errors import InvalidVolume, MaskSlicError, ZeroBaselineError
from utils.generate_boilerplate import collect_info, write_boilerplate
from utils.io_utils import (
    format_report,
    read_label_grid,
    read_labeling,
    read_manifest,
    read_mask,
    read_volume,
    write_descriptor_table,
    write_label_grid,
    write_labeling,
    write_mask,
    write_report,
    write_volume,
)
from utils.metrics_utils import (
    LC_AGGREGATIONS,
    consistency_score,
    error_increase,
    label_consistency,
)
from utils.phantom_utils import PHANTOM_KINDS, PhantomSpec, make_phantom
from utils.slic_utils import grid_scale, matched_region_count, region_scale, segment
from utils.volume_utils import Backend, FeatureVolume, Mask

logger = logging.getLogger(__name__)

CONTEXT_SETTINGS = {"help_option_names": ["-h", "--help"]}


def setup_logging(
    log_level: int,
    log_dir: Optional[Path] = None,
    log_name: Optional[str] = None,
    console: bool = True,
) -> Optional[Path]:
    """Configure logging for the current run and return the log file path, if any."""

    root_logger = logging.getLogger()
    # Clear existing handlers to avoid duplicate logs when rerunning in the same session
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    handlers: List[logging.Handler] = []
    log_file_path: Optional[Path] = None

    # Windows consoles need ANSI translation; POSIX streams are left untouched
    just_fix_windows_console()

    # File handler: plain log, no logger name, no emoji/color
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        if not log_name:
            log_name = f"mask_slic_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        log_file_path = log_dir / log_name
        file_handler = logging.FileHandler(log_file_path)
        file_handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
        handlers.append(file_handler)

    # Console handler on stderr; stdout is reserved for JSON reports
    if console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(
            colorlog.ColoredFormatter(
                "%(log_color)s%(message)s",
                log_colors={
                    "DEBUG": "white",
                    "INFO": "reset",
                    "WARNING": "yellow",
                    "ERROR": "red",
                    "CRITICAL": "bold_red",
                },
            )
        )
        handlers.append(console_handler)

    for handler in handlers:
        root_logger.addHandler(handler)

    root_logger.setLevel(log_level)
    return log_file_path


@dataclass
class RunContext:
    config: Dict[str, Any]
    threads: int
    config_path: Optional[Path] = None
    argv: List[str] = field(default_factory=list)


class MaskSlicGroup(click.Group):
    """Click group that turns library errors into the one-line error contract."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except MaskSlicError as exc:
            click.echo(f"ERROR {exc.code}: {_one_line(str(exc))}", err=True)
            raise click.exceptions.Exit(1) from exc
        except OSError as exc:
            click.echo(f"ERROR IO: {_one_line(str(exc))}", err=True)
            raise click.exceptions.Exit(1) from exc


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def _emit(report: Dict[str, Any], output: Optional[Path] = None) -> None:
    click.echo(format_report(report))
    if output is not None:
        write_report(report, output)


def _parse_ints(value: Optional[str], name: str) -> Tuple[int, ...]:
    if value is None or value == "":
        return ()
    try:
        return tuple(int(v) for v in value.split(","))
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'", param_hint=name) from exc


def _offset_callback(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> Tuple[int, ...]:
    offset = _parse_ints(value, f"--{param.name}")
    if offset and len(offset) not in (2, 3):
        raise click.BadParameter("offset needs 2 or 3 components (dx,dy[,dz])", param_hint="--offset")
    return offset


def _dims_callback(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> Tuple[int, ...]:
    return _parse_ints(value, f"--{param.name}")


def _feature_volume(path: Path) -> FeatureVolume:
    value = read_volume(path)
    if not isinstance(value, FeatureVolume):
        raise InvalidVolume(f"{path} holds a temporal series; a feature volume is required")
    return value


@click.group(cls=MaskSlicGroup, context_settings=CONTEXT_SETTINGS, name="mask-slic")
@click.option("--verbose", is_flag=True, help="Verbose (DEBUG) logging")
@click.option(
    "--log-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write a plain-text log file into this directory",
)
@click.option(
    "--threads",
    type=click.IntRange(min=0),
    default=None,
    help="Worker threads (0 = physical cores; default from MSLIC_THREADS)",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="YAML/JSON configuration merged over the defaults",
)
@click.pass_context
def main(
    ctx: click.Context,
    verbose: bool,
    log_dir: Optional[Path],
    threads: Optional[int],
    config_path: Optional[Path],
) -> None:
    """maskSLIC supervoxels inside a region of interest."""
    config = load_config(config_path)
    log_dir = log_dir or config.get("system", {}).get("log_dir")
    log_file_path = setup_logging(logging.DEBUG if verbose else logging.INFO, log_dir)
    if threads is None:
        threads = config.get("system", {}).get("threads")
    ctx.obj = RunContext(
        config=config,
        threads=resolve_threads(threads),
        config_path=config_path,
        argv=list(sys.argv[1:]),
    )
    if log_file_path:
        logger.info(f"{Fore.CYAN}📝 Log file: {log_file_path}{Style.RESET_ALL}")
    logger.debug(f"Using {ctx.obj.threads} worker thread(s)")


@main.command("segment", context_settings=CONTEXT_SETTINGS)
@click.argument("volume_path", metavar="VOLUME", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("mask_path", metavar="MASK", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--backend",
    type=click.Choice([b.value for b in Backend]),
    default=None,
    help="maskslic (default), naive1 (whole-image SLIC cut to the mask) or naive2 (grid seeds in the mask)",
)
@click.option("--n-regions", type=click.IntRange(min=1), default=None, help="Number of regions N")
@click.option("--compactness", type=float, default=None, help="Compactness r")
@click.option(
    "--compactness-per-scale",
    type=float,
    default=None,
    help="Set r = value x S, with S the region scale of the run",
)
@click.option("--max-iters", type=click.IntRange(min=1), default=None, help="Clustering iterations")
@click.option("--residual-tol", type=click.FloatRange(min=0.0), default=None, help="Stop once the mean center movement drops below this")
@click.option("--no-connectivity", is_flag=True, help="Skip connectivity enforcement")
@click.option("--standardize", is_flag=True, help="Z-score feature channels over the mask first")
@click.option(
    "--match-naive1",
    type=click.IntRange(min=1),
    default=None,
    help="Use as N the number of in-mask regions naive1 yields for this whole-image count",
)
@click.option("--report", "report_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write the run report (JSON)")
@click.option("--boilerplate", is_flag=True, help="Write boilerplate.md/json next to OUTPUT")
@click.pass_obj
def segment_command(
    run: RunContext,
    volume_path: Path,
    mask_path: Path,
    output: Path,
    backend: Optional[str],
    n_regions: Optional[int],
    compactness: Optional[float],
    compactness_per_scale: Optional[float],
    max_iters: Optional[int],
    residual_tol: Optional[float],
    no_connectivity: bool,
    standardize: bool,
    match_naive1: Optional[int],
    report_path: Optional[Path],
    boilerplate: bool,
) -> None:
    """Segment VOLUME inside MASK and write the labeling to OUTPUT."""
    experiment = ExperimentConfig.from_dict(
        run.config,
        overrides={
            "backend": backend,
            "n_regions": n_regions,
            "compactness": compactness,
            "compactness_per_scale": compactness_per_scale,
            "max_iters": max_iters,
            "residual_tol": residual_tol,
            "enforce_connectivity": False if no_connectivity else None,
            "standardize": True if standardize else None,
            "threads": run.threads,
            "inputs": {"volume": str(volume_path), "mask": str(mask_path)},
            "outputs": {"labeling": str(output)},
        },
    )
    volume = _feature_volume(volume_path)
    mask = read_mask(mask_path)
    if experiment.standardize:
        volume = volume.standardized(mask)

    if match_naive1 is not None:
        baseline = ExperimentConfig(**{**experiment.__dict__, "backend": Backend.NAIVE_WHOLE_IMAGE.value, "n_regions": match_naive1})
        baseline_scale = grid_scale(volume.dims, match_naive1, volume.spacing)
        experiment.n_regions = matched_region_count(volume, mask, baseline.slic_params(baseline_scale))
        logger.info(
            f"{Fore.CYAN}🔢 naive1 with {match_naive1} regions leaves {experiment.n_regions} in the mask{Style.RESET_ALL}"
        )

    if Backend(experiment.backend) is Backend.MASK_SLIC:
        scale = region_scale(mask, experiment.n_regions, volume.spacing)
    else:
        scale = grid_scale(volume.dims, experiment.n_regions, volume.spacing)
    params = experiment.slic_params(scale)
    logger.info(
        f"{Fore.MAGENTA}🧩 {params.backend.value}: N={params.n_regions} r={params.compactness:.6g} "
        f"on {mask.count} mask voxels{Style.RESET_ALL}"
    )
    result = segment(volume, mask, params)

    output.parent.mkdir(parents=True, exist_ok=True)
    write_labeling(result.labeling, output, volume.spacing)
    logger.info(f"{Fore.GREEN}✅ Wrote {result.num_regions} regions to {output}{Style.RESET_ALL}")

    report = {
        "backend": params.backend.value,
        "n_regions": params.n_regions,
        "num_regions": result.num_regions,
        "compactness": params.compactness,
        "region_scale": result.region_scale,
        "iterations": result.state.iterations,
        "objective": result.state.history,
    }
    _emit(report, report_path)
    if boilerplate:
        info = collect_info(
            "segment",
            run.argv,
            run.config,
            experiment.inputs,
            experiment.outputs,
            str(run.config_path) if run.config_path else None,
        )
        for path in write_boilerplate(info, output.parent):
            logger.info(f"{Fore.CYAN}📄 Boilerplate: {path}{Style.RESET_ALL}")


@main.group("metrics", context_settings=CONTEXT_SETTINGS)
def metrics_group() -> None:
    """Partition quality metrics."""


@metrics_group.command("cs", context_settings=CONTEXT_SETTINGS)
@click.argument("s1", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("s2", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--offset", default=None, callback=_offset_callback, help="Shift of S2 relative to S1: dx,dy[,dz]")
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also write the report here")
def metrics_cs(s1: Path, s2: Path, offset: Tuple[int, ...], output: Optional[Path]) -> None:
    """Translation consistency C_s of S2 against S1."""
    report = consistency_score(read_labeling(s1), read_labeling(s2), offset or None)
    _emit(report.to_dict(), output)


@metrics_group.command("lc", context_settings=CONTEXT_SETTINGS)
@click.argument("labels", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--lc-agg", type=click.Choice(LC_AGGREGATIONS), default=None, help="How per-region l_c values are summarised")
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Restrict to this mask (default: labelled voxels)")
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also write the report here")
@click.pass_obj
def metrics_lc(
    run: RunContext,
    labels: Path,
    truth: Path,
    lc_agg: Optional[str],
    mask_path: Optional[Path],
    output: Optional[Path],
) -> None:
    """Label consistency of LABELS against the ground truth grid TRUTH."""
    labeling = read_labeling(labels)
    mask = read_mask(mask_path) if mask_path else Mask(labeling.labels >= 0)
    aggregation = lc_agg or run.config.get("metrics", {}).get("lc_aggregation", "voxel-mean")
    report = label_consistency(labeling, read_label_grid(truth), mask, aggregation)
    _emit(report.to_dict(), output)


@metrics_group.command("e", context_settings=CONTEXT_SETTINGS)
@click.argument("e_baseline", type=float)
@click.argument("e_method", type=float)
def metrics_e(e_baseline: float, e_method: float) -> None:
    """Percentage error increase of a baseline over a method."""
    try:
        value = error_increase(e_baseline, e_method)
    except ZeroBaselineError:
        logger.warning(f"{Fore.YELLOW}⚠️  Method error is 0; reporting an unbounded increase{Style.RESET_ALL}")
        value = float("inf")
    _emit({"E": value})


@main.command("cluster-cohort", context_settings=CONTEXT_SETTINGS)
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("output_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--k", type=click.IntRange(min=1), default=None, help="Number of cohort subregions")
@click.option("--pca-components", type=click.IntRange(min=1), default=None, help="Temporal PCA components")
@click.option("--mode", type=click.Choice(["supervoxel", "voxel"]), default=None, help="Cluster supervoxels or single voxels")
@click.option("--n-regions", type=click.IntRange(min=1), default=None, help="Supervoxels per case")
@click.option("--compactness", type=float, default=None, help="Compactness r for per-case maskSLIC")
@click.option("--baseline-frames", type=click.IntRange(min=0), default=None, help="Subtract the mean of the first frames from every curve")
@click.option("--no-standardize", is_flag=True, help="Cluster raw descriptor values")
@click.pass_obj
def cluster_cohort(
    run: RunContext,
    manifest: Path,
    output_dir: Path,
    k: Optional[int],
    pca_components: Optional[int],
    mode: Optional[str],
    n_regions: Optional[int],
    compactness: Optional[float],
    baseline_frames: Optional[int],
    no_standardize: bool,
) -> None:
    """Cluster the cases listed in MANIFEST into shared subregions."""
    defaults = run.config.get("cohort", {})
    settings = CohortSettings(
        k=k if k is not None else defaults.get("k", 4),
        mode=mode or defaults.get("mode", "supervoxel"),
        n_components=pca_components if pca_components is not None else defaults.get("pca_components", 3),
        n_regions=n_regions if n_regions is not None else defaults.get("n_regions", 50),
        compactness=compactness if compactness is not None else defaults.get("compactness", 1.0),
        baseline_frames=baseline_frames if baseline_frames is not None else defaults.get("baseline_frames", 0),
        standardize=False if no_standardize else defaults.get("standardize", True),
        kmeans_max_iters=defaults.get("kmeans_max_iters", 100),
        n_jobs=run.threads,
        show_progress=True,
    )

    cases = []
    for row in read_manifest(manifest):
        series = read_volume(row["series"])
        if not isinstance(series, TemporalSeries):
            raise InvalidVolume(f"{row['series']} is not a temporal series")
        features = _feature_volume(Path(row["features"])) if row.get("features") else None
        cases.append(CohortCase(row["case_id"], series, read_mask(row["mask"]), features))
    logger.info(f"{Fore.CYAN}👥 Loaded {len(cases)} case(s) from {manifest}{Style.RESET_ALL}")

    result = run_cohort(cases, settings)

    output_dir.mkdir(parents=True, exist_ok=True)
    for case in cases:
        spacing = case.series.spacing
        write_labeling(result.maps[case.case_id], output_dir / f"{case.case_id}_cohort.mslc", spacing)
        if settings.mode == "supervoxel":
            write_labeling(result.supervoxels[case.case_id], output_dir / f"{case.case_id}_supervoxels.mslc", spacing)
    if settings.mode == "supervoxel":
        write_descriptor_table(descriptors_to_frame(result.descriptors), output_dir / "descriptors.csv")
    summary = summarise_clusters(result.descriptors, result.clustering)
    summary.to_csv(output_dir / "cluster_summary.csv", index=False, float_format="%.9g")

    report = {
        "k": settings.k,
        "mode": settings.mode,
        "n_items": int(result.clustering.assignment.size),
        "inertia": result.clustering.inertia,
        "iterations": result.clustering.iterations,
        "cases": [case.case_id for case in cases],
    }
    write_report(report, output_dir / "cohort_report.json")
    logger.info(f"{Fore.GREEN}✅ Cohort outputs written to {output_dir}{Style.RESET_ALL}")
    _emit(report)


@main.command("phantom", context_settings=CONTEXT_SETTINGS)
@click.argument("output_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--spec", "kind", type=click.Choice(PHANTOM_KINDS), default=None, help="Phantom kind")
@click.option("--seed", type=int, default=None, help="Random seed")
@click.option("--dims", default=None, callback=_dims_callback, help="Grid size, e.g. 48,48,48")
@click.option("--noise", type=float, default=None, help="Noise as a fraction of the contrast")
@click.option("--offset", default=None, callback=_offset_callback, help="Translation of the blobs2d content and mask")
@click.option("--archetypes", type=click.IntRange(min=1), default=3, show_default=True, help="perfusion4d archetype count")
@click.option("--frames", type=click.IntRange(min=1), default=30, show_default=True, help="perfusion4d frame count")
@click.pass_obj
def phantom_command(
    run: RunContext,
    output_dir: Path,
    kind: Optional[str],
    seed: Optional[int],
    dims: Tuple[int, ...],
    noise: Optional[float],
    offset: Tuple[int, ...],
    archetypes: int,
    frames: int,
) -> None:
    """Write a synthetic phantom (volume.mslc, mask.mslc, truth.mslc)."""
    defaults = run.config.get("phantom", {})
    kind = kind or defaults.get("spec", "blobs2d")
    seed = seed if seed is not None else int(defaults.get("seed", 0))
    spec = PhantomSpec(kind, dims, noise, offset, archetypes, frames)
    phantom = make_phantom(spec, seed)

    output_dir.mkdir(parents=True, exist_ok=True)
    spacing = phantom.volume.spacing
    write_volume(phantom.volume, output_dir / "volume.mslc")
    write_mask(phantom.mask, output_dir / "mask.mslc", spacing)
    write_label_grid(phantom.truth, output_dir / "truth.mslc", spacing)
    logger.info(f"{Fore.GREEN}✅ {kind} phantom written to {output_dir}{Style.RESET_ALL}")
    _emit(
        {
            "spec": kind,
            "seed": seed,
            "dims": list(phantom.mask.dims),
            "mask_voxels": phantom.mask.count,
            "labels": int(np.unique(phantom.truth[phantom.truth >= 0]).size),
        }
    )


@main.command("bench", context_settings=CONTEXT_SETTINGS)
@click.argument("volume_path", metavar="VOLUME", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("mask_path", metavar="MASK", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--n-regions", type=click.IntRange(min=1), default=None, help="Number of regions N")
@click.option("--compactness", type=float, default=None, help="Compactness r")
@click.option("--repeats", type=click.IntRange(min=1), default=None, help="Timed runs per backend")
@click.pass_obj
def bench_command(
    run: RunContext,
    volume_path: Path,
    mask_path: Path,
    n_regions: Optional[int],
    compactness: Optional[float],
    repeats: Optional[int],
) -> None:
    """Median wall time of maskSLIC against whole-image SLIC."""
    slic = run.config.get("slic", {})
    report = run_bench(
        _feature_volume(volume_path),
        read_mask(mask_path),
        n_regions=n_regions or int(slic.get("n_regions", 100)),
        compactness=compactness if compactness is not None else float(slic.get("compactness", 10.0)),
        repeats=repeats or int(run.config.get("bench", {}).get("repeats", 5)),
        n_jobs=run.threads,
    )
    verdict = report.mask_slic_not_slower
    colour = Fore.GREEN if verdict else Fore.YELLOW
    logger.info(f"{colour}⏱️  maskSLIC not slower than whole-image SLIC: {verdict}{Style.RESET_ALL}")
    _emit(report.to_dict())


def cli_run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        rv = main.main(args=args, prog_name="mask-slic", standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"ERROR USAGE: {_one_line(exc.format_message())}", err=True)
        return 2
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        click.echo("ERROR ABORTED: interrupted", err=True)
        return 1
    except MaskSlicError as exc:
        click.echo(f"ERROR {exc.code}: {_one_line(str(exc))}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"ERROR IO: {_one_line(str(exc))}", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


def run() -> None:
    """Console-script entry point."""
    sys.exit(cli_run())


if __name__ == "__main__":
    run()
