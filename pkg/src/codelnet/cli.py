"""
Command-line interface for codelnet.
"""

import csv
import functools
import sys
from pathlib import Path
from typing import Any, Callable, NoReturn, Optional, Sequence

import click
import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from . import __version__
from .config import ConfigError, RunConfig, set_config
from .dataset import (
    GROUPINGS,
    LABEL_NAMES,
    ManifestError,
    SliceRecord,
    SplitError,
    parse_manifest,
    split_dataset,
)
from .gradcheck import GRADCHECK_OPS, NETWORK_OP, run_suite
from .hash import hash_file, verify_hash
from .metrics import (
    ConfusionMatrix,
    UndefinedMetricError,
    accuracy,
    confusion,
    sensitivity,
    specificity,
)
from .network import Network, NetworkBuildError, build_network, predict as predict_func
from .optim import OPTIMIZERS
from .phantom import PhantomConfig, PhantomError, generate_phantom
from .preprocess import CHANNELS, CanvasSizeError, PreprocessError, SliceSample, preprocess_records
from .tensor import DimensionError
from .tensorfile import TensorFileError
from .train import (
    DivergenceError,
    EpochLog,
    TrainingData,
    TrainingError,
    evaluate_samples,
    train_loop,
    write_epoch_log,
)
from .weights import WeightsFormatError, WeightsMismatchError, load_weights, save_weights

console = Console()

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_IO = 2
EXIT_SPLIT = 3
EXIT_DIVERGENCE = 4
EXIT_MISMATCH = 5
EXIT_USAGE = 64

WEIGHTS_FILE = "weights.cdw"
WEIGHTS_HASH_FILE = "weights.xxh64"
EPOCH_LOG_FILE = "epochs.csv"
RUN_CONFIG_FILE = "run.conf"
SPLIT_FILE = "split.csv"
METRICS_FILE = "metrics.csv"


class CodelnetGroup(click.Group):
    """Click group whose usage errors exit with 64."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        kwargs["standalone_mode"] = False
        try:
            return super().main(*args, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            console.print("Aborted")
            sys.exit(1)


def fail(what: str, error: Any, code: int) -> NoReturn:
    """Report a failure and exit with `code`."""
    console.print(f"[red]✗[/red] {what} failed: {error}")
    raise SystemExit(code)


def run_options(f: Callable) -> Callable:
    """Options shared by every command."""
    options = [
        click.option(
            "--config", "config_path",
            type=click.Path(path_type=Path),
            help="Config file of 'key = value' lines",
        ),
        click.option("--seed", type=click.IntRange(min=0), help="Master seed (env: CODELNET_SEED)"),
        click.option("--out", type=click.Path(path_type=Path), help="Output directory"),
        click.option("--workers", type=click.IntRange(min=1), help="Worker threads"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def resolve_config(config_path: Optional[Path], **overrides: Any) -> RunConfig:
    """Layer defaults, environment, config file and flags; exit 64 on bad values."""
    if "out" in overrides and overrides["out"] is not None:
        overrides["out"] = str(overrides["out"])
    if "manifest" in overrides and overrides["manifest"] is not None:
        overrides["manifest"] = str(overrides["manifest"])
    try:
        config = RunConfig.from_sources(config_path, overrides)
    except ConfigError as e:
        fail("Configuration", e, EXIT_USAGE)
    set_config(config)
    return config


def make_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
    )


def load_manifest(path: str) -> list[SliceRecord]:
    if not path:
        fail("Loading manifest", "no manifest given (use --manifest or --config)", EXIT_USAGE)
    try:
        return list(parse_manifest(path))
    except ManifestError as e:
        fail("Loading manifest", e, EXIT_IO)


def preprocess_with_progress(
    records: Sequence[SliceRecord],
    config: RunConfig,
    label: str,
) -> list[SliceSample]:
    """Preprocess records, mapping failures onto exit codes."""
    try:
        with make_progress() as progress:
            task = progress.add_task(label, total=len(records))
            return preprocess_records(
                records,
                channels=config.channel_names,
                canvas=config.resolved_canvas,
                dilation_radius=config.dilation_radius,
                workers=config.workers,
                progress_callback=lambda done, total: progress.update(task, completed=done),
            )
    except CanvasSizeError as e:
        fail("Preprocessing", e, EXIT_MISMATCH)
    except (PreprocessError, TensorFileError, OSError) as e:
        fail("Preprocessing", e, EXIT_IO)


def format_metric(fn: Callable[[ConfusionMatrix], Any], cm: ConfusionMatrix) -> Optional[float]:
    try:
        return float(fn(cm))
    except UndefinedMetricError:
        return None


def metrics_table(title: str, cm: ConfusionMatrix) -> tuple[Table, dict[str, Optional[float]]]:
    values = {
        "sensitivity": format_metric(sensitivity, cm),
        "specificity": format_metric(specificity, cm),
        "accuracy": format_metric(accuracy, cm),
    }
    table = Table(title=title)
    table.add_column("Metric", style="dim")
    table.add_column("Value", justify="right")
    for name, value in values.items():
        table.add_row(name.capitalize(), "undefined" if value is None else f"{value:.2%}")
    table.add_row("TP / FN", f"{cm.tp} / {cm.fn}")
    table.add_row("TN / FP", f"{cm.tn} / {cm.fp}")
    return table, values


@click.group(cls=CodelnetGroup)
@click.version_option(version=__version__)
def main():
    """codelnet - multi-scale CNN pipeline for 1p/19q codeletion classification."""
    pass


@main.command()
@click.option("--patients", type=click.IntRange(min=1), default=30, show_default=True,
              help="Patients per class")
@click.option("--slices", type=click.IntRange(1, 3), default=3, show_default=True,
              help="Slices per patient")
@click.option("--canvas", type=click.IntRange(min=1), default=64, show_default=True,
              help="Canvas the tumors must fit after dilation")
@click.option("--image-size", type=click.IntRange(min=1), default=80, show_default=True,
              help="Side of the generated slices")
@click.option("--radius-min", type=click.FloatRange(min=0, min_open=True), default=6.0,
              show_default=True)
@click.option("--radius-max", type=click.FloatRange(min=0, min_open=True), default=12.0,
              show_default=True)
@click.option("--signal", type=click.FloatRange(0, 1), default=1.0, show_default=True,
              help="Class-cue strength")
@click.option("--noise", type=click.FloatRange(min=0), default=0.1, show_default=True)
@click.option("--jitter", type=click.IntRange(min=0), default=2, show_default=True,
              help="Center jitter in pixels")
@run_options
def phantom(
    patients: int,
    slices: int,
    canvas: int,
    image_size: int,
    radius_min: float,
    radius_max: float,
    signal: float,
    noise: float,
    jitter: int,
    config_path: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    workers: Optional[int],
):
    """Generate a synthetic two-class dataset and its manifest.

    Examples:
        codelnet phantom --patients 30 --seed 7 --out data/phantom
    """
    config = resolve_config(config_path, seed=seed, out=out, workers=workers)
    phantom_config = PhantomConfig(
        patients_per_class=patients,
        slices=slices,
        canvas=canvas,
        image_size=image_size,
        radius_range=(radius_min, radius_max),
        signal=signal,
        noise=noise,
        dilation_radius=config.dilation_radius,
        center_jitter=jitter,
        seed=config.seed,
    )
    try:
        phantom_config.validate()
    except PhantomError as e:
        fail("Phantom generation", e, EXIT_USAGE)

    out_dir = Path(config.out)
    console.print(f"[bold]Generating phantom:[/bold] {2 * patients} patients x {slices} slices")
    try:
        with make_progress() as progress:
            task = progress.add_task("Patients", total=2 * patients)
            result = generate_phantom(
                phantom_config,
                out_dir,
                progress_callback=lambda done, total: progress.update(task, completed=done),
            )
    except OSError as e:
        fail("Phantom generation", e, EXIT_IO)

    table = Table(show_header=False, box=None)
    table.add_column(style="dim")
    table.add_column()
    table.add_row("Records", str(result.records))
    table.add_row("Files", str(result.files_written))
    table.add_row("Duration", f"{result.duration_seconds:.1f}s")
    table.add_row("Manifest", str(result.manifest_path))
    console.print(table)
    console.print("[green]✓[/green] Phantom dataset written")


@main.command()
@click.option("--manifest", type=click.Path(path_type=Path), help="Dataset manifest")
@click.option("--channels", type=click.Choice(list(CHANNELS)), help="Input channels")
@click.option("--optimizer", type=click.Choice(list(OPTIMIZERS)), help="Optimizer")
@click.option("--augment-fold", type=click.IntRange(min=0),
              help="Augmented copies per slice (0: none)")
@click.option("--epochs", type=click.IntRange(min=1), help="Maximum epochs")
@click.option("--canvas", type=click.IntRange(min=1), help="Canvas side in pixels")
@click.option("--preset", type=click.Choice(["desk", "paper"]), help="Architecture preset")
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), help="Base learning rate")
@click.option("--batch-size", type=click.IntRange(min=1), help="Minibatch size")
@click.option("--test-per-class", type=click.IntRange(min=0), help="Held-out test slices per class")
@click.option("--train-per-class", type=click.IntRange(min=0),
              help="Balanced training slices per class per epoch (0: largest possible)")
@click.option("--validation-fraction", type=click.FloatRange(0, 1, max_open=True),
              help="Share of the remaining slices used for validation")
@click.option("--grouping", type=click.Choice(list(GROUPINGS)), help="Split unit")
@run_options
def train(
    manifest: Optional[Path],
    channels: Optional[str],
    optimizer: Optional[str],
    augment_fold: Optional[int],
    epochs: Optional[int],
    canvas: Optional[int],
    preset: Optional[str],
    lr: Optional[float],
    batch_size: Optional[int],
    test_per_class: Optional[int],
    train_per_class: Optional[int],
    validation_fraction: Optional[float],
    grouping: Optional[str],
    config_path: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    workers: Optional[int],
):
    """Split, preprocess and train; writes weights, epoch log and resolved config.

    Examples:
        codelnet train --manifest data/manifest.csv --channels both --optimizer sgd
        codelnet train --config run.conf --augment-fold 30 --out runs/config4
    """
    config = resolve_config(
        config_path,
        manifest=manifest,
        channels=channels,
        optimizer=optimizer,
        augment_fold=augment_fold,
        epochs=epochs,
        canvas=canvas,
        preset=preset,
        lr=lr,
        batch_size=batch_size,
        test_per_class=test_per_class,
        train_per_class=train_per_class,
        validation_fraction=validation_fraction,
        grouping=grouping,
        seed=seed,
        out=out,
        workers=workers,
    )
    out_dir = Path(config.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        fail("Training", e, EXIT_IO)

    console.print(f"[bold]Training run:[/bold] {out_dir}")
    console.print(
        f"  Channels: {config.channels}  Optimizer: {config.optimizer}  "
        f"Augment fold: {config.augment_fold}  Seed: {config.seed}"
    )

    console.print()
    console.print("[bold blue]Phase 1:[/bold blue] Loading manifest...")
    records = load_manifest(config.manifest)
    console.print(f"  Records: {len(records)}")

    console.print("[bold blue]Phase 2:[/bold blue] Splitting dataset...")
    try:
        split = split_dataset(records, config.split_spec())
    except SplitError as e:
        if e.suggestion is not None:
            console.print(f"[yellow]Warning:[/yellow] nearest feasible count is {e.suggestion}")
        fail("Split", e, EXIT_SPLIT)
    console.print(
        f"  Test: {len(split.test)}  Validation: {len(split.validation)}  "
        f"Pool: {len(split.pool)}  Per class per epoch: {split.train_per_class}"
    )
    write_split(split.rows(), out_dir / SPLIT_FILE)

    console.print("[bold blue]Phase 3:[/bold blue] Preprocessing...")
    pool = preprocess_with_progress(split.pool, config, "Pool")
    validation = preprocess_with_progress(split.validation, config, "Validation")

    console.print("[bold blue]Phase 4:[/bold blue] Building network...")
    try:
        net = build_network(config.network_config())
    except NetworkBuildError as e:
        fail("Network build", e, EXIT_MISMATCH)
    console.print(f"  Parameters: {net.num_parameters():,} in {len(net.parameters)} tensors")

    console.print("[bold blue]Phase 5:[/bold blue] Training...")
    train_config = config.train_config()
    try:
        with make_progress() as progress:
            task = progress.add_task("Epochs", total=train_config.max_epochs)

            def on_epoch(log: EpochLog, total: int) -> None:
                val = f" val_loss={log.val_loss:.4f}" if log.val_loss is not None else ""
                progress.update(
                    task,
                    completed=log.epoch + 1,
                    description=f"Epoch {log.epoch + 1} loss={log.train_loss:.4f}{val}",
                )

            result = train_loop(
                net,
                TrainingData(pool=pool, validation=validation, per_class=split.train_per_class),
                train_config,
                augment_params=config.augment_params(),
                workers=config.workers,
                progress_callback=on_epoch,
            )
    except DivergenceError as e:
        fail("Training", e, EXIT_DIVERGENCE)
    except TrainingError as e:
        fail("Training", e, EXIT_SPLIT)
    if result.stopped_early:
        console.print(
            f"[yellow]Warning:[/yellow] validation loss plateaued; stopped after "
            f"{result.epochs_run} epochs"
        )

    console.print("[bold blue]Phase 6:[/bold blue] Saving run...")
    weights_path = save_weights(net, out_dir / WEIGHTS_FILE)
    checksum = hash_file(weights_path)
    (out_dir / WEIGHTS_HASH_FILE).write_text(checksum + "\n", encoding="utf-8")
    write_epoch_log(result.logs, out_dir / EPOCH_LOG_FILE)
    config.write(out_dir / RUN_CONFIG_FILE)

    console.print()
    console.print("[bold]Training Summary[/bold]")
    table = Table(show_header=False, box=None)
    table.add_column(style="dim")
    table.add_column()
    table.add_row("Epochs", str(result.epochs_run))
    table.add_row("Early stop", "yes" if result.stopped_early else "no")
    table.add_row("Duration", f"{result.duration_seconds:.1f}s")
    if result.final is not None:
        final = result.final
        table.add_row("Train loss / acc", f"{final.train_loss:.4f} / {final.train_acc:.2%}")
    table.add_row("Weights xxh64", checksum)
    table.add_row("Output", str(out_dir))
    console.print(table)

    if validation:
        evaluation = evaluate_samples(net, validation, train_config.batch_size)
        cm = confusion(evaluation.predictions, [s.label for s in validation])
        metrics, _ = metrics_table("Validation", cm)
        console.print(metrics)
    console.print("[green]✓[/green] Training completed")


def write_split(rows: Sequence[tuple[str, int, str]], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["patient_id", "slice_index", "subset"])
        writer.writerows(rows)


def run_dir_options(f: Callable) -> Callable:
    """Options naming a finished training run."""
    options = [
        click.option("--run", "run_dir", type=click.Path(path_type=Path),
                     help="Training output directory (default: --out or config 'out')"),
        click.option("--weights", type=click.Path(path_type=Path),
                     help="Weights file (default: RUN/weights.cdw)"),
        click.option("--manifest", type=click.Path(path_type=Path), help="Dataset manifest"),
        click.option("--channels", type=click.Choice(list(CHANNELS)), help="Input channels"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def resolve_run(
    run_dir: Optional[Path],
    config_path: Optional[Path],
    **overrides: Any,
) -> tuple[RunConfig, Path]:
    """Config of a finished run: its run.conf (or --config) plus flag overrides."""
    if run_dir is None:
        run_dir = Path(resolve_config(config_path, **overrides).out)
    if config_path is None and (run_dir / RUN_CONFIG_FILE).is_file():
        config_path = run_dir / RUN_CONFIG_FILE
    overrides.pop("out", None)
    return resolve_config(config_path, **overrides), run_dir


def load_run_network(config: RunConfig, run_dir: Path, weights: Optional[Path]) -> Network:
    weights_path = weights or run_dir / WEIGHTS_FILE
    if not weights_path.is_file():
        fail("Loading weights", f"weights file not found: {weights_path}", EXIT_IO)
    hash_path = weights_path.parent / WEIGHTS_HASH_FILE
    if weights is None and hash_path.is_file():
        if not verify_hash(weights_path, hash_path.read_text(encoding="utf-8")):
            fail("Loading weights", f"{weights_path} does not match {hash_path}", EXIT_MISMATCH)
    try:
        return load_weights(weights_path, config.network_config())
    except (WeightsFormatError, WeightsMismatchError, NetworkBuildError) as e:
        fail("Loading weights", e, EXIT_MISMATCH)
    except OSError as e:
        fail("Loading weights", e, EXIT_IO)


@main.command()
@run_dir_options
@click.option("--subset", type=click.Choice(["test", "validation", "pool", "all"]), default="test",
              show_default=True, help="Which part of the split to evaluate")
@run_options
def evaluate(
    run_dir: Optional[Path],
    weights: Optional[Path],
    manifest: Optional[Path],
    channels: Optional[str],
    subset: str,
    config_path: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    workers: Optional[int],
):
    """Evaluate trained weights on the held-out split; writes metrics.csv.

    The split is recomputed from the run's resolved config, so it matches
    the one used for training.

    Examples:
        codelnet evaluate --run runs/config4
        codelnet evaluate --run runs/config4 --subset validation
    """
    config, run_dir = resolve_run(
        run_dir, config_path, manifest=manifest, channels=channels, seed=seed,
        out=out, workers=workers,
    )
    out_dir = out or run_dir

    net = load_run_network(config, run_dir, weights)
    records = load_manifest(config.manifest)
    try:
        split = split_dataset(records, config.split_spec())
    except SplitError as e:
        fail("Split", e, EXIT_SPLIT)
    chosen = split.subset(subset)
    if not chosen:
        fail("Evaluation", f"subset {subset!r} is empty", EXIT_SPLIT)

    samples = preprocess_with_progress(chosen, config, subset.capitalize())
    try:
        evaluation = evaluate_samples(net, samples, config.batch_size)
    except DimensionError as e:
        fail("Evaluation", e, EXIT_MISMATCH)
    cm = confusion(evaluation.predictions, [s.label for s in samples])
    table, values = metrics_table(f"{subset.capitalize()} ({len(samples)} slices)", cm)
    console.print(table)
    console.print(f"  Mean NLL: {evaluation.loss:.4f}")

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / METRICS_FILE, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(
                ["subset", "samples", "tp", "fp", "tn", "fn", "sensitivity", "specificity",
                 "accuracy", "loss"]
            )
            writer.writerow(
                [subset, cm.total, cm.tp, cm.fp, cm.tn, cm.fn]
                + ["" if values[k] is None else repr(values[k])
                   for k in ("sensitivity", "specificity", "accuracy")]
                + [repr(evaluation.loss)]
            )
    except OSError as e:
        fail("Writing metrics", e, EXIT_IO)
    console.print("[green]✓[/green] Evaluation completed")


@main.command()
@run_dir_options
@run_options
def predict(
    run_dir: Optional[Path],
    weights: Optional[Path],
    manifest: Optional[Path],
    channels: Optional[str],
    config_path: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    workers: Optional[int],
):
    """Print 'id,label,probability' for every slice of a manifest.

    Examples:
        codelnet predict --run runs/config4 --manifest new_slices.csv
    """
    config, run_dir = resolve_run(
        run_dir, config_path, manifest=manifest, channels=channels, seed=seed,
        out=out, workers=workers,
    )
    net = load_run_network(config, run_dir, weights)
    records = load_manifest(config.manifest)
    if not records:
        fail("Prediction", "manifest has no records", EXIT_IO)

    try:
        samples = preprocess_records(
            records,
            channels=config.channel_names,
            canvas=config.resolved_canvas,
            dilation_radius=config.dilation_radius,
            workers=config.workers,
        )
    except CanvasSizeError as e:
        fail("Preprocessing", e, EXIT_MISMATCH)
    except (PreprocessError, TensorFileError, OSError) as e:
        fail("Preprocessing", e, EXIT_IO)

    for start in range(0, len(samples), config.batch_size):
        chunk = samples[start:start + config.batch_size]
        predictions = predict_func(net, np.stack([s.image for s in chunk]))
        for sample, prediction in zip(chunk, predictions):
            click.echo(
                f"{sample.patient_id}:{sample.slice_index},"
                f"{LABEL_NAMES[prediction.label]},{prediction.probability:.6f}"
            )


@main.command()
@click.option("--op", "ops", multiple=True, type=click.Choice(list(GRADCHECK_OPS) + [NETWORK_OP]),
              help="Check only this op (repeatable)")
@click.option("--tolerance", type=click.FloatRange(min=0, min_open=True), default=1e-4,
              show_default=True, help="Max hybrid error for layer ops (network: 10x)")
@click.option("--instances", type=click.IntRange(min=1), default=100, show_default=True,
              help="Random cases per layer op")
@click.option("--network-instances", type=click.IntRange(min=1), default=10, show_default=True,
              help="Random cases for the end-to-end network check")
@run_options
def gradcheck(
    ops: tuple[str, ...],
    tolerance: float,
    instances: int,
    network_instances: int,
    config_path: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    workers: Optional[int],
):
    """Compare analytic gradients with central finite differences.

    Examples:
        codelnet gradcheck
        codelnet gradcheck --op conv2d --op maxpool2d
    """
    config = resolve_config(config_path, seed=seed, out=out, workers=workers)
    selected = list(ops) or list(GRADCHECK_OPS) + [NETWORK_OP]

    reports = []
    with make_progress() as progress:
        for op in selected:
            count = network_instances if op == NETWORK_OP else instances
            task = progress.add_task(op, total=count)
            reports.extend(
                run_suite(
                    [op],
                    tolerance=tolerance,
                    seed=config.seed,
                    instances=count,
                    network_tolerance=tolerance * 10,
                    progress_callback=lambda _op, done, _total, t=task: progress.update(
                        t, completed=done
                    ),
                )
            )

    table = Table(title="Gradient check")
    table.add_column("Op")
    table.add_column("Max hybrid error", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Elements", justify="right")
    table.add_column("")
    for report in reports:
        mark = "[green]✓[/green]" if report.passed else "[red]✗[/red]"
        table.add_row(
            report.op,
            f"{report.max_rel_error:.3e}",
            f"{report.tolerance:.0e}",
            str(report.elements),
            mark,
        )
    console.print(table)

    failed = [r.op for r in reports if not r.passed]
    if failed:
        console.print(f"[red]✗[/red] Gradient check failed for: {', '.join(failed)}")
        raise SystemExit(EXIT_CHECK_FAILED)
    console.print("[green]✓[/green] All gradients match")


if __name__ == "__main__":
    main()
