"""Command-line interface for mapweave."""

import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import click
from pydantic import ValidationError

from mapweave import __version__
from mapweave.config import Config, RuntimeSettings, load_config
from mapweave.core.geometry import BevWindow
from mapweave.core.params import ParameterStore
from mapweave.core.pipeline import (
    SequencePipeline,
    build_parameters,
    ground_truth_records,
    prediction_records,
    train,
)
from mapweave.core.worker_pool import FrameHook, run_sequences_parallel
from mapweave.core.world import Scenario, generate_scenario
from mapweave.errors import ConfigurationError, FormatError, MapWeaveError, NumericError
from mapweave.evaluation.consistency import METRIC_NAME
from mapweave.evaluation.report import APResult, evaluate, write_csv
from mapweave.models.records import group_records
from mapweave.storage.checkpoint import load_checkpoint, save_checkpoint
from mapweave.storage.manifest import RunManifest, read_manifest, write_manifest
from mapweave.storage.memory_dump import dump_memory
from mapweave.storage.prediction_log import write_records
from mapweave.storage.scenario_io import expand_scenario_paths, read_scenario, write_index, write_scenario
from mapweave.utils.logger import get_logger, setup_logging

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

HISTORY_ABLATION_HEADER = ("n", "mAP", METRIC_NAME, "L_pred", "L_pred_zero_offset")
COMPONENT_ABLATION_HEADER = ("variant", "mAP", METRIC_NAME, "L_pred", "L_pred_zero_offset")
COMPONENT_VARIANTS = (
    ("baseline", {"use_saqg": False, "use_hmg": False, "use_stfg": False}),
    ("+SAQG", {"use_saqg": True, "use_hmg": False, "use_stfg": False}),
    ("+HMG", {"use_saqg": True, "use_hmg": True, "use_stfg": False}),
    ("+STFG", {"use_saqg": True, "use_hmg": True, "use_stfg": True}),
)

logger = get_logger(__name__)


def _out_dir(ctx: click.Context, out_dir: Optional[Path], command: str) -> Path:
    if out_dir is not None:
        return out_dir
    return ctx.obj["settings"].output_root / command


def _with_model(config: Config, **changes) -> Config:
    """Copy of ``config`` with validated model-section changes."""
    model = config.model.model_validate({**config.model.model_dump(), **changes})
    return config.model_copy(update={"model": model})


def _load_scenarios(paths: Sequence[Path], config: Config) -> list[Scenario]:
    """Read scenario files and check they fit the configured model.

    Raises:
        ConfigurationError: If a scenario's window, N_p or C disagrees with config
    """
    window = BevWindow.from_config(config.grid)
    scenarios = []
    for path in expand_scenario_paths(list(paths)):
        scenario = read_scenario(path)
        if scenario.window != window:
            raise ConfigurationError(f"{path}: scenario window differs from the configured grid")
        if scenario.n_points != config.model.num_points:
            raise ConfigurationError(
                f"{path}: scenario has {scenario.n_points} points per instance, "
                f"config expects {config.model.num_points}"
            )
        if scenario.channels != config.model.channels:
            raise ConfigurationError(
                f"{path}: scenario has {scenario.channels} feature channels, "
                f"config expects {config.model.channels}"
            )
        scenarios.append(scenario)
    logger.debug("Scenarios loaded", count=len(scenarios))
    return scenarios


def _split_heldout(scenarios: list[Scenario], fraction: float) -> tuple[list[Scenario], list[Scenario]]:
    """Trailing ``fraction`` of scenarios is held out (at least one when possible)."""
    if len(scenarios) < 2 or fraction <= 0:
        logger.warning("No held-out split; evaluating on training scenarios", scenarios=len(scenarios))
        return scenarios, scenarios
    held = min(len(scenarios) - 1, max(1, math.ceil(fraction * len(scenarios))))
    return scenarios[:-held], scenarios[-held:]


def _score(
    config: Config,
    params: ParameterStore,
    scenarios: Sequence[Scenario],
    worker_count: Optional[int] = None,
    frame_hook: Optional[FrameHook] = None,
) -> tuple[list, list, APResult]:
    """Infer every scenario and evaluate; returns (predictions, ground truth, result)."""
    outputs = run_sequences_parallel(scenarios, config, params, worker_count, frame_hook)
    predictions = [
        rec for scenario, out in zip(scenarios, outputs) for rec in prediction_records(scenario.scenario_id, out)
    ]
    ground_truth = [rec for scenario in scenarios for rec in ground_truth_records(scenario)]
    result = evaluate(
        group_records(predictions, ground_truth),
        BevWindow.from_config(config.grid),
        config.world.line_thickness,
    )
    return predictions, ground_truth, result


def _write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _memory_dump_hook(out_dir: Path) -> FrameHook:
    """Per-scenario callbacks writing memory images under ``OUT_DIR/memory``."""

    def hook(scenario: Scenario):
        memory_dir = out_dir / "memory" / scenario.scenario_id

        def on_frame(t, state):
            dump_memory(state.memory, memory_dir / f"frame{t:04d}", t)

        return on_frame

    return hook


def _dump_diagnostic(out_dir: Path, error: NumericError) -> Path:
    path = out_dir / "diagnostic.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"error": str(error), **error.diagnostic}, f, indent=2)
    return path


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--config",
    "-c",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Path to configuration file (defaults to built-in defaults)",
)
@click.option(
    "--log-level",
    type=click.Choice(["trace", "debug", "info", "warning", "error"], case_sensitive=False),
    default=None,
    help="Override the configured log level",
)
@click.pass_context
def cli(ctx, config, log_level):
    """mapweave - temporally consistent online vectorized map construction."""
    ctx.ensure_object(dict)
    settings = RuntimeSettings()
    try:
        cfg = load_config(config)
    except ValueError as e:
        raise click.UsageError(f"Error loading configuration: {e}") from e
    ctx.obj["config"] = cfg
    ctx.obj["config_path"] = config
    ctx.obj["settings"] = settings
    setup_logging(cfg.logging, log_level or settings.log_level)


@cli.command()
@click.option("--count", "-n", type=click.IntRange(min=0), default=8, show_default=True, help="Scenarios to write")
@click.option("--frames", type=click.IntRange(min=1), default=None, help="Frames per scenario")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the first scenario")
@click.option("--speed", type=click.FloatRange(min=0), default=None, help="Ego speed (m/s)")
@click.option("--yaw-rate", type=float, default=None, help="Ego turn rate (rad/s)")
@click.option("--n-lanes", type=click.IntRange(min=1), default=None, help="Lanes on the road")
@click.option("--n-crossings", type=click.IntRange(min=0), default=None, help="Pedestrian crossings")
@click.option("--noise", type=click.FloatRange(min=0), default=None, help="Feature noise sigma")
@click.option("--dropout", type=click.FloatRange(min=0, max=1, max_open=True), default=None, help="Occlusion probability")
@click.option("--out-dir", "-o", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
def generate(ctx, count, frames, seed, speed, yaw_rate, n_lanes, n_crossings, noise, dropout, out_dir):
    """Generate synthetic scenario files plus an index.

    Scenario ``i`` uses seed ``seed + i``, so reruns are byte-identical.
    World parameters default to the configuration's ``world`` section.
    """
    config = ctx.obj["config"]
    out_dir = _out_dir(ctx, out_dir, "scenarios")
    overrides = {
        "frames": frames,
        "speed": speed,
        "yaw_rate": yaw_rate,
        "n_lanes": n_lanes,
        "n_crossings": n_crossings,
        "noise": noise,
        "dropout": dropout,
    }
    world = config.world.model_validate(
        {**config.world.model_dump(), **{k: v for k, v in overrides.items() if v is not None}}
    )

    names = []
    for i in range(count):
        scenario = generate_scenario(
            world,
            config.grid,
            seed=seed + i,
            n_points=config.model.num_points,
            channels=config.model.channels,
        )
        name = f"scenario_{i:04d}.yaml"
        write_scenario(scenario, out_dir / name)
        names.append(name)
    index = write_index(names, out_dir)

    logger.info("Scenarios generated", count=count, out_dir=str(out_dir))
    click.secho(f"✓ Wrote {count} scenario(s) to {out_dir}", fg="green")
    click.echo(f"  Index: {index}")


@cli.command()
@click.argument("scenarios", nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option("--mode", type=click.Choice(["train", "infer"]), default="infer", show_default=True)
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs (train mode)")
@click.option(
    "--checkpoint",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Checkpoint to load (required for infer; optional warm start for train)",
)
@click.option(
    "--checkpoint-out",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Where train mode writes parameters (default: OUT_DIR/checkpoint.txt)",
)
@click.option("--out-dir", "-o", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Concurrent inference workers")
@click.option(
    "--dump-memory",
    "dump_memory_flag",
    is_flag=True,
    default=False,
    help="Write history-memory images per frame (infer)",
)
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Replay a previous run from its manifest",
)
@click.pass_context
def run(ctx, scenarios, mode, epochs, checkpoint, checkpoint_out, out_dir, workers, dump_memory_flag, manifest):
    """Train on or run inference over scenario files.

    Train mode writes a checkpoint and ``losses.csv``. Infer mode writes
    ``predictions.jsonl``, ``ground_truth.jsonl`` and ``results.csv``.
    Every run first writes ``manifest.yaml``; ``--manifest`` replays one.

    Args:
        scenarios: Scenario files, index files or directories
    """
    if manifest is not None:
        replay = read_manifest(manifest)
        config = Config.model_validate(replay.config)
        mode = replay.mode
        epochs = replay.epochs
        scenarios = tuple(Path(p) for p in replay.scenarios)
        checkpoint = Path(replay.checkpoint) if replay.checkpoint else None
        # Outputs of a replay stay under its own out dir
        checkpoint_out = Path(replay.checkpoint_out).name if replay.checkpoint_out else None
        out_dir = out_dir or Path(replay.out_dir)
        click.echo(f"Replaying manifest: {manifest}")
    else:
        config = ctx.obj["config"]
    out_dir = _out_dir(ctx, out_dir, mode)

    if not scenarios:
        raise click.UsageError("No scenarios given")
    if mode == "infer" and checkpoint is None:
        raise click.UsageError("Infer mode needs --checkpoint")
    if mode == "train":
        epochs = config.training.epochs if epochs is None else epochs
        if manifest is not None:
            checkpoint_out = out_dir / (checkpoint_out or "checkpoint.txt")
        checkpoint_out = checkpoint_out or out_dir / "checkpoint.txt"

    scenario_paths = expand_scenario_paths(list(scenarios))
    loaded = _load_scenarios(scenario_paths, config)
    params = build_parameters(config)
    if checkpoint is not None:
        load_checkpoint(params, checkpoint)

    record = RunManifest(
        mode=mode,
        seed=config.training.seed,
        epochs=epochs if mode == "train" else None,
        config=config.snapshot(),
        scenarios=[str(p) for p in scenario_paths],
        checkpoint=str(checkpoint) if checkpoint else None,
        checkpoint_out=str(checkpoint_out) if checkpoint_out else None,
        out_dir=str(out_dir),
    )
    manifest_path = write_manifest(record, out_dir / "manifest.yaml")
    click.echo(f"{mode.capitalize()}: {len(loaded)} scenario(s) -> {out_dir}")

    if mode == "train":
        try:
            history = train(loaded, config, params, epochs)
        except NumericError as e:
            path = _dump_diagnostic(out_dir, e)
            click.secho(f"✗ Diagnostic written to {path}", fg="red", err=True)
            raise
        save_checkpoint(params, checkpoint_out)
        _write_table(
            out_dir / "losses.csv",
            ("epoch", "loss", "track", "seg", "pred"),
            [(s.epoch, repr(s.loss), repr(s.track), repr(s.seg), repr(s.pred)) for s in history],
        )
        if history:
            click.echo(f"  First epoch loss: {history[0].loss:.6f}")
            click.echo(f"  Final epoch loss: {history[-1].loss:.6f}")
        click.secho(f"✓ Checkpoint: {checkpoint_out}", fg="green")
    else:
        frame_hook = _memory_dump_hook(out_dir) if dump_memory_flag else None
        predictions, ground_truth, result = _score(config, params, loaded, workers, frame_hook)
        write_records(predictions, out_dir / "predictions.jsonl")
        write_records(ground_truth, out_dir / "ground_truth.jsonl")
        write_csv(result, out_dir / "results.csv")
        for warning in result.warnings:
            click.secho(f"⊘ {warning}", fg="yellow")
        click.echo(f"  mAP:        {result.mAP:.4f}")
        click.echo(f"  mAP_raster: {result.mAP_raster:.4f}")
        click.echo(f"  {METRIC_NAME}: {result.c_mAP:.4f}")
        click.secho(f"✓ Results: {out_dir / 'results.csv'}", fg="green")

    record.completed_at = datetime.now(timezone.utc)
    write_manifest(record, manifest_path)


def _ablation_row(config: Config, scenarios: list[Scenario], epochs: int, workers: Optional[int]) -> list[str]:
    """Train one variant with the shared seed; score it on the held-out split."""
    train_set, heldout = _split_heldout(scenarios, config.training.heldout_fraction)
    params = build_parameters(config)
    train(train_set, config, params, epochs)
    _, _, result = _score(config, params, heldout, workers)
    futures = SequencePipeline(config, params).evaluate_futures(heldout)
    return [repr(result.mAP), repr(result.c_mAP), repr(futures.predicted), repr(futures.zero_offset)]


def _ablation_setup(ctx, scenarios, epochs, out_dir, command):
    if not scenarios:
        raise click.UsageError("No scenarios given")
    config = ctx.obj["config"]
    loaded = _load_scenarios(scenarios, config)
    epochs = config.training.epochs if epochs is None else epochs
    return config, loaded, epochs, _out_dir(ctx, out_dir, command)


@cli.command()
@click.argument("scenarios", nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option(
    "--n-list",
    default="2,3,4,5,6",
    show_default=True,
    help="Comma-separated history lengths to compare",
)
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs per model")
@click.option("--out-dir", "-o", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.pass_context
def ablate(ctx, scenarios, n_list, epochs, out_dir, workers):
    """Compare history lengths of the future predictor.

    Trains one model per history length with the same seed and epoch
    budget and writes ``ablation_history.csv``.

    Args:
        scenarios: Scenario files, index files or directories
    """
    try:
        lengths = [int(item) for item in n_list.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(f"not a list of integers: {n_list}", param_hint="--n-list") from e
    if not lengths or min(lengths) < 1:
        raise click.BadParameter("history lengths must be positive", param_hint="--n-list")

    config, loaded, epochs, out_dir = _ablation_setup(ctx, scenarios, epochs, out_dir, "ablate")
    rows = []
    for n in lengths:
        click.echo(f"History frames: {n}")
        rows.append([str(n), *_ablation_row(_with_model(config, history_frames=n), loaded, epochs, workers)])
    path = _write_table(out_dir / "ablation_history.csv", HISTORY_ABLATION_HEADER, rows)
    click.secho(f"✓ Ablation table: {path}", fg="green")


@cli.command("ablate-components")
@click.argument("scenarios", nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs per model")
@click.option("--out-dir", "-o", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.pass_context
def ablate_components(ctx, scenarios, epochs, out_dir, workers):
    """Add query generation, history guidance and future guidance one at a time.

    Writes ``ablation_components.csv``.
    """
    config, loaded, epochs, out_dir = _ablation_setup(ctx, scenarios, epochs, out_dir, "ablate-components")
    rows = []
    for name, toggles in COMPONENT_VARIANTS:
        click.echo(f"Variant: {name}")
        rows.append([name, *_ablation_row(_with_model(config, **toggles), loaded, epochs, workers)])
    path = _write_table(out_dir / "ablation_components.csv", COMPONENT_ABLATION_HEADER, rows)
    click.secho(f"✓ Ablation table: {path}", fg="green")


@cli.command()
def version():
    """Show version information."""
    click.echo(f"mapweave v{__version__}")


def _fail(message: str, code: int) -> None:
    click.secho(f"✗ {message}", fg="red", err=True)
    sys.exit(code)


def main(argv: Optional[list[str]] = None) -> None:
    """Entry point for the CLI.

    Exit codes: 0 success, 1 usage or validation, 2 I/O or file format,
    3 non-finite training value.
    """
    try:
        code = cli.main(args=argv, prog_name="mapweave", standalone_mode=False, obj={})
    except click.exceptions.Abort:
        _fail("Aborted", EXIT_USAGE)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_USAGE)
    except NumericError as e:
        _fail(f"Numeric failure: {e}", EXIT_NUMERIC)
    except (OSError, FormatError) as e:
        _fail(f"I/O error: {e}", EXIT_IO)
    except (ValidationError, ValueError, MapWeaveError) as e:
        _fail(f"Invalid input: {e}", EXIT_USAGE)
    else:
        if isinstance(code, int) and code:
            sys.exit(code)


if __name__ == "__main__":
    main()
