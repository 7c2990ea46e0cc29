"""Command-line entry point: synthesize, train, evaluate, ablate, predict and verify."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
import torch
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from auxvae.acceptance import run_acceptance
from auxvae.ablation import get_setting, run_ablation, table_frame
from auxvae.checkpoint import CheckpointManifest, load_model
from auxvae.config import FULL_MODEL, AblationSetting, RunConfig, load_config, model_hash
from auxvae.data import load_dataset, prepare_window, read_matrix, save_dataset, select, to_tensors
from auxvae.errors import AuxVAEError, CheckpointError
from auxvae.inference import EvalReport, evaluate, inspect_trials, predict_load, predictions_frame
from auxvae.models import GaitWindow, style_names
from auxvae.model import AuxVAE
from auxvae.substrate import new_generator
from auxvae.synth import generate_dataset
from auxvae.training import LopoResult, job_seeds, metrics_frame, run_lopo
from auxvae.verification import run_suite
from auxvae.version import __version__

logger = logging.getLogger(__name__)

app = typer.Typer(help="Hand-load estimation from gait with baseline fusion and style marginalization.")
console = Console()

ConfigOption = typer.Option(None, "--config", "-c", help="Run configuration JSON document")
DataDirOption = typer.Option(None, "--data-dir", help="Dataset directory")
OutputDirOption = typer.Option(None, "--output-dir", "-o", help="Output directory (or AUXVAE_OUTPUT_DIR)")
SeedOption = typer.Option(None, "--seed", help="Global seed")
FoldsOption = typer.Option(None, "--folds", help="Only the first N leave-one-participant-out folds")
EpochsOption = typer.Option(None, "--epochs", help="Override max_epochs")


@app.callback()
def main(
    log_level: str = typer.Option(os.getenv("LOG_LEVEL", "INFO"), "--log-level", help="Logging level"),
):
    logging.basicConfig(
        level=log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def _load(
    config: Optional[Path],
    data_dir: Optional[Path] = None,
    output_dir: Optional[Path] = None,
    seed: Optional[int] = None,
    folds: Optional[int] = None,
    epochs: Optional[int] = None,
) -> RunConfig:
    try:
        return load_config(config).with_overrides(
            data_dir=data_dir, output_dir=output_dir, seed=seed, folds=folds, epochs=epochs
        )
    except ValidationError as e:
        console.print(f"[red]Invalid configuration {config}:[/red]")
        for error in e.errors():
            console.print(f"  {'.'.join(map(str, error['loc']))}: {error['msg']}")
        raise typer.Exit(2)
    except OSError as e:
        console.print(f"[red]Cannot read {config}: {e}[/red]")
        raise typer.Exit(2)


def _provenance(cfg: RunConfig) -> Dict[str, Any]:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "code_version": __version__}


def _fail(error: Exception) -> typer.Exit:
    console.print(f"[red]{type(error).__name__}: {error}[/red]")
    return typer.Exit(1)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")


def _write_json(payload: Dict[str, Any], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _fmt(mean: Optional[float], std: Optional[float], digits: int = 3) -> str:
    if mean is None:
        return "N/A"
    return f"{mean:.{digits}f} (±{std or 0.0:.{digits}f})"


def _all_predictions(result: LopoResult, provenance: Dict[str, Any]) -> pd.DataFrame:
    frames = []
    for r in result.results:
        frame = predictions_frame(r.evaluation, provenance)
        frame.insert(0, "repeat", r.repeat)
        frame.insert(0, "fold", r.held_out)
        frame.insert(0, "setting", result.setting.name)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def _summary(result: LopoResult, provenance: Dict[str, Any]) -> Dict[str, Any]:
    return {
        **provenance,
        "setting": result.setting.model_dump(mode="json"),
        "mae_lbs": None if result.mae is None else result.mae.model_dump(),
        "style_accuracy": None if result.style_accuracy is None else result.style_accuracy.model_dump(),
        "failures": result.failures,
        "jobs": [
            {
                "fold": r.held_out,
                "repeat": r.repeat,
                "mae_lbs": r.evaluation.mae_lbs,
                "style_accuracy": r.evaluation.style_accuracy,
                "mae_by_load": r.evaluation.mae_by_load,
                "mae_by_style": r.evaluation.mae_by_style,
                "style_confusion": r.evaluation.style_confusion,
                "checkpoint": r.train.checkpoint,
                "leakage_violations": r.leakage_violations,
            }
            for r in result.results
        ],
    }


def _run_with_spinner(description: str, fn, *args, **kwargs):
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
        progress.add_task(description, total=None)
        return fn(*args, **kwargs)


@app.command()
def synth(
    config: Optional[Path] = ConfigOption,
    data_dir: Optional[Path] = DataDirOption,
    seed: Optional[int] = SeedOption,
):
    """Generate a synthetic cohort and write it in the dataset format."""
    cfg = _load(config, data_dir=data_dir, seed=seed)
    layout = cfg.layout.to_layout()
    records = generate_dataset(cfg.synth, layout, seed=cfg.synth_seed())
    path = save_dataset(records, layout, cfg.paths.data_dir, cfg.synth.num_styles, provenance=_provenance(cfg))
    trials = sum(len(r.trials) for r in records)
    console.print(f"[green]Wrote {len(records)} participants and {trials} trials to {path.parent}[/green]")


@app.command()
def train(
    config: Optional[Path] = ConfigOption,
    data_dir: Optional[Path] = DataDirOption,
    output_dir: Optional[Path] = OutputDirOption,
    seed: Optional[int] = SeedOption,
    folds: Optional[int] = FoldsOption,
    epochs: Optional[int] = EpochsOption,
    setting: str = typer.Option(FULL_MODEL.name, "--setting", help="Model variant: auxvae or a registered setting"),
):
    """Leave-one-participant-out training and evaluation of one model variant."""
    cfg = _load(config, data_dir, output_dir, seed, folds, epochs)
    try:
        chosen = FULL_MODEL if setting == FULL_MODEL.name else get_setting(setting)
        _, num_styles, records = load_dataset(cfg.paths.data_dir)
        result = _run_with_spinner(
            f"Training {chosen.name}...", run_lopo, records, num_styles, cfg, chosen, cfg.paths.checkpoints
        )
    except (AuxVAEError, ValueError) as e:
        raise _fail(e)

    provenance = _provenance(cfg)
    out = cfg.paths.output_dir
    _write_csv(metrics_frame(result.results, provenance), out / "metrics.csv")
    _write_csv(_all_predictions(result, provenance), out / "predictions.csv")
    _write_json(_summary(result, provenance), out / "summary.json")

    table = Table(title=f"{chosen.name}: leave-one-participant-out")
    table.add_column("Fold", style="cyan")
    table.add_column("Repeat", style="yellow")
    table.add_column("MAE (lbs)", style="green")
    table.add_column("Style accuracy", style="blue")
    for r in result.results:
        accuracy = r.evaluation.style_accuracy
        table.add_row(r.held_out, str(r.repeat), f"{r.evaluation.mae_lbs:.3f}", "N/A" if accuracy is None else f"{accuracy:.3f}")
    console.print(table)
    if result.mae is not None:
        acc = result.style_accuracy
        console.print(
            f"\n[bold]MAE:[/bold] {_fmt(result.mae.mean, result.mae.std)}   "
            f"[bold]Accuracy:[/bold] {_fmt(acc.mean if acc else None, acc.std if acc else None)}"
        )
    if result.failures:
        for key, error in result.failures.items():
            console.print(f"[red]{key} failed: {error}[/red]")
        raise typer.Exit(1)


def _expected_hash(cfg: Optional[RunConfig], manifest_path: Path) -> Optional[str]:
    if cfg is None:
        return None
    manifest = CheckpointManifest.model_validate_json((manifest_path / "manifest.json").read_text())
    return model_hash(cfg.model, manifest.setting, manifest.num_channels, manifest.num_styles)


def _open_checkpoint(checkpoint: Path, config: Optional[Path]) -> Tuple[RunConfig, AuxVAE, CheckpointManifest]:
    """Load a checkpoint. Without --config, inference settings come from the manifest."""
    cfg = _load(config)
    try:
        model, manifest = load_model(checkpoint, _expected_hash(cfg if config is not None else None, checkpoint))
        if manifest.normalization is None:
            raise CheckpointError(f"{checkpoint} carries no normalization statistics")
    except (AuxVAEError, OSError, ValidationError) as e:
        raise _fail(e)
    if config is None and manifest.inference is not None:
        cfg = cfg.model_copy(update={"inference": manifest.inference})
    return cfg, model, manifest


@app.command("evaluate")
def evaluate_cmd(
    checkpoint: Path = typer.Argument(..., help="Checkpoint directory"),
    config: Optional[Path] = ConfigOption,
    data_dir: Optional[Path] = DataDirOption,
    output_dir: Optional[Path] = OutputDirOption,
    participant: Optional[str] = typer.Option(None, "--participant", "-p", help="Defaults to the fold's held-out participant"),
):
    """Evaluate a trained checkpoint on one participant."""
    cfg, model, manifest = _open_checkpoint(checkpoint, config)
    cfg = cfg.with_overrides(data_dir=data_dir, output_dir=output_dir)
    pid = participant or manifest.fold
    try:
        _, _, records = load_dataset(cfg.paths.data_dir)
        chosen = select(records, [pid])
        if not chosen:
            raise ValueError(f"participant {pid} not in {cfg.paths.data_dir}")
        test = to_tensors(chosen, manifest.normalization, manifest.model.seq_len, manifest.model.baseline_len)
        generator = new_generator(job_seeds(manifest.seed, manifest.fold, manifest.repeat)["eval"])
        report = evaluate(model, test, cfg.inference, generator)
    except (AuxVAEError, ValueError) as e:
        raise _fail(e)

    provenance = {"config_hash": manifest.run_hash, "seed": manifest.seed, "code_version": __version__}
    out = cfg.paths.output_dir
    _write_csv(predictions_frame(report, provenance), out / f"predictions_{pid}.csv")
    _write_json({**provenance, **report.model_dump(mode="json", exclude={"predictions"})}, out / f"eval_{pid}.json")
    _print_report(pid, report)


def _print_report(pid: str, report: EvalReport) -> None:
    table = Table(title=f"Participant {pid}")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("MAE (lbs)", f"{report.mae_lbs:.3f}")
    table.add_row("Style accuracy", "N/A" if report.style_accuracy is None else f"{report.style_accuracy:.3f}")
    for load, value in report.mae_by_load.items():
        table.add_row(f"MAE @ {load} lbs", f"{value:.3f}")
    for style, value in report.mae_by_style.items():
        table.add_row(f"MAE, {style}", f"{value:.3f}")
    console.print(table)


@app.command()
def ablate(
    config: Optional[Path] = ConfigOption,
    data_dir: Optional[Path] = DataDirOption,
    output_dir: Optional[Path] = OutputDirOption,
    seed: Optional[int] = SeedOption,
    folds: Optional[int] = FoldsOption,
    epochs: Optional[int] = EpochsOption,
):
    """Run every registered setting on paired seeds and write the comparison table."""
    cfg = _load(config, data_dir, output_dir, seed, folds, epochs)
    try:
        settings: List[AblationSetting] = [get_setting(name) for name in cfg.ablation]
        _, num_styles, records = load_dataset(cfg.paths.data_dir)
        table = _run_with_spinner(
            f"Running {len(settings)} settings...", run_ablation, records, num_styles, cfg, settings, cfg.paths.checkpoints
        )
    except (AuxVAEError, ValueError) as e:
        raise _fail(e)

    provenance = _provenance(cfg)
    out = cfg.paths.output_dir
    _write_csv(table_frame(table, provenance), out / "ablation.csv")
    _write_csv(pd.DataFrame([{**row, **provenance} for row in table.seed_ledger]), out / "seed_ledger.csv")
    _write_csv(
        pd.concat([metrics_frame(r.results, provenance) for r in table.results.values()], ignore_index=True),
        out / "ablation_metrics.csv",
    )
    _write_csv(
        pd.concat([_all_predictions(r, provenance) for r in table.results.values()], ignore_index=True),
        out / "ablation_predictions.csv",
    )

    view = Table(title="Ablation")
    view.add_column("Setting", style="cyan")
    view.add_column("Aux input", style="yellow")
    view.add_column("Fusion", style="yellow")
    view.add_column("Aux output", style="yellow")
    view.add_column("Accuracy", style="blue")
    view.add_column("MAE (lbs)", style="green")
    view.add_column("Δ MAE", style="magenta")
    for row in table.rows:
        change = "N/A" if row.relative_mae_change is None else f"{row.relative_mae_change:+.1%}"
        view.add_row(
            row.setting,
            "yes" if row.use_aux_input else "no",
            row.fusion.value,
            "yes" if row.use_aux_output else "no",
            _fmt(row.accuracy_mean, row.accuracy_std),
            _fmt(row.mae_mean, row.mae_std),
            change,
        )
    console.print(view)
    if table.failed:
        raise typer.Exit(1)


@app.command()
def predict(
    checkpoint: Path = typer.Argument(..., help="Checkpoint directory"),
    trial: Path = typer.Argument(..., help="Loaded-gait matrix file (little-endian float32, time x channel)"),
    baseline: Path = typer.Argument(..., help="The same participant's baseline matrix file"),
    config: Optional[Path] = ConfigOption,
    output: Optional[Path] = typer.Option(None, "--output", help="Append the prediction row to this CSV"),
    seed: int = typer.Option(0, "--seed", help="Seed for latent sampling"),
):
    """Predict the hand load of one trial without knowing its carrying style."""
    cfg, model, manifest = _open_checkpoint(checkpoint, config)
    try:
        x, x_aux = _prepare_pair(model, manifest, trial, baseline)
        y_hat, pi_bar = predict_load(model, x, x_aux, cfg.inference, new_generator(seed))
    except (AuxVAEError, ValueError, OSError) as e:
        raise _fail(e)

    row: Dict[str, Any] = {"trial_file": str(trial), "predicted_load": float(y_hat[0])}
    if pi_bar is not None:
        probs = pi_bar[0].double().tolist()
        row["predicted_style"] = int(pi_bar[0].argmax())
        row.update({f"pi_{l}": p for l, p in enumerate(probs)})
    row.update({"config_hash": manifest.run_hash, "seed": manifest.seed, "code_version": __version__})
    if output is not None:
        frame = pd.DataFrame([row])
        frame.to_csv(output, mode="a", header=not output.exists(), index=False)

    names = style_names(manifest.num_styles)
    style = f", style {names[row['predicted_style']]}" if "predicted_style" in row else ""
    console.print(f"[bold]Predicted load:[/bold] {row['predicted_load']:.2f} lbs{style}")


def _prepare_pair(model: AuxVAE, manifest: CheckpointManifest, trial: Path, baseline: Path):
    dtype = next(model.parameters()).dtype
    tensors = []
    for path, length in ((trial, manifest.model.seq_len), (baseline, manifest.model.baseline_len)):
        window = GaitWindow.from_array(read_matrix(path, manifest.num_channels))
        tensors.append(torch.as_tensor(prepare_window(window, length, manifest.normalization), dtype=dtype).unsqueeze(0))
    return tensors[0], tensors[1]


@app.command()
def acceptance(
    config: Optional[Path] = ConfigOption,
    output_dir: Optional[Path] = OutputDirOption,
    seed: Optional[int] = SeedOption,
    rerun: bool = typer.Option(True, "--rerun/--no-rerun", help="Train the full model twice and compare the outputs"),
):
    """Desk-scale trend and determinism checks on a freshly synthesized cohort."""
    cfg = _load(config, output_dir=output_dir, seed=seed)
    out = cfg.paths.output_dir
    try:
        report = _run_with_spinner("Running acceptance checks...", run_acceptance, cfg, out / "acceptance", rerun)
    except (AuxVAEError, ValueError) as e:
        raise _fail(e)
    _write_json(report.model_dump(mode="json"), out / "acceptance.json")

    view = Table(title="Acceptance")
    view.add_column("Check", style="cyan")
    view.add_column("Result")
    view.add_column("Detail", style="yellow")
    for criterion in report.criteria:
        view.add_row(criterion.name, "[green]pass[/green]" if criterion.passed else "[red]FAIL[/red]", criterion.detail)
    console.print(view)
    if not report.passed:
        raise typer.Exit(1)


@app.command("grad-check")
def grad_check_cmd(
    seeds: int = typer.Option(20, "--seeds", help="Random draws per case"),
    rel_tol: float = typer.Option(1e-4, "--rel-tol"),
):
    """Finite-difference verification of the differentiable ops and the objective."""
    reports = _run_with_spinner("Checking gradients...", run_suite, seeds, rel_tol)
    worst: Dict[str, Any] = {}
    for report in reports:
        case = report.name.split("[")[0]
        if case not in worst or report.max_rel_error > worst[case].max_rel_error:
            worst[case] = report

    table = Table(title="Gradient checks")
    table.add_column("Case", style="cyan")
    table.add_column("Worst rel. error", style="yellow")
    table.add_column("Where", style="blue")
    table.add_column("Status")
    for case, report in worst.items():
        failed = any(not r.passed for r in reports if r.name.startswith(case + "["))
        table.add_row(case, f"{report.max_rel_error:.2e}", report.worst_path, "[red]FAIL[/red]" if failed else "[green]ok[/green]")
    console.print(table)
    if any(not r.passed for r in reports):
        raise typer.Exit(1)


@app.command()
def inspect(
    checkpoint: Path = typer.Argument(..., help="Checkpoint directory"),
    config: Optional[Path] = ConfigOption,
    data_dir: Optional[Path] = DataDirOption,
    output_dir: Optional[Path] = OutputDirOption,
    participant: Optional[str] = typer.Option(None, "--participant", "-p"),
    attention: bool = typer.Option(True, "--attention/--no-attention", help="Also dump attention scores and features"),
):
    """Dump latent posteriors, attention scores and fused features for one participant."""
    cfg, model, manifest = _open_checkpoint(checkpoint, config)
    cfg = cfg.with_overrides(data_dir=data_dir, output_dir=output_dir)
    pid = participant or manifest.fold
    try:
        _, _, records = load_dataset(cfg.paths.data_dir)
        chosen = select(records, [pid])
        if not chosen:
            raise ValueError(f"participant {pid} not in {cfg.paths.data_dir}")
        test = to_tensors(chosen, manifest.normalization, manifest.model.seq_len, manifest.model.baseline_len)
        frames = inspect_trials(model, test, with_attention=attention)
    except (AuxVAEError, ValueError) as e:
        raise _fail(e)

    for name, frame in frames.items():
        frame["config_hash"] = manifest.run_hash
        frame["seed"] = manifest.seed
        frame["code_version"] = __version__
        _write_csv(frame, cfg.paths.output_dir / f"inspect_{pid}" / f"{name}.csv")
    console.print(f"[green]Wrote {', '.join(frames)} for {pid}[/green]")


@app.command()
def schema():
    """Print the JSON schema of the run configuration."""
    console.print_json(json.dumps(RunConfig.model_json_schema()))


if __name__ == "__main__":
    app()
