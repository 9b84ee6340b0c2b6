import json
import logging
import os

import click

from config.schema import ModelConfig
from middlewares.errors import with_exit_codes
from services.dataset import split_dataset
from services.errors import ConfigError
from services.experiments import compare_strategies
from services.metrics import report
from services.model import complexity_report, load_checkpoint, save_checkpoint
from services.session import run_session
from services.storage import prediction_frame, read_samples, write_predictions
from services.training import fit_model, predict_samples, write_history

logger = logging.getLogger(__name__)

router = click.Group("model")

STRATEGY = click.Choice(["CI", "CD"])
SPLITS = click.Choice(["train", "val", "test", "all"])


def _select(samples, split: str) -> list:
    if split == "all":
        return samples
    return split_dataset(samples, run_session.app.pipeline, run_session.app.seed)[split]


def _load_model(checkpoint: str, strategy: str = None):
    model, header = load_checkpoint(checkpoint)
    if strategy and strategy != model.cfg.strategy:
        raise ConfigError(f"Checkpoint {checkpoint} holds a {model.cfg.strategy} model, "
                          f"--strategy asked for {strategy}")
    return model, header


@router.command("train")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--history", "history_path", type=click.Path(dir_okay=False), default=None)
@click.option("--strategy", type=STRATEGY, default=None, help="Overrides the strategy config key")
@click.option("--use-wind/--no-wind", "use_wind", default=None)
@with_exit_codes
def train_command(data_path: str, checkpoint: str, history_path: str, strategy: str, use_wind: bool):
    """Обучение с ранней остановкой; сохраняется лучший по валидации чекпоинт"""
    app = run_session.override(strategy=strategy, use_wind=use_wind)
    samples, _ = read_samples(data_path)
    outcome = fit_model(app, samples, run_session.hash)
    meta = outcome.result.meta
    save_checkpoint(checkpoint, outcome.model, meta=meta.model_dump(), standardization=outcome.standardization,
                    config_hash=run_session.hash)
    write_history(history_path or f"{checkpoint}.history.csv", outcome.result.history)
    click.echo(f"best epoch {meta.epoch}: val RMSE {' '.join(f'{r:.4f}' for r in meta.val_rmse)} "
               f"avg {meta.val_rmse_avg:.4f} -> {checkpoint}")


@router.command("evaluate")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--split", type=SPLITS, default="test", show_default=True)
@click.option("--strategy", type=STRATEGY, default=None, help="Expected strategy of the checkpoint")
@with_exit_codes
def evaluate(data_path: str, checkpoint: str, out_dir: str, split: str, strategy: str):
    """Прогноз на выбранной части данных и отчёт по метрикам"""
    model, header = _load_model(checkpoint, strategy)
    samples, _ = read_samples(data_path)
    records = predict_samples(model, _select(samples, split), header["standardization"], header["config_hash"])
    os.makedirs(out_dir, exist_ok=True)
    write_predictions(os.path.join(out_dir, "predictions.csv"), records)
    result = report(prediction_frame(records), run_session.app.eval, header["config_hash"])
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(result.model_dump(), f, indent=2, sort_keys=True)
    result.summary_frame().to_csv(os.path.join(out_dir, "metrics.csv"), index=False, float_format="%.10g")
    click.echo(f"{split}: average RMSE {result.average.rmse:.4f} m, MAE {result.average.mae:.4f} m, "
               f"bias {result.average.bias:+.4f} m over {result.average.n} pairs")


@router.command("predict")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--split", type=SPLITS, default="all", show_default=True)
@with_exit_codes
def predict_command(data_path: str, checkpoint: str, out: str, split: str):
    """Прогноз SWH по четырём каналам для каждого образца"""
    model, header = _load_model(checkpoint)
    samples, _ = read_samples(data_path)
    records = predict_samples(model, _select(samples, split), header["standardization"], header["config_hash"])
    write_predictions(out, records)
    click.echo(f"{len(records)} predictions -> {out}")


@router.command("count-params")
@with_exit_codes
def count_params_command():
    """Число параметров и FLOPs моделей CI и CD при текущей конфигурации"""
    base = run_session.app.model.model_dump()
    for strategy in ("CI", "CD"):
        try:
            cfg = ModelConfig.model_validate({**base, "strategy": strategy})
        except ValueError as e:
            raise ConfigError(f"Model config is invalid for {strategy}: {e}") from e
        info = complexity_report(cfg, run_session.app.seed)
        click.echo(f"{strategy}: params {info['params'] / 1e6:.3f}M, FLOPs {info['flops'] / 1e9:.3f}G "
                   f"(reference {info['reference_params'] / 1e6:.3f}M, {info['reference_flops'] / 1e9:.3f}G)")


@router.command("compare")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seeds", default=3, show_default=True, type=click.IntRange(min=1))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@with_exit_codes
def compare(data_path: str, seeds: int, out: str):
    """CI против CD на одном разбиении при нескольких seed"""
    samples, _ = read_samples(data_path)
    base = run_session.app.seed
    table, summary = compare_strategies(run_session.app, samples, [base + i for i in range(seeds)])
    table.to_csv(out, index=False, float_format="%.10g")
    with open(f"{out}.summary.json", "w", encoding="utf-8") as f:
        json.dump({**summary, "config_hash": run_session.hash}, f, indent=2, sort_keys=True)
    flag = " (CD worse than CI)" if summary["cd_worse"] else ""
    click.echo(f"CI mean {summary['ci_mean']:.4f}, CD mean {summary['cd_mean']:.4f}{flag} -> {out}")
