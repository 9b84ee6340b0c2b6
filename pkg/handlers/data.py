import json
import logging
import os

import click

from config import config
from middlewares.errors import with_exit_codes
from services.collocation import align_channels, cap_and_filter, match_buoy, match_era5_all
from services.quality import MALFORMED, RULES, log_tally, quality_control
from services.records import load_era5_grid, read_buoys, read_l1_lines, write_l1_records
from services.session import run_session
from services.storage import write_samples
from services.synth import dataset_manifest, synth_generate, synth_raw

logger = logging.getLogger(__name__)

router = click.Group("data")


def _tally_path(path: str) -> str:
    return f"{path}.qc.json"


def _read_tally(path: str) -> dict:
    if not os.path.exists(_tally_path(path)):
        return {}
    with open(_tally_path(path), encoding="utf-8") as f:
        return json.load(f)


def _load_qc_records(path: str) -> list:
    """Записи после контроля качества; повторный контроль ничего не меняет"""
    records, tally = quality_control(read_l1_lines(path), run_session.app.pipeline)
    if any(tally.values()):
        logger.warning(f"{sum(tally.values())} records in {path} fail quality control; did you run preprocess?")
    return records


def _write_dataset(out: str, samples, tallies: dict, source: str):
    app = run_session.app
    capped, dropped = cap_and_filter(samples, app.pipeline.swh_cap)
    tallies = {**tallies, "swh_cap": dropped}
    manifest = dataset_manifest(capped, app, tallies, source, run_session.hash)
    write_samples(out, capped, manifest)
    click.echo(f"{len(capped)} samples -> {out}")


@router.command("synth")
@click.option("--out", "out", type=click.Path(), default=None,
              help="Canonical sample file, or a directory with --raw (default: under $SCAWAVE_DATA_DIR)")
@click.option("--raw", is_flag=True, help="Emit L1 records, an ERA5 grid and a buoy CSV instead")
@with_exit_codes
def synth(out: str, raw: bool):
    """Синтетические данные для проверки всего конвейера"""
    app = run_session.app
    out = out or os.path.join(config.DATA_DIR, "raw" if raw else "synth.jsonl")
    if raw:
        paths = synth_raw(app, out)
        for kind, path in paths.items():
            click.echo(f"{kind}: {path}")
        return
    samples = synth_generate(app)
    manifest = dataset_manifest(samples, app, {}, "synthetic", run_session.hash)
    write_samples(out, samples, manifest)
    click.echo(f"{len(samples)} samples -> {out}")


@router.command("preprocess")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False))
@with_exit_codes
def preprocess(input_path: str, out: str):
    """Контроль качества записей Level-1"""
    kept, tally = quality_control(read_l1_lines(input_path), run_session.app.pipeline)
    log_tally(tally, len(kept))
    write_l1_records(out, kept)
    with open(_tally_path(out), "w", encoding="utf-8") as f:
        json.dump({"config_hash": run_session.hash, "kept": len(kept), **tally}, f, indent=2, sort_keys=True)
    click.echo(f"kept {len(kept)} records -> {out}")
    for rule in RULES + (MALFORMED,):
        click.echo(f"  {rule}: {tally[rule]}")


@router.command("match-era5")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False))
@with_exit_codes
def match_era5(input_path: str, grid_path: str, out: str):
    """Сведение каналов и интерполяция эталонной SWH ERA5"""
    records = _load_qc_records(input_path)
    groups, align_tally = align_channels(records)
    samples, era5_tally = match_era5_all(groups, load_era5_grid(grid_path))
    tallies = {**_read_tally(input_path), **align_tally, **{f"era5_{k}": v for k, v in era5_tally.items()}}
    tallies.pop("config_hash", None)
    _write_dataset(out, samples, tallies, "era5")


@router.command("match-buoy")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--buoys", "buoys_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False))
@with_exit_codes
def match_buoy_command(input_path: str, buoys_path: str, out: str):
    """Коллокация каждого канала с буями и сборка четырёхканальных образцов"""
    records = _load_qc_records(input_path)
    samples, tally = match_buoy(records, read_buoys(buoys_path), run_session.app.pipeline)
    tallies = {**_read_tally(input_path), **{f"buoy_{k}": v for k, v in tally.items()}}
    tallies.pop("config_hash", None)
    _write_dataset(out, samples, tallies, "buoy")
