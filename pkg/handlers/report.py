import json
import logging
import os

import click

from middlewares.errors import with_exit_codes
from services.exports import export_bias_grid, export_scatter
from services.metrics import channel_sd_percentile, reference_matrix, report
from services.session import run_session
from services.storage import read_predictions

logger = logging.getLogger(__name__)

router = click.Group("report")


@router.command("report")
@click.option("--predictions", "predictions_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--bins", is_flag=True, help="Metrics per reference SWH interval")
@click.option("--scatter", is_flag=True, help="Density scatter data and fit line")
@click.option("--bias-grid", is_flag=True, help="Mean bias per lat/lon cell")
@with_exit_codes
def report_command(predictions_path: str, out_dir: str, bins: bool, scatter: bool, bias_grid: bool):
    """Метрики по каналам и в среднем, плюс выбранные выгрузки для графиков"""
    cfg = run_session.app.eval
    frame = read_predictions(predictions_path)
    digest = str(frame["config_hash"].iloc[0]) if "config_hash" in frame and len(frame) else run_session.hash
    result = report(frame, cfg, digest)
    os.makedirs(out_dir, exist_ok=True)
    result.summary_frame().to_csv(os.path.join(out_dir, "metrics.csv"), index=False, float_format="%.10g")
    written = ["metrics.csv"]
    if bins:
        result.bins_frame().to_csv(os.path.join(out_dir, "metrics_bins.csv"), index=False, float_format="%.10g")
        written.append("metrics_bins.csv")
    if result.stations:
        result.stations_frame().to_csv(os.path.join(out_dir, "metrics_stations.csv"), index=False,
                                       float_format="%.10g")
        written.append("metrics_stations.csv")
    if scatter:
        export_scatter(frame, os.path.join(out_dir, "scatter"), cfg.scatter_bin_width, digest)
        written.append("scatter_*")
    if bias_grid:
        export_bias_grid(frame, os.path.join(out_dir, "bias_grid.csv"), cfg.bias_cell_deg, digest)
        written.append("bias_grid.csv")

    refs = reference_matrix(frame)
    spread = {"quantile": cfg.sd_quantile, "config_hash": digest, "samples": int(len(refs)),
              "channel_sd": channel_sd_percentile(refs, cfg.sd_quantile) if len(refs) else None}
    with open(os.path.join(out_dir, "channel_sd.json"), "w", encoding="utf-8") as f:
        json.dump(spread, f, indent=2, sort_keys=True)
    written.append("channel_sd.json")

    click.echo(f"average RMSE {result.average.rmse:.4f} m over {result.average.n} pairs; "
               f"wrote {', '.join(written)} to {out_dir}")
