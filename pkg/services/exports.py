"""Данные для графиков: плотностная диаграмма рассеяния и карта смещения по ячейкам."""
import json
import logging
import math

import numpy as np
import pandas as pd

from services.errors import ContractError

logger = logging.getLogger(__name__)


def fit_line(ref, pred) -> dict:
    """Наименьшие квадраты pred = slope · ref + intercept"""
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if ref.size < 2 or np.all(ref == ref[0]):
        return {"slope": None, "intercept": None}
    slope, intercept = np.polyfit(ref, pred, 1)
    return {"slope": float(slope), "intercept": float(intercept)}


def scatter_histogram(ref, pred, bin_width: float) -> pd.DataFrame:
    """2D-гистограмма в длинном формате: (ref_lo, pred_lo, count), только непустые клетки"""
    if bin_width <= 0:
        raise ContractError(f"bin width must be positive, got {bin_width}")
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    lo = math.floor(min(ref.min(), pred.min()) / bin_width) - 1
    hi = math.floor(max(ref.max(), pred.max()) / bin_width) + 2
    edges = np.arange(lo, hi + 1) * bin_width
    counts, ref_edges, pred_edges = np.histogram2d(ref, pred, bins=[edges, edges])
    i, j = np.nonzero(counts)
    return pd.DataFrame({"ref_lo": ref_edges[i], "pred_lo": pred_edges[j], "count": counts[i, j].astype(int)})


def export_scatter(predictions: pd.DataFrame, prefix: str, bin_width: float, config_hash: str = "") -> dict:
    """<prefix>_points.csv, <prefix>_hist.csv, <prefix>_fit.json"""
    if predictions.empty:
        raise ContractError("nothing to export: empty prediction set")
    ref, pred = predictions["y_ref"].to_numpy(), predictions["y_hat"].to_numpy()
    paths = {"points": f"{prefix}_points.csv", "hist": f"{prefix}_hist.csv", "fit": f"{prefix}_fit.json"}
    points = pd.DataFrame({"ref": ref, "pred": pred, "channel": predictions["channel"].to_numpy()})
    points["config_hash"] = config_hash
    points.to_csv(paths["points"], index=False, float_format="%.10g")
    hist = scatter_histogram(ref, pred, bin_width)
    hist["config_hash"] = config_hash
    hist.to_csv(paths["hist"], index=False, float_format="%.10g")
    fit = {**fit_line(ref, pred), "n": int(ref.size), "bin_width": bin_width, "config_hash": config_hash}
    with open(paths["fit"], "w", encoding="utf-8") as f:
        json.dump(fit, f, sort_keys=True, indent=2)
    logger.info(f"Scatter export written to {paths['points']}, {paths['hist']}, {paths['fit']}")
    return paths


def bias_grid(predictions: pd.DataFrame, cell_deg: float) -> pd.DataFrame:
    """Среднее (ŷ - y) и число пар в ячейке cell_deg × cell_deg; пустые ячейки не выводятся"""
    if cell_deg <= 0:
        raise ContractError(f"cell size must be positive, got {cell_deg}")
    frame = pd.DataFrame({
        "row": np.floor(predictions["lat"].to_numpy() / cell_deg).astype(int),
        "col": np.floor(predictions["lon"].to_numpy() / cell_deg).astype(int),
        "error": predictions["y_hat"].to_numpy() - predictions["y_ref"].to_numpy(),
    })
    grouped = frame.groupby(["row", "col"], sort=True)["error"].agg(["mean", "count"]).reset_index()
    return pd.DataFrame({
        "lat_center": (grouped["row"] + 0.5) * cell_deg,
        "lon_center": (grouped["col"] + 0.5) * cell_deg,
        "bias": grouped["mean"],
        "n": grouped["count"].astype(int),
    })


def export_bias_grid(predictions: pd.DataFrame, path: str, cell_deg: float, config_hash: str = "") -> pd.DataFrame:
    grid = bias_grid(predictions, cell_deg)
    grid["config_hash"] = config_hash
    grid.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Bias grid with {len(grid)} cells written to {path}")
    return grid
