"""Метрики качества восстановления SWH и отчёт по каналам, интервалам и станциям."""
from typing import Optional
import logging
import math

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config import config
from config.schema import EvalConfig
from services.errors import ContractError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("rmse", "mae", "bias", "mape_percent", "cc")


def _pair(pred, ref) -> tuple:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if pred.shape != ref.shape:
        raise ContractError(f"prediction and reference lengths differ: {pred.size} vs {ref.size}")
    if pred.size == 0:
        raise ContractError("metrics need at least one pair")
    return pred, ref


def rmse(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return float(np.sqrt(np.mean((pred - ref) ** 2)))


def mae(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return float(np.mean(np.abs(pred - ref)))


def bias(pred, ref) -> float:
    """Знак: прогноз минус эталон"""
    pred, ref = _pair(pred, ref)
    return float(np.mean(pred - ref))


def mape(pred, ref) -> float:
    """В процентах; нулевой эталон - ошибка"""
    pred, ref = _pair(pred, ref)
    if np.any(ref == 0):
        raise ContractError("MAPE is undefined for a zero reference value")
    return float(100.0 * np.mean(np.abs((pred - ref) / ref)))


def mape_excluding(pred, ref, min_ref: float) -> tuple:
    """MAPE по парам с |ref| >= min_ref -> (значение или None, число исключённых)"""
    pred, ref = _pair(pred, ref)
    keep = np.abs(ref) >= min_ref
    excluded = int(pred.size - keep.sum())
    if not keep.any():
        return None, excluded
    return mape(pred[keep], ref[keep]), excluded


def cc(pred, ref) -> Optional[float]:
    """Коэффициент корреляции Пирсона; None, если один из векторов постоянен"""
    pred, ref = _pair(pred, ref)
    dp, dr = pred - pred.mean(), ref - ref.mean()
    denominator = math.sqrt(float(np.sum(dp * dp)) * float(np.sum(dr * dr)))
    if denominator == 0:
        return None
    return float(np.clip(np.sum(dp * dr) / denominator, -1.0, 1.0))


class MetricRow(BaseModel):
    scope: str
    rmse: float
    mae: float
    bias: float
    mape_percent: Optional[float]
    cc: Optional[float]
    n: int
    swh_lo: Optional[float] = None
    swh_hi: Optional[float] = None


class MetricsReport(BaseModel):
    channels: list[MetricRow]
    average: MetricRow
    bins: list[MetricRow] = []
    stations: list[MetricRow] = []
    mape_excluded: int = 0
    config_hash: str = ""

    def summary_frame(self) -> pd.DataFrame:
        return _frame(self.channels + [self.average], self.config_hash)

    def bins_frame(self) -> pd.DataFrame:
        return _frame(self.bins, self.config_hash)

    def stations_frame(self) -> pd.DataFrame:
        return _frame(self.stations, self.config_hash)


def _frame(rows: list, config_hash: str) -> pd.DataFrame:
    columns = list(MetricRow.model_fields) + ["config_hash"]
    return pd.DataFrame([{**row.model_dump(), "config_hash": config_hash} for row in rows], columns=columns)


def metric_row(scope: str, pred, ref, min_ref: float, **extra) -> tuple:
    value, excluded = mape_excluding(pred, ref, min_ref)
    row = MetricRow(scope=scope, rmse=rmse(pred, ref), mae=mae(pred, ref), bias=bias(pred, ref),
                    mape_percent=value, cc=cc(pred, ref), n=len(np.atleast_1d(pred)), **extra)
    return row, excluded


def average_row(rows: list) -> MetricRow:
    """Простое среднее по каналам; cc/MAPE - None, если хоть у одного канала не определены"""
    values = {}
    for name in METRIC_NAMES:
        column = [getattr(r, name) for r in rows]
        values[name] = None if any(v is None for v in column) else float(np.mean(column))
    return MetricRow(scope="avg", n=sum(r.n for r in rows), **values)


def bin_index(ref, edges) -> np.ndarray:
    """Интервалы [a, b), последний закрыт справа; -1 - вне всех интервалов"""
    ref = np.asarray(ref, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges, ref, side="right") - 1
    idx[ref == edges[-1]] = len(edges) - 2
    idx[(ref < edges[0]) | (ref > edges[-1])] = -1
    return idx


def report(predictions: pd.DataFrame, cfg: EvalConfig, config_hash: str = "") -> MetricsReport:
    """predictions: столбцы channel, y_hat, y_ref и, для буёв, station_id"""
    if predictions.empty:
        raise ContractError("cannot report metrics on an empty prediction set")
    excluded = 0
    channels = []
    for channel in range(1, config.N_CHANNELS + 1):
        part = predictions[predictions["channel"] == channel]
        if part.empty:
            continue
        row, dropped = metric_row(str(channel), part["y_hat"].to_numpy(), part["y_ref"].to_numpy(),
                                  cfg.mape_min_ref)
        channels.append(row)
        excluded += dropped

    bins = []
    idx = bin_index(predictions["y_ref"].to_numpy(), cfg.bin_edges)
    for b, (lo, hi) in enumerate(zip(cfg.bin_edges, cfg.bin_edges[1:])):
        part = predictions[idx == b]
        if part.empty:
            continue
        row, _ = metric_row(f"[{lo:g},{hi:g}{']' if b == len(cfg.bin_edges) - 2 else ')'}",
                            part["y_hat"].to_numpy(), part["y_ref"].to_numpy(), cfg.mape_min_ref,
                            swh_lo=lo, swh_hi=hi)
        bins.append(row)

    stations = []
    if "station_id" in predictions and predictions["station_id"].notna().any():
        for station, part in predictions[predictions["station_id"].notna()].groupby("station_id", sort=True):
            row, _ = metric_row(str(station), part["y_hat"].to_numpy(), part["y_ref"].to_numpy(),
                                cfg.mape_min_ref)
            stations.append(row)

    if excluded:
        logger.warning(f"MAPE excluded {excluded} pairs with reference below {cfg.mape_min_ref} m")
    result = MetricsReport(channels=channels, average=average_row(channels), bins=bins, stations=stations,
                           mape_excluded=excluded, config_hash=config_hash)
    logger.info(f"Average RMSE {result.average.rmse:.4f} m, MAE {result.average.mae:.4f} m over "
                f"{result.average.n} pairs")
    return result


def channel_sd_percentile(refs, q: float) -> float:
    """q-квантиль СКО (делитель 4) четырёх эталонных SWH внутри образца"""
    if not 0.0 < q <= 1.0:
        raise ContractError(f"quantile must be in (0, 1], got {q}")
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[1] != config.N_CHANNELS or refs.shape[0] == 0:
        raise ContractError(f"expected a non-empty (S, {config.N_CHANNELS}) reference matrix, got {refs.shape}")
    return float(np.quantile(refs.std(axis=1), q))


def reference_matrix(predictions: pd.DataFrame) -> np.ndarray:
    """Эталоны (S, 4) из таблицы прогнозов; образцы без всех четырёх каналов пропускаются"""
    table = predictions.pivot_table(index="sample_id", columns="channel", values="y_ref", aggfunc="first")
    table = table.reindex(columns=range(1, config.N_CHANNELS + 1)).dropna()
    return table.to_numpy()
