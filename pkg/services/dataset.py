"""Массивы для модели, стандартизация, временное разбиение и мини-батчи."""
from dataclasses import dataclass, field
from typing import Optional
import logging

import numpy as np

from config import config
from config.schema import PipelineConfig
from services.errors import ConfigError, ContractError

logger = logging.getLogger(__name__)


@dataclass
class SampleArrays:
    """Плотное представление набора FourChannelSample"""
    ddms: np.ndarray                  # (B, 4, 3, W, H)
    aps: np.ndarray                   # (B, 4, K)
    swh: np.ndarray                   # (B, 4)
    sample_ids: list
    lats: np.ndarray                  # (B, 4)
    lons: np.ndarray                  # (B, 4)
    station_ids: list = field(default_factory=list)
    ap_columns: tuple = ()

    def __len__(self) -> int:
        return len(self.sample_ids)

    def subset(self, indices) -> "SampleArrays":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleArrays(
            ddms=self.ddms[indices],
            aps=self.aps[indices],
            swh=self.swh[indices],
            sample_ids=[self.sample_ids[i] for i in indices],
            lats=self.lats[indices],
            lons=self.lons[indices],
            station_ids=[self.station_ids[i] for i in indices] if self.station_ids else [],
            ap_columns=self.ap_columns,
        )


def check_columns(samples, columns) -> None:
    for sample in samples:
        for obs in sample.channels:
            missing = [c for c in columns if c not in obs.aps]
            if missing:
                raise ConfigError(f"Sample {sample.sample_id} channel {obs.channel} lacks AP column(s) "
                                  f"{', '.join(missing)}; check use_wind / ap_groups against the data")


def model_inputs(samples, columns, ddm_shape: tuple) -> SampleArrays:
    """FourChannelSample -> массивы; отсутствующий столбец AP - ошибка конфигурации"""
    columns = tuple(columns)
    check_columns(samples, columns)
    n, c = len(samples), config.N_CHANNELS
    ddms = np.zeros((n, c, len(config.DDM_TYPES)) + tuple(ddm_shape))
    aps = np.zeros((n, c, len(columns)))
    swh = np.zeros((n, c))
    lats = np.zeros((n, c))
    lons = np.zeros((n, c))
    stations = []
    for b, sample in enumerate(samples):
        for ch, obs in enumerate(sample.channels):
            if obs.ddms.shape[1:] != tuple(ddm_shape):
                raise ConfigError(f"Sample {sample.sample_id} has DDMs {obs.ddms.shape[1:]}, "
                                  f"config expects {tuple(ddm_shape)}")
            ddms[b, ch] = obs.ddms
            aps[b, ch] = [obs.aps[name] for name in columns]
            swh[b, ch] = obs.swh_ref
            lats[b, ch] = obs.sp_lat
            lons[b, ch] = obs.sp_lon
        stations.append([obs.station_id for obs in sample.channels])
    return SampleArrays(ddms=ddms, aps=aps, swh=swh, sample_ids=[s.sample_id for s in samples],
                        lats=lats, lons=lons, station_ids=stations, ap_columns=columns)


def compute_standardization(arrays: SampleArrays) -> dict:
    """Среднее и СКО по обучающей выборке: по каждому столбцу AP и по каждому типу DDM"""
    if len(arrays) == 0:
        raise ContractError("standardization needs a non-empty training split")
    ap_mean = arrays.aps.mean(axis=(0, 1))
    ap_std = arrays.aps.std(axis=(0, 1))
    ddm_axes = (0, 1, 3, 4)
    ddm_mean = arrays.ddms.mean(axis=ddm_axes)
    ddm_std = arrays.ddms.std(axis=ddm_axes)
    for name, sd in zip(arrays.ap_columns, ap_std):
        if sd == 0:
            logger.warning(f"AP column {name} has zero variance in the training split")
    return {
        "ap_columns": list(arrays.ap_columns),
        "ap_mean": ap_mean.tolist(),
        "ap_std": np.where(ap_std > 0, ap_std, 1.0).tolist(),
        "ddm_mean": ddm_mean.tolist(),
        "ddm_std": np.where(ddm_std > 0, ddm_std, 1.0).tolist(),
    }


def standardize(arrays: SampleArrays, stats: dict) -> SampleArrays:
    """Статистики выбираются по имени столбца, так что подходят и для подмножества столбцов"""
    missing = [c for c in arrays.ap_columns if c not in stats["ap_columns"]]
    if missing:
        raise ConfigError(f"No standardization statistics for AP column(s) {', '.join(missing)}")
    picks = [stats["ap_columns"].index(c) for c in arrays.ap_columns]
    ddm_mean = np.asarray(stats["ddm_mean"])[:, None, None]
    ddm_std = np.asarray(stats["ddm_std"])[:, None, None]
    return SampleArrays(
        ddms=(arrays.ddms - ddm_mean) / ddm_std,
        aps=(arrays.aps - np.asarray(stats["ap_mean"])[picks]) / np.asarray(stats["ap_std"])[picks],
        swh=arrays.swh,
        sample_ids=arrays.sample_ids,
        lats=arrays.lats,
        lons=arrays.lons,
        station_ids=arrays.station_ids,
        ap_columns=arrays.ap_columns,
    )


def split_dataset(samples, cfg: PipelineConfig, seed: int) -> dict:
    """Разбиение по полуоткрытым интервалам времени и, при заданных n_*, случайная подвыборка"""
    splits = {}
    counts = cfg.split_counts
    for position, (name, start, end) in enumerate(cfg.split_ranges):
        members = [s for s in samples if start <= s.timestamp < end]
        limit: Optional[int] = counts[name]
        if limit is not None and limit < len(members):
            rng = np.random.default_rng([seed, position])
            chosen = np.sort(rng.choice(len(members), size=limit, replace=False))
            members = [members[i] for i in chosen]
        if not members:
            logger.warning(f"Split {name} is empty")
        splits[name] = members
    excluded = len(samples) - sum(len(v) for v in splits.values())
    logger.info(f"Split sizes: " + ", ".join(f"{k}={len(v)}" for k, v in splits.items())
                + f"; {excluded} outside all ranges or subsampled away")
    return splits


def iterate_batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None):
    """Индексы мини-батчей; последний неполный батч сохраняется"""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
