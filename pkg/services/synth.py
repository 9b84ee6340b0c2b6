"""Синтетические данные: готовые четырёхканальные образцы и сырой сценарий
(записи Level-1, сетка ERA5, буи) для прогона всего конвейера.
"""
from datetime import datetime, timezone
import logging
import math
import os

import numpy as np

from config import config
from config.schema import AppConfig
from services.collocation import interpolate_swh
from services.dataset import compute_standardization, model_inputs, split_dataset
from services.records import (BuoyRecord, ChannelObservation, Era5Grid, FourChannelSample,
                              write_buoys, write_era5_grid, write_l1_records)
from services.storage import build_manifest

logger = logging.getLogger(__name__)

NBRCS_SCALE = 120.0
LES_SCALE = 40.0
SYNTH_START = datetime(2019, 8, 1, tzinfo=timezone.utc)
SYNTH_END = datetime(2022, 8, 1, tzinfo=timezone.utc)
# типичные дальности передатчик-точка и точка-приёмник, м
RANGE_TX_SP = 2.0e7
RANGE_SP_RX = 6.0e5
ALL_AP_COLUMNS = config.AP_COLUMNS + (config.WIND_COLUMN,)


def invert_planted_nbrcs(nbrcs):
    """Обращение заложенной зависимости nbrcs = NBRCS_SCALE / (1 + swh)"""
    return NBRCS_SCALE / np.asarray(nbrcs, dtype=np.float64) - 1.0


def draw_swh(rng: np.random.Generator, n: int, cfg) -> np.ndarray:
    """(n, 4): общая логнормальная база (в основном 1-3 м) плюс независимая доля и шум"""
    base = rng.lognormal(math.log(1.9), 0.35, size=(n, 1))
    own = rng.lognormal(math.log(1.9), 0.35, size=(n, config.N_CHANNELS))
    swh = cfg.channel_corr * base + (1.0 - cfg.channel_corr) * own
    if cfg.noise_sd:
        swh = swh + rng.normal(0.0, cfg.noise_sd, size=swh.shape)
    return np.clip(swh, cfg.swh_lo, cfg.swh_hi)


def synth_ddms(rng: np.random.Generator, swh: float, shape: tuple, noise_sd: float, planted: bool) -> np.ndarray:
    """Гауссов пик: высота падает с SWH, ширина по задержке растёт"""
    w, h = shape
    doppler = np.arange(w)[:, None] - (w - 1) / 2
    delay = np.arange(h)[None, :] - h / 3
    level = swh if planted else rng.uniform(0.5, 6.0)
    spread = 1.0 + 0.4 * level
    bump = np.exp(-0.5 * (doppler ** 2 / 2.0 + delay ** 2 / spread ** 2))
    peaks = (10.0 / (1.0 + level), 2.0 * spread, 5.0 / (1.0 + level))
    ddms = np.stack([p * bump for p in peaks])
    if noise_sd:
        ddms = ddms + rng.normal(0.0, 0.1 * noise_sd, size=ddms.shape)
    return np.abs(ddms)


def synth_aps(rng: np.random.Generator, swh: float, lat: float, lon: float, noise_sd: float, planted: bool) -> dict:
    level = swh if planted else rng.uniform(0.5, 6.0)
    wobble = (lambda: 1.0 + rng.normal(0.0, noise_sd)) if noise_sd else (lambda: 1.0)
    gain = rng.uniform(5.0, 15.0)
    return {
        "ddm_nbrcs": NBRCS_SCALE / (1.0 + level) * wobble(),
        "ddm_les": LES_SCALE / math.sqrt(1.0 + level) * wobble(),
        "ddm_snr": rng.uniform(2.0, 8.0),
        "gps_eirp": rng.uniform(2.5e2, 8.0e2),
        "sp_rx_gain": gain,
        "sp_inc_angle": rng.uniform(5.0, 60.0),
        "sp_lat": lat,
        "sp_lon": lon,
        "rcg": gain * 1e27 / (RANGE_TX_SP ** 2 * RANGE_SP_RX ** 2),
        config.WIND_COLUMN: max(0.0, 2.0 + 1.5 * swh + rng.normal(0.0, 0.5)),
    }


def _timestamps(n: int, start: datetime, end: datetime) -> list:
    t0, span = int(start.timestamp()), int((end - start).total_seconds())
    return [t0 + int((i + 0.5) * span / n) for i in range(n)]


def synth_generate(app: AppConfig) -> list:
    """Четырёхканальные образцы; одинаковый seed даёт одинаковые данные"""
    cfg, model = app.synth, app.model
    rng = np.random.default_rng([app.seed, 1])
    swh = draw_swh(rng, cfg.n_samples, cfg)
    samples = []
    for i, timestamp in enumerate(_timestamps(cfg.n_samples, SYNTH_START, SYNTH_END)):
        channels = []
        for ch in range(config.N_CHANNELS):
            lat, lon = rng.uniform(-38.0, 38.0), rng.uniform(-180.0, 180.0)
            channels.append(ChannelObservation(
                channel=ch + 1,
                sp_lat=lat,
                sp_lon=lon,
                ddms=synth_ddms(rng, swh[i, ch], (model.ddm_width, model.ddm_height), cfg.noise_sd,
                                cfg.planted_signal),
                aps=synth_aps(rng, swh[i, ch], lat, lon, cfg.noise_sd, cfg.planted_signal),
                swh_ref=float(swh[i, ch]),
            ))
        samples.append(FourChannelSample(sample_id=f"synth-{i:06d}", timestamp=timestamp, source="synthetic",
                                         channels=channels))
    logger.info(f"Generated {len(samples)} synthetic samples")
    return samples


def dataset_manifest(samples, app: AppConfig, qc_tallies: dict, source: str, config_hash: str) -> dict:
    """Manifest со статистиками стандартизации, посчитанными по обучающей части"""
    columns = tuple(c for c in ALL_AP_COLUMNS if samples and all(c in o.aps for s in samples for o in s.channels))
    shape = (app.model.ddm_width, app.model.ddm_height)
    train = split_dataset(samples, app.pipeline, app.seed)["train"]
    stats = compute_standardization(model_inputs(train, columns, shape)) if train else None
    split_spec = {name: [start, end] for name, start, end in app.pipeline.split_ranges}
    split_spec["counts"] = app.pipeline.split_counts
    return build_manifest(samples, ddm_shape=shape, ap_columns=columns, standardization=stats,
                          qc_tallies=qc_tallies, split_spec=split_spec, seed=app.seed,
                          config_hash=config_hash, source=source)


# сырой сценарий

RAW_LAT = (10.0, 20.0)
RAW_LON = (-60.0, -50.0)
LAND_BOX = ((18.5, 20.0), (-51.5, -50.0))


def raw_field(lat, lon, t_hours):
    return 1.6 + 0.6 * np.sin(lat / 3.0) + 0.5 * np.cos(lon / 4.0) + 0.3 * np.sin(2 * np.pi * t_hours / 24.0)


def synth_grid(app: AppConfig) -> Era5Grid:
    cfg = app.synth
    start = int(cfg.raw_start.replace(tzinfo=timezone.utc).timestamp())
    times = start + 3600 * np.arange(cfg.raw_hours + 1)
    lats = np.arange(RAW_LAT[0], RAW_LAT[1] + 0.25, 0.5)
    lons = np.arange(RAW_LON[0], RAW_LON[1] + 0.25, 0.5)
    t, la, lo = np.meshgrid(np.arange(len(times)), lats, lons, indexing="ij")
    swh = raw_field(la, lo, t)
    (la0, la1), (lo0, lo1) = LAND_BOX
    mask = (la >= la0) & (la <= la1) & (lo >= lo0) & (lo <= lo1)
    return Era5Grid(times, lats, lons, np.where(mask, np.nan, swh), mask)


def synth_buoys(rng: np.random.Generator, app: AppConfig, grid: Era5Grid) -> list:
    buoys = []
    for b in range(app.synth.raw_buoys):
        lat, lon = rng.uniform(11.0, 17.0), rng.uniform(-59.0, -53.0)
        for t in range(int(grid.times[0]), int(grid.times[-1]) + 1, 1800):
            swh, _ = interpolate_swh(grid, lat, lon, t)
            buoys.append(BuoyRecord(station_id=f"B{41000 + b}", lat=lat, lon=lon, timestamp=t, swh=round(swh, 2)))
    return buoys


VIOLATIONS = {
    "non_finite": ("ddm_snr", float("nan")),
    "fill_value": ("gps_eirp", config.FILL_VALUE),
    "negative_value": ("ddm_les", -1.0),
    "low_rcg": ("sp_rx_gain", 0.1),
    "solar_contamination": ("solar_contamination", True),
    "attitude_status": ("tracker_attitude_status", 1),
    "attitude_angles": ("roll", 35.0),
    "near_land": ("distance_to_land_km", 10.0),
    "quality_flags": ("quality_flags", 1 << 3),
    "malformed": ("channel", 7),
}


def synth_raw(app: AppConfig, out_dir: str) -> dict:
    """Записи L1 (с долей нарушений правил контроля), сетка ERA5 и буи, согласованные между собой"""
    cfg, model = app.synth, app.model
    rng = np.random.default_rng([app.seed, 2])
    grid = synth_grid(app)
    buoys = synth_buoys(rng, app, grid)
    stations = sorted({(b.station_id, b.lat, b.lon) for b in buoys})
    end = datetime.fromtimestamp(int(grid.times[-1]), tz=timezone.utc)
    start = datetime.fromtimestamp(int(grid.times[0]), tz=timezone.utc)
    rules = list(VIOLATIONS)
    records, violations = [], 0
    for i, timestamp in enumerate(_timestamps(cfg.n_samples, start, end)):
        near_buoy = stations and i % 4 == 0
        if near_buoy:
            _, blat, blon = stations[(i // 4) % len(stations)]
        for ch in range(1, config.N_CHANNELS + 1):
            if near_buoy:
                lat, lon = blat + rng.uniform(-0.05, 0.05), blon + rng.uniform(-0.05, 0.05)
            else:
                lat, lon = rng.uniform(10.5, 19.5), rng.uniform(-59.5, -50.5)
            swh, _ = interpolate_swh(grid, lat, lon, timestamp)
            swh = 1.5 if swh is None else swh
            aps = synth_aps(rng, swh, lat, lon, cfg.noise_sd, cfg.planted_signal)
            record = {
                "timestamp": timestamp,
                "channel": ch,
                "ddms": synth_ddms(rng, swh, (model.ddm_width, model.ddm_height), cfg.noise_sd,
                                   cfg.planted_signal).tolist(),
                "range_tx_sp": RANGE_TX_SP,
                "range_sp_rx": RANGE_SP_RX,
                "quality_flags": 0,
                "tracker_attitude_status": 0,
                "roll": rng.uniform(-20.0, 20.0),
                "yaw": rng.uniform(-3.0, 3.0),
                "pitch": rng.uniform(-8.0, 8.0),
                "distance_to_land_km": rng.uniform(50.0, 1500.0),
                "solar_contamination": False,
                "wind_speed": aps.pop(config.WIND_COLUMN),
                **{k: v for k, v in aps.items() if k != "rcg"},
            }
            if rng.random() < cfg.raw_violation_rate:
                field, value = VIOLATIONS[rules[violations % len(rules)]]
                record[field] = value
                violations += 1
            records.append(record)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "l1": os.path.join(out_dir, "l1_records.jsonl"),
        "era5": os.path.join(out_dir, "era5_grid.json"),
        "buoys": os.path.join(out_dir, "buoys.csv"),
    }
    write_l1_records(paths["l1"], records)
    write_era5_grid(paths["era5"], grid)
    write_buoys(paths["buoys"], buoys)
    logger.info(f"Raw scenario: {len(records)} L1 records ({violations} with a rule violation), "
                f"{len(buoys)} buoy measurements, grid {grid.swh.shape}")
    return paths
