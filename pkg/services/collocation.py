"""Сведение каналов по времени и коллокация с ERA5 и буями."""
from collections import defaultdict
import bisect
import logging
import math

import numpy as np

from config import config
from config.schema import PipelineConfig
from services.quality import record_rcg
from services.records import BuoyRecord, ChannelObservation, Era5Grid, FourChannelSample, L1Record

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0


def haversine(lat1, lon1, lat2, lon2):
    """Расстояние по большому кругу в км; принимает скаляры или массивы numpy"""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    distance = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(distance) if np.ndim(distance) == 0 else distance


def align_channels(records) -> tuple:
    """Группы по точному timestamp, где каждый канал 1..4 встречается ровно один раз"""
    by_time = defaultdict(list)
    for record in records:
        by_time[record.timestamp].append(record)
    groups = []
    tally = {"incomplete": 0, "duplicate": 0}
    for timestamp in sorted(by_time):
        members = by_time[timestamp]
        channels = [r.channel for r in members]
        if len(set(channels)) != len(channels):
            tally["duplicate"] += 1
            continue
        if sorted(channels) != list(range(1, config.N_CHANNELS + 1)):
            tally["incomplete"] += 1
            continue
        groups.append(sorted(members, key=lambda r: r.channel))
    logger.info(f"Aligned {len(groups)} four-channel groups; dropped {tally['incomplete']} incomplete "
                f"and {tally['duplicate']} duplicate timestamps")
    return groups, tally


def record_aps(record: L1Record) -> dict:
    aps = {name: float(getattr(record, name)) for name in config.AP_COLUMNS if name != "rcg"}
    aps["rcg"] = record_rcg(record)
    if record.wind_speed is not None:
        aps[config.WIND_COLUMN] = float(record.wind_speed)
    return aps


def _observation(record: L1Record, swh_ref: float, station_id: str = None) -> ChannelObservation:
    return ChannelObservation(
        channel=record.channel,
        sp_lat=record.sp_lat,
        sp_lon=record.sp_lon,
        ddms=record.ddms,
        aps=record_aps(record),
        swh_ref=swh_ref,
        station_id=station_id,
    )


def _bracket(axis: np.ndarray, value: float, step: float) -> tuple:
    """Индекс левого узла и доля расстояния до правого; None - вне оси"""
    offset = (value - axis[0]) / step
    if offset < 0 or value > axis[-1]:
        return None
    i = min(int(math.floor(offset)), len(axis) - 2)
    return i, offset - i


def interpolate_swh(grid: Era5Grid, lat: float, lon: float, timestamp: int) -> tuple:
    """Билинейно по пространству в двух соседних часах, затем линейно по времени.

    Возвращает (значение, None) или (None, причина), причина - "outside" или "masked".
    """
    lat_pos = _bracket(grid.lats, lat, grid.spacing)
    time_pos = _bracket(grid.times.astype(np.float64), float(timestamp), grid.step_seconds)
    if grid.is_global:
        offset = ((lon - grid.lons[0]) % 360.0) / grid.spacing
        j = int(math.floor(offset))
        lon_pos = (j, offset - j)
        j_next = (j + 1) % len(grid.lons)
    else:
        lon_pos = _bracket(grid.lons, lon, grid.spacing)
        j_next = lon_pos[0] + 1 if lon_pos else None
    if lat_pos is None or lon_pos is None or time_pos is None:
        return None, "outside"
    (i, u), (j, v), (k, w) = lat_pos, lon_pos, time_pos
    rows, cols, hours = [i, i + 1], [j, j_next], [k, k + 1]
    if grid.mask[np.ix_(hours, rows, cols)].any():
        return None, "masked"
    cube = grid.swh[np.ix_(hours, rows, cols)]
    spatial = ((1 - u) * (1 - v) * cube[:, 0, 0] + (1 - u) * v * cube[:, 0, 1]
               + u * (1 - v) * cube[:, 1, 0] + u * v * cube[:, 1, 1])
    return float((1 - w) * spatial[0] + w * spatial[1]), None


def match_era5(group: list, grid: Era5Grid) -> tuple:
    """Группа из четырёх каналов -> (FourChannelSample, None) или (None, причина отказа)"""
    observations = []
    for record in group:
        swh, reason = interpolate_swh(grid, record.sp_lat, record.sp_lon, record.timestamp)
        if reason:
            return None, reason
        observations.append(_observation(record, swh))
    timestamp = group[0].timestamp
    return FourChannelSample(sample_id=f"era5-{timestamp}", timestamp=timestamp, source="era5",
                             channels=observations), None


def match_era5_all(groups, grid: Era5Grid) -> tuple:
    samples = []
    tally = {"outside": 0, "masked": 0}
    for group in groups:
        sample, reason = match_era5(group, grid)
        if reason:
            tally[reason] += 1
        else:
            samples.append(sample)
    logger.info(f"ERA5 collocation: {len(samples)} samples, {tally['outside']} outside grid, "
                f"{tally['masked']} on masked nodes")
    return samples, tally


class BuoyIndex:
    """Измерения буёв, отсортированные по времени, для поиска окна ±Δt"""

    def __init__(self, buoys):
        self.buoys = sorted(buoys, key=lambda b: (b.timestamp, b.station_id))
        self.times = [b.timestamp for b in self.buoys]
        self.lats = np.array([b.lat for b in self.buoys], dtype=np.float64)
        self.lons = np.array([b.lon for b in self.buoys], dtype=np.float64)

    def nearest(self, lat: float, lon: float, timestamp: int, max_km: float, max_seconds: float):
        lo = bisect.bisect_left(self.times, timestamp - max_seconds)
        hi = bisect.bisect_right(self.times, timestamp + max_seconds)
        if lo >= hi:
            return None
        distances = haversine(lat, lon, self.lats[lo:hi], self.lons[lo:hi])
        best = None
        for offset, distance in enumerate(np.atleast_1d(distances)):
            if distance > max_km:
                continue
            buoy = self.buoys[lo + offset]
            key = (distance, abs(buoy.timestamp - timestamp))
            if best is None or key < best[0]:
                best = (key, buoy)
        return best[1] if best else None


def match_buoy(records, buoys, cfg: PipelineConfig) -> tuple:
    """Каждый канал сопоставляется с буями отдельно, затем каналы собираются в образцы"""
    index = BuoyIndex(buoys)
    matched = defaultdict(list)
    tally = {"unmatched": 0, "incomplete": 0, "duplicate": 0}
    for record in records:
        buoy = index.nearest(record.sp_lat, record.sp_lon, record.timestamp,
                             cfg.buoy_max_distance_km, cfg.buoy_max_minutes * 60)
        if buoy is None:
            tally["unmatched"] += 1
            continue
        matched[record.timestamp].append((record, buoy))
    samples = []
    for timestamp in sorted(matched):
        pairs = matched[timestamp]
        channels = [r.channel for r, _ in pairs]
        if len(set(channels)) != len(channels):
            tally["duplicate"] += 1
            continue
        if sorted(channels) != list(range(1, config.N_CHANNELS + 1)):
            tally["incomplete"] += 1
            continue
        observations = [_observation(r, b.swh, b.station_id) for r, b in sorted(pairs, key=lambda p: p[0].channel)]
        samples.append(FourChannelSample(sample_id=f"buoy-{timestamp}", timestamp=timestamp, source="buoy",
                                         channels=observations))
    logger.info(f"Buoy collocation: {len(samples)} samples; unmatched records {tally['unmatched']}, "
                f"incomplete timestamps {tally['incomplete']}, duplicate {tally['duplicate']}")
    return samples, tally


def cap_and_filter(samples, cap: float = 8.0) -> tuple:
    """Образец отбрасывается, если SWH любого канала выше порога"""
    kept = [s for s in samples if max(s.swh_refs) <= cap]
    dropped = len(samples) - len(kept)
    if dropped:
        logger.info(f"SWH cap {cap} m dropped {dropped} samples")
    return kept, dropped
