"""Модели записей: наблюдения Level-1, буи, сетка ERA5, четырёхканальные образцы."""
from dataclasses import dataclass
from typing import Literal, Optional
import json
import logging
import math

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config import config
from services.errors import DataFormatError

logger = logging.getLogger(__name__)


def _is_fill(value: float) -> bool:
    return not math.isfinite(value) or value <= config.FILL_VALUE


def normalize_lon(lon: float) -> float:
    """Долгота в [-180, 180)"""
    return ((lon + 180.0) % 360.0) - 180.0


def _as_ddm_array(value) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 3 or array.shape[0] != len(config.DDM_TYPES):
        raise ValueError(f"ddms must be shaped (3, W, H), got {array.shape}")
    return array


class L1Record(BaseModel):
    """Одно наблюдение одного канала (формат обмена, плоские ключи)"""
    model_config = ConfigDict(extra="ignore", arbitrary_types_allowed=True)

    timestamp: int
    channel: int = Field(ge=1, le=4)
    sp_lat: float
    sp_lon: float
    ddms: np.ndarray
    ddm_nbrcs: float
    ddm_les: float
    ddm_snr: float
    gps_eirp: float
    sp_rx_gain: float
    sp_inc_angle: float
    range_tx_sp: float
    range_sp_rx: float
    quality_flags: int = Field(0, ge=0)
    tracker_attitude_status: int = 0
    roll: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    distance_to_land_km: float = 20000.0
    solar_contamination: bool = False
    wind_speed: Optional[float] = None

    @field_validator("ddms", mode="before")
    @classmethod
    def validate_ddms(cls, v) -> np.ndarray:
        return _as_ddm_array(v)

    @field_validator("sp_lat")
    @classmethod
    def check_lat(cls, v: float) -> float:
        # NaN и fill-значения ловит контроль качества, а не парсер
        if not _is_fill(v) and not -90.0 <= v <= 90.0:
            raise ValueError(f"latitude {v} outside [-90, 90]")
        return v

    @field_validator("sp_lon")
    @classmethod
    def wrap_lon(cls, v: float) -> float:
        return v if _is_fill(v) else normalize_lon(v)

    def scalar_values(self) -> dict:
        return {name: getattr(self, name) for name in SCALAR_FIELDS if getattr(self, name) is not None}

    def to_json_dict(self) -> dict:
        data = self.model_dump()
        data["ddms"] = self.ddms.tolist()
        return data


SCALAR_FIELDS = ("sp_lat", "sp_lon", "ddm_nbrcs", "ddm_les", "ddm_snr", "gps_eirp", "sp_rx_gain",
                 "sp_inc_angle", "range_tx_sp", "range_sp_rx", "roll", "yaw", "pitch",
                 "distance_to_land_km", "wind_speed")


class BuoyRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    station_id: str
    lat: float = Field(ge=-90.0, le=90.0)
    lon: float
    timestamp: int
    swh: float = Field(ge=0.0)

    @field_validator("lon")
    @classmethod
    def wrap_lon(cls, v: float) -> float:
        return normalize_lon(v)


class ChannelObservation(BaseModel):
    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)

    channel: int = Field(ge=1, le=4)
    sp_lat: float
    sp_lon: float
    ddms: np.ndarray
    aps: dict[str, float]
    swh_ref: float
    station_id: Optional[str] = None

    @field_validator("ddms", mode="before")
    @classmethod
    def validate_ddms(cls, v) -> np.ndarray:
        return _as_ddm_array(v)


class FourChannelSample(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sample_id: str
    timestamp: int
    source: Literal["era5", "buoy", "synthetic"]
    channels: list[ChannelObservation]

    @field_validator("channels")
    @classmethod
    def check_channels(cls, v: list) -> list:
        if [c.channel for c in v] != list(range(1, config.N_CHANNELS + 1)):
            raise ValueError("a sample needs channels 1..4 exactly once, in ascending order")
        return v

    @property
    def swh_refs(self) -> list:
        return [c.swh_ref for c in self.channels]

    def to_json_dict(self) -> dict:
        data = self.model_dump(exclude={"channels"})
        data["channels"] = []
        for obs in self.channels:
            item = obs.model_dump(exclude={"ddms"})
            item["ddms"] = obs.ddms.tolist()
            data["channels"].append(item)
        return data


def parse_l1_line(line: str) -> L1Record:
    """ValueError / ValidationError уходят наверх: их считает контроль качества"""
    return L1Record.model_validate(json.loads(line))


def read_l1_lines(path: str):
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield line


def write_l1_records(path: str, records):
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json_dict() if isinstance(record, L1Record) else record,
                               sort_keys=True) + "\n")


@dataclass
class Era5Grid:
    """Часовая сетка SWH 0.5° × 0.5°; swh = NaN там, где mask (суша)"""
    times: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    swh: np.ndarray
    mask: np.ndarray

    spacing = 0.5
    step_seconds = 3600

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.lats = np.asarray(self.lats, dtype=np.float64)
        self.lons = np.asarray(self.lons, dtype=np.float64)
        self.swh = np.asarray(self.swh, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool) | ~np.isfinite(self.swh)
        expected = (len(self.times), len(self.lats), len(self.lons))
        if self.swh.shape != expected or self.mask.shape != expected:
            raise DataFormatError(f"ERA5 grid values shaped {self.swh.shape}, axes imply {expected}")
        if len(self.times) < 2 or len(self.lats) < 2 or len(self.lons) < 2:
            raise DataFormatError("ERA5 grid needs at least two nodes per axis")
        if not np.all(np.diff(self.times) == self.step_seconds):
            raise DataFormatError("ERA5 time axis must be strictly hourly")
        for name, axis in (("lat", self.lats), ("lon", self.lons)):
            if not np.allclose(np.diff(axis), self.spacing, rtol=0.0, atol=1e-9):
                raise DataFormatError(f"ERA5 {name} axis must be ascending with {self.spacing}° spacing")

    @property
    def is_global(self) -> bool:
        return math.isclose(self.lons[-1] - self.lons[0] + self.spacing, 360.0, abs_tol=1e-9)

    def to_json_dict(self) -> dict:
        values = np.where(self.mask, np.nan, self.swh).reshape(-1)
        return {
            "time": self.times.tolist(),
            "lat": self.lats.tolist(),
            "lon": self.lons.tolist(),
            "swh": [None if not math.isfinite(v) else float(v) for v in values],
        }


def load_era5_grid(path: str) -> Era5Grid:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"ERA5 grid {path} is not valid JSON: {e}") from e
    try:
        times, lats, lons = doc["time"], doc["lat"], doc["lon"]
        shape = (len(times), len(lats), len(lons))
        swh = np.array([np.nan if v is None else v for v in doc["swh"]], dtype=np.float64).reshape(shape)
        mask = np.asarray(doc.get("mask", np.zeros(swh.size)), dtype=bool).reshape(shape)
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"ERA5 grid {path} is malformed: {e}") from e
    grid = Era5Grid(times, lats, lons, swh, mask)
    logger.info(f"Loaded ERA5 grid {shape[0]}h x {shape[1]} lat x {shape[2]} lon, {int(grid.mask.sum())} masked nodes")
    return grid


def write_era5_grid(path: str, grid: Era5Grid):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(grid.to_json_dict(), f)


BUOY_COLUMNS = ["station_id", "lat", "lon", "iso_time", "swh_m"]


def read_buoys(path: str) -> list:
    frame = pd.read_csv(path, dtype={"station_id": str})
    missing = set(BUOY_COLUMNS) - set(frame.columns)
    if missing:
        raise DataFormatError(f"Buoy file {path} lacks column(s): {', '.join(sorted(missing))}")
    times = pd.to_datetime(frame["iso_time"], utc=True, errors="coerce")
    buoys, skipped = [], 0
    for row, when in zip(frame.itertuples(index=False), times):
        if pd.isna(when) or pd.isna(row.swh_m):
            skipped += 1
            continue
        try:
            buoys.append(BuoyRecord(station_id=row.station_id, lat=row.lat, lon=row.lon,
                                    timestamp=int(when.timestamp()), swh=row.swh_m))
        except ValidationError:
            skipped += 1
    if skipped:
        logger.warning(f"Skipped {skipped} invalid buoy rows in {path}")
    logger.info(f"Loaded {len(buoys)} buoy measurements from {path}")
    return buoys


def write_buoys(path: str, buoys):
    frame = pd.DataFrame({
        "station_id": [b.station_id for b in buoys],
        "lat": [b.lat for b in buoys],
        "lon": [b.lon for b in buoys],
        "iso_time": [pd.Timestamp(b.timestamp, unit="s", tz="UTC").isoformat() for b in buoys],
        "swh_m": [b.swh for b in buoys],
    }, columns=BUOY_COLUMNS)
    frame.to_csv(path, index=False)
