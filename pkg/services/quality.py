"""Контроль качества наблюдений Level-1: девять правил по порядку, счётчики отказов."""
import logging
import math

import numpy as np
from pydantic import ValidationError

from config.schema import PipelineConfig
from services.errors import ContractError
from services.records import SCALAR_FIELDS, L1Record, parse_l1_line

logger = logging.getLogger(__name__)

RULES = (
    "non_finite",
    "fill_value",
    "negative_value",
    "low_rcg",
    "solar_contamination",
    "attitude_status",
    "attitude_angles",
    "near_land",
    "quality_flags",
)
MALFORMED = "malformed"
NON_NEGATIVE_FIELDS = ("ddm_nbrcs", "ddm_les", "ddm_snr", "sp_rx_gain")
ATTITUDE_OK = 0


def compute_rcg(sp_rx_gain: float, range_tx_sp: float, range_sp_rx: float) -> float:
    """RCG = gain · 1e27 / (R_tx² · R_rx²), дальности в метрах"""
    if range_tx_sp <= 0 or range_sp_rx <= 0:
        raise ContractError(f"ranges must be positive, got {range_tx_sp} and {range_sp_rx}")
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        denominator = np.square(np.float64(range_tx_sp)) * np.square(np.float64(range_sp_rx))
        rcg = np.float64(sp_rx_gain) * 1e27 / denominator
    if not np.isfinite(denominator) or denominator <= 0 or not np.isfinite(rcg):
        raise ContractError(f"RCG is not representable for ranges {range_tx_sp} and {range_sp_rx}")
    return float(rcg)


def record_rcg(record: L1Record) -> float:
    return compute_rcg(record.sp_rx_gain, record.range_tx_sp, record.range_sp_rx)


def rejection_rule(record: L1Record, cfg: PipelineConfig):
    """Первое нарушенное правило или None, если запись проходит"""
    scalars = record.scalar_values()
    if not all(math.isfinite(v) for v in scalars.values()) or not np.all(np.isfinite(record.ddms)):
        return "non_finite"
    if any(v <= cfg.fill_value_threshold for v in scalars.values()) or np.any(record.ddms <= cfg.fill_value_threshold):
        return "fill_value"
    if any(getattr(record, name) < 0 for name in NON_NEGATIVE_FIELDS):
        return "negative_value"
    if record_rcg(record) < cfg.rcg_min:
        return "low_rcg"
    if record.solar_contamination:
        return "solar_contamination"
    if record.tracker_attitude_status != ATTITUDE_OK:
        return "attitude_status"
    if (abs(record.roll) > cfg.max_abs_roll or abs(record.yaw) > cfg.max_abs_yaw
            or abs(record.pitch) > cfg.max_abs_pitch):
        return "attitude_angles"
    if record.distance_to_land_km < cfg.min_land_distance_km:
        return "near_land"
    if record.quality_flags & ((1 << cfg.quality_flag_bits) - 1):
        return "quality_flags"
    return None


def _as_record(item) -> L1Record:
    if isinstance(item, L1Record):
        return item
    if isinstance(item, str):
        return parse_l1_line(item)
    return L1Record.model_validate(item)


def quality_control(records, cfg: PipelineConfig) -> tuple:
    """Записи (L1Record, dict или строка JSON) -> (прошедшие, счётчик по правилам).

    Битые записи не роняют конвейер, а попадают в счётчик "malformed".
    """
    tally = {rule: 0 for rule in RULES}
    tally[MALFORMED] = 0
    kept = []
    for item in records:
        try:
            record = _as_record(item)
            rule = rejection_rule(record, cfg)
        except (ValueError, TypeError, ArithmeticError, ValidationError, ContractError) as e:
            tally[MALFORMED] += 1
            logger.debug(f"Malformed record rejected: {e}")
            continue
        if rule is None:
            kept.append(record)
        else:
            tally[rule] += 1
            logger.debug(f"Record t={record.timestamp} ch={record.channel} rejected: {rule}")
    return kept, tally


def log_tally(tally: dict, kept: int, stage: str = "QC"):
    logger.info(f"{stage}: kept {kept} of {kept + sum(tally.values())} records")
    for rule, count in tally.items():
        logger.info(f"{stage}: {rule} = {count}")
