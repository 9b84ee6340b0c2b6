import json

import pytest

from config.schema import PipelineConfig
from services.errors import ContractError
from services.quality import MALFORMED, RULES, compute_rcg, quality_control, rejection_rule

CFG = PipelineConfig()


def test_rcg_formula():
    assert compute_rcg(10.0, 2.0e7, 6.0e5) == pytest.approx(1e28 / (4e14 * 3.6e11))
    assert compute_rcg(0.0, 2.0e7, 6.0e5) == 0.0
    with pytest.raises(ContractError):
        compute_rcg(10.0, 0.0, 6.0e5)


@pytest.mark.parametrize("ranges", [(1e200, 6.0e5), (1e-200, 6.0e5), (2.0e7, 1e-200)])
def test_unrepresentable_rcg_is_counted_as_malformed(make_l1, ranges):
    tx, rx = ranges
    with pytest.raises(ContractError):
        compute_rcg(10.0, tx, rx)
    kept, tally = quality_control([make_l1(range_tx_sp=tx, range_sp_rx=rx), make_l1()], CFG)
    assert len(kept) == 1
    assert tally[MALFORMED] == 1


def test_clean_record_passes(make_record):
    assert rejection_rule(make_record(), CFG) is None


@pytest.mark.parametrize("rule, overrides", [
    ("non_finite", {"ddm_snr": float("nan")}),
    ("non_finite", {"sp_lat": float("inf")}),
    ("fill_value", {"gps_eirp": -9999.0}),
    ("negative_value", {"ddm_les": -0.5}),
    ("low_rcg", {"sp_rx_gain": 0.1}),
    ("solar_contamination", {"solar_contamination": True}),
    ("attitude_status", {"tracker_attitude_status": 2}),
    ("attitude_angles", {"roll": 30.5}),
    ("attitude_angles", {"yaw": -5.1}),
    ("attitude_angles", {"pitch": 10.01}),
    ("near_land", {"distance_to_land_km": 24.9}),
    ("quality_flags", {"quality_flags": 1 << 3}),
])
def test_each_rule(make_record, rule, overrides):
    assert rejection_rule(make_record(**overrides), CFG) == rule


def test_fill_value_inside_ddm(make_l1):
    record = make_l1()
    record["ddms"][2][0][0] = -9999.0
    kept, tally = quality_control([record], CFG)
    assert not kept
    assert tally["fill_value"] == 1


@pytest.mark.parametrize("overrides", [
    {"roll": 30.0},
    {"roll": -30.0, "yaw": 5.0, "pitch": -10.0},
    {"distance_to_land_km": 25.0},
    {"quality_flags": 1 << 28},
    {"sp_rx_gain": 3.0 / (1e28 / (4e14 * 3.6e11)) * 10.0 * 1.0001},
])
def test_boundaries_are_kept(make_record, overrides):
    assert rejection_rule(make_record(**overrides), CFG) is None


def test_first_violated_rule_wins(make_record):
    record = make_record(ddm_snr=float("nan"), solar_contamination=True, roll=40.0)
    assert rejection_rule(record, CFG) == "non_finite"


def test_quality_control_tallies(make_l1):
    items = [
        make_l1(),
        json.dumps(make_l1(channel=2)),
        make_l1(solar_contamination=True),
        make_l1(distance_to_land_km=1.0),
        "{not json",
        make_l1(channel=7),
        make_l1(ddms=[[1.0]]),
        make_l1(range_sp_rx=0.0),
    ]
    kept, tally = quality_control(items, CFG)
    assert [r.channel for r in kept] == [1, 2]
    assert set(tally) == set(RULES) | {MALFORMED}
    assert tally["solar_contamination"] == 1
    assert tally["near_land"] == 1
    assert tally[MALFORMED] == 4
    assert sum(tally.values()) == len(items) - len(kept)


def test_quality_control_is_idempotent(make_l1):
    kept, _ = quality_control([make_l1(), make_l1(roll=50.0), make_l1(channel=3)], CFG)
    again, tally = quality_control(kept, CFG)
    assert len(again) == len(kept) == 2
    assert not any(tally.values())


def test_thresholds_come_from_config(make_record):
    record = make_record(roll=20.0, distance_to_land_km=40.0)
    assert rejection_rule(record, PipelineConfig(max_abs_roll=10.0)) == "attitude_angles"
    assert rejection_rule(record, PipelineConfig(min_land_distance_km=50.0)) == "near_land"
    assert rejection_rule(record, PipelineConfig(rcg_min=100.0)) == "low_rcg"
