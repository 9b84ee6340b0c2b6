from datetime import datetime, timezone

import numpy as np
import pytest

from config.schema import ModelConfig, build_config
from services.records import ChannelObservation, FourChannelSample, L1Record
from services.synth import synth_generate

# маленькая сеть: M = (3 * 4 + 1) * 2 = 26 токенов
TOY_MODEL = {
    "ddm_width": 6,
    "ddm_height": 6,
    "patch_size": 3,
    "embed_dim": 2,
    "n_layers": 1,
    "d_ff": 16,
    "head_hidden_layers": 3,
    "head_min_width": 4,
    "head_max_width": 16,
}
TOY_VALUES = {
    **TOY_MODEL,
    "batch_size": 16,
    "max_epochs": 2,
    "patience": 1,
    "n_samples": 48,
    "lr": 1e-3,
}


def utc(*args) -> int:
    return int(datetime(*args, tzinfo=timezone.utc).timestamp())


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def toy_app():
    return build_config(TOY_VALUES)


@pytest.fixture
def model_cfg():
    def make(**overrides) -> ModelConfig:
        return ModelConfig(**{**TOY_MODEL, **overrides})
    return make


@pytest.fixture
def toy_inputs(rng):
    """DDM (2, 4, 3, 6, 6) и AP (2, 4, 9)"""
    return rng.normal(size=(2, 4, 3, 6, 6)), rng.normal(size=(2, 4, 9))


@pytest.fixture
def toy_samples(toy_app):
    return synth_generate(toy_app)


@pytest.fixture
def make_l1():
    def make(**overrides) -> dict:
        record = {
            "timestamp": utc(2020, 9, 1, 12),
            "channel": 1,
            "sp_lat": 14.0,
            "sp_lon": -55.0,
            "ddms": np.ones((3, 6, 6)).tolist(),
            "ddm_nbrcs": 40.0,
            "ddm_les": 20.0,
            "ddm_snr": 5.0,
            "gps_eirp": 500.0,
            "sp_rx_gain": 10.0,
            "sp_inc_angle": 30.0,
            "range_tx_sp": 2.0e7,
            "range_sp_rx": 6.0e5,
            "distance_to_land_km": 300.0,
        }
        record.update(overrides)
        return record
    return make


@pytest.fixture
def make_record(make_l1):
    def make(**overrides) -> L1Record:
        return L1Record.model_validate(make_l1(**overrides))
    return make


@pytest.fixture
def make_sample():
    def make(sample_id: str, timestamp: int, swh=(1.0, 2.0, 3.0, 4.0), aps=None, stations=None,
             coords=None, ddm_shape=(6, 6), source: str = "synthetic") -> FourChannelSample:
        channels = []
        for ch, value in enumerate(swh):
            lat, lon = coords[ch] if coords else (10.0 + ch, 20.0 + ch)
            channels.append(ChannelObservation(
                channel=ch + 1,
                sp_lat=lat,
                sp_lon=lon,
                ddms=np.full((3,) + tuple(ddm_shape), float(value)),
                aps=dict(aps) if aps is not None else {"ddm_nbrcs": 100.0 + ch, "ddm_les": float(value)},
                swh_ref=float(value),
                station_id=stations[ch] if stations else None,
            ))
        return FourChannelSample(sample_id=sample_id, timestamp=timestamp, source=source, channels=channels)
    return make
