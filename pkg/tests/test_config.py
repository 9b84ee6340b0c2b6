from datetime import date
import os

import pytest
from pydantic import ValidationError

from config.schema import (AppConfig, ModelConfig, build_config, config_hash, flat_dict, load_config,
                           parse_assignment)
from services.errors import ConfigError
from services.session import RunSession


def test_defaults():
    app = AppConfig()
    assert app.model.strategy == "CD"
    assert app.model.ap_columns[-1] == "rcg"
    assert app.model.n_ap == 9
    assert app.model.n_patches == 4 * 6
    assert app.train.patience == 15 and app.train.delta == 2.0


def test_flat_keys_route_to_sections():
    app = build_config({"strategy": "CI", "lr": 0.01, "rcg_min": 4.0, "sd_quantile": 0.9, "n_samples": 10,
                        "seed": 5})
    assert app.model.strategy == "CI"
    assert app.train.lr == 0.01
    assert app.pipeline.rcg_min == 4.0
    assert app.eval.sd_quantile == 0.9
    assert app.synth.n_samples == 10
    assert app.seed == 5


@pytest.mark.parametrize("values", [
    {"no_such_key": 1},
    {"patience": 20, "max_epochs": 10},
    {"strategy": "XX"},
    {"val_start": date(2020, 6, 1)},
    {"bin_edges": [0.0, 2.0, 1.0]},
    {"use_ddm_branch": False, "ap_groups": []},
    {"head_min_width": 64, "head_max_width": 32},
    {"patch_size": 0},
])
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        build_config(values)


def test_ci_needs_ffn_width_divisible_by_four():
    with pytest.raises(ValidationError):
        ModelConfig(strategy="CI", d_ff=10)


def test_parse_assignment():
    assert parse_assignment("lr=0.001") == ("lr", 0.001)
    assert parse_assignment("strategy=CI") == ("strategy", "CI")
    assert parse_assignment("use_wind=true") == ("use_wind", True)
    assert parse_assignment("train_end=2020-09-01") == ("train_end", date(2020, 9, 1))
    with pytest.raises(ConfigError):
        parse_assignment("lr")


def test_load_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("lr: 0.5\nstrategy: CI\n", encoding="utf-8")
    app = load_config(str(path), {"lr": 0.25})
    assert app.model.strategy == "CI"
    assert app.train.lr == 0.25


def test_load_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_example_config_matches_defaults():
    path = os.path.join(os.path.dirname(__file__), os.pardir, "config.example.yaml")
    assert config_hash(load_config(path)) == config_hash(build_config({"seed": 42}))


def test_config_hash():
    base = AppConfig()
    assert len(config_hash(base)) == 12
    assert config_hash(base) == config_hash(build_config(flat_dict(base)))
    assert config_hash(build_config({"lr": 1e-3})) != config_hash(base)


def test_session_override_recomputes_hash():
    session = RunSession()
    before = session.hash
    session.override(strategy=None, use_wind=None)
    assert session.hash == before
    app = session.override(use_wind=True)
    assert app.model.ap_columns[-1] == "wind_speed"
    assert session.hash != before


def test_patch_larger_than_ddm_pads_to_one_patch():
    cfg = ModelConfig(ddm_width=2, ddm_height=2, patch_size=3)
    assert cfg.n_patches == 1
    assert cfg.n_tokens == (3 * 1 + 1) * cfg.embed_dim
