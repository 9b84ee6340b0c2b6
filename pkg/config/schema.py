"""Схема конфигурации: плоский YAML-файл ключ/значение + переопределения из CLI."""
from datetime import date, datetime, timezone
from typing import Literal, Optional
import hashlib
import json
import logging
import math

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
import yaml

from config import config
from services.errors import ConfigError

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Section):
    ddm_width: int = Field(11, ge=1)     # Doppler bins
    ddm_height: int = Field(17, ge=1)    # delay bins
    patch_size: int = Field(3, ge=1)
    embed_dim: int = Field(8, ge=1)
    n_layers: int = Field(6, ge=1)
    d_model: Literal[4] = 4
    n_heads: Literal[4] = 4
    d_ff: int = Field(2048, ge=1)
    dropout_p: float = Field(0.1, ge=0.0, lt=1.0)
    strategy: Literal["CI", "CD"] = "CD"
    standard_residual: bool = False
    head_input: Literal["full", "global_only"] = "full"
    head_hidden_layers: int = Field(9, ge=1)
    head_min_width: int = Field(32, ge=1)
    head_max_width: int = Field(256, ge=1)
    ap_expand: int = Field(4, ge=1)
    use_wind: bool = False
    use_ddm_branch: bool = True
    ap_groups: tuple[Literal["ddm", "receiver", "geometry"], ...] = ("ddm", "receiver", "geometry")
    ln_eps: float = Field(1e-5, gt=0.0)

    @model_validator(mode="after")
    def check_consistency(self):
        if self.strategy == "CI" and self.d_ff % 4:
            raise ValueError(f"d_ff={self.d_ff} must be divisible by 4 in CI mode")
        if not self.use_ddm_branch and not self.ap_columns:
            raise ValueError("at least one of the DDM and AP branches must be enabled")
        if self.head_min_width > self.head_max_width:
            raise ValueError("head_min_width must not exceed head_max_width")
        return self

    @property
    def ap_columns(self) -> tuple:
        selected = {name for group in self.ap_groups for name in config.AP_GROUPS[group]}
        columns = tuple(c for c in config.AP_COLUMNS if c in selected)
        return columns + ((config.WIND_COLUMN,) if self.use_wind else ())

    @property
    def n_ap(self) -> int:
        return len(self.ap_columns)

    @property
    def n_patches(self) -> int:
        return math.ceil(self.ddm_width / self.patch_size) * math.ceil(self.ddm_height / self.patch_size)

    @property
    def seq_len(self) -> int:
        return len(config.DDM_TYPES) * self.n_patches + 1

    @property
    def n_tokens(self) -> int:
        return self.seq_len * self.embed_dim


class TrainConfig(_Section):
    batch_size: int = Field(512, ge=1)
    max_epochs: int = Field(75, ge=1)
    patience: int = Field(15, ge=1)
    lr: float = Field(1.4e-4, ge=0.0)
    weight_decay: float = Field(1e-5, ge=0.0)
    delta: float = Field(2.0, gt=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)

    @model_validator(mode="after")
    def check_patience(self):
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        return self


class PipelineConfig(_Section):
    rcg_min: float = 3.0
    max_abs_roll: float = 30.0
    max_abs_yaw: float = 5.0
    max_abs_pitch: float = 10.0
    min_land_distance_km: float = 25.0
    quality_flag_bits: int = Field(28, ge=1, le=64)
    fill_value_threshold: float = config.FILL_VALUE
    buoy_max_distance_km: float = Field(25.0, ge=0.0)
    buoy_max_minutes: float = Field(30.0, ge=0.0)
    swh_cap: float = Field(8.0, gt=0.0)
    train_start: date = date(2019, 8, 1)
    train_end: date = date(2020, 8, 1)
    val_start: date = date(2020, 8, 1)
    val_end: date = date(2021, 8, 1)
    test_start: date = date(2021, 8, 1)
    test_end: date = date(2022, 8, 1)
    n_train: Optional[int] = Field(None, ge=0)
    n_val: Optional[int] = Field(None, ge=0)
    n_test: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def check_splits(self):
        ranges = self.split_ranges
        for name, start, end in ranges:
            if start >= end:
                raise ValueError(f"{name} split is empty: start must precede end")
        for i, (name_a, start_a, end_a) in enumerate(ranges):
            for name_b, start_b, end_b in ranges[i + 1:]:
                if start_a < end_b and start_b < end_a:
                    raise ValueError(f"{name_a} and {name_b} split ranges overlap")
        return self

    @property
    def split_ranges(self) -> list:
        """Полуоткрытые интервалы [start, end) в секундах UTC"""
        def ts(d):
            return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())
        return [
            ("train", ts(self.train_start), ts(self.train_end)),
            ("val", ts(self.val_start), ts(self.val_end)),
            ("test", ts(self.test_start), ts(self.test_end)),
        ]

    @property
    def split_counts(self) -> dict:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}


class EvalConfig(_Section):
    bin_edges: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    scatter_bin_width: float = Field(0.1, gt=0.0)
    bias_cell_deg: float = Field(1.0, gt=0.0)
    sd_quantile: float = Field(0.95, gt=0.0, le=1.0)
    mape_min_ref: float = Field(0.01, ge=0.0)

    @model_validator(mode="after")
    def check_edges(self):
        edges = self.bin_edges
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin_edges must be strictly increasing with at least two values")
        return self


class SynthConfig(_Section):
    n_samples: int = Field(256, ge=1)
    noise_sd: float = Field(0.05, ge=0.0)
    swh_lo: float = Field(0.0, ge=0.0)
    swh_hi: float = Field(8.0, le=8.0)
    channel_corr: float = Field(0.9, ge=0.0, le=1.0)
    planted_signal: bool = True
    raw_start: datetime = datetime(2020, 7, 30)
    raw_hours: int = Field(72, ge=2)
    raw_violation_rate: float = Field(0.1, ge=0.0, le=1.0)
    raw_buoys: int = Field(6, ge=0)

    @model_validator(mode="after")
    def check_range(self):
        if self.swh_lo >= self.swh_hi:
            raise ValueError("swh_lo must be below swh_hi")
        return self


class AppConfig(_Section):
    seed: int = config.DEFAULT_SEED
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    pipeline: PipelineConfig = PipelineConfig()
    eval: EvalConfig = EvalConfig()
    synth: SynthConfig = SynthConfig()


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "pipeline": PipelineConfig,
    "eval": EvalConfig,
    "synth": SynthConfig,
}

# ключ -> секция; ключи уникальны по всем секциям
KEY_OWNER = {key: name for name, cls in SECTIONS.items() for key in cls.model_fields}
assert len(KEY_OWNER) == sum(len(cls.model_fields) for cls in SECTIONS.values())


def build_config(values: dict) -> AppConfig:
    sections = {name: {} for name in SECTIONS}
    top = {}
    unknown = []
    for key, value in values.items():
        if key == "seed":
            top["seed"] = value
        elif key in KEY_OWNER:
            sections[KEY_OWNER[key]][key] = value
        else:
            unknown.append(str(key))
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(sorted(unknown))}")
    try:
        return AppConfig.model_validate({**top, **sections})
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: str = None, overrides: dict = None) -> AppConfig:
    """Файл (если есть) + переопределения; переопределения важнее"""
    values = {}
    path = path or config.CONFIG_PATH
    if path:
        with open(path, encoding="utf-8") as f:
            try:
                raw = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Config file {path} is not valid YAML: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must be a flat key/value mapping")
        values.update(raw)
        logger.debug(f"Loaded {len(raw)} keys from {path}")
    values.update(overrides or {})
    return build_config(values)


def parse_assignment(text: str) -> tuple:
    """'key=value' -> (key, значение в YAML-интерпретации)"""
    if "=" not in text:
        raise ConfigError(f"Expected key=value, got '{text}'")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def flat_dict(app: AppConfig) -> dict:
    flat = {"seed": app.seed}
    for name in SECTIONS:
        flat.update(getattr(app, name).model_dump(mode="json"))
    return flat


def config_hash(app: AppConfig) -> str:
    payload = json.dumps(flat_dict(app), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
