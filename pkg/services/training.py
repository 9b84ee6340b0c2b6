"""Обучение: AdamW, ранняя остановка по среднему RMSE валидации, прогноз."""
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from config import config
from config.schema import AppConfig, ModelConfig, TrainConfig
from services.dataset import (SampleArrays, compute_standardization, iterate_batches, model_inputs, split_dataset,
                              standardize)
from services.errors import ContractError
from services.fusion_head import batch_loss
from services.model import SCAWaveNet
from services.tensor import mul

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = (["epoch", "train_loss"] + [f"val_rmse_ch{i}" for i in range(1, config.N_CHANNELS + 1)]
                   + ["val_rmse_avg", "config_hash"])
EVAL_BATCH = 256
# сколько тензоров (B, 4, M, M) на слой держит граф вычислений
ATTENTION_COPIES = 4


def chunk_size(cfg: ModelConfig) -> int:
    """Сколько образцов помещается в один прямой проход при заданном бюджете памяти"""
    if not cfg.use_ddm_branch:
        return EVAL_BATCH
    per_sample = ATTENTION_COPIES * cfg.n_layers * config.N_CHANNELS * cfg.n_tokens ** 2 * 8
    return max(1, config.ATTENTION_MEMORY_MB * 2 ** 20 // per_sample)


def _chunks(idx: np.ndarray, limit: int):
    for start in range(0, len(idx), limit):
        yield idx[start:start + limit]


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int
    val_rmse: list[float]
    val_rmse_avg: float
    config_hash: str

    @model_validator(mode="after")
    def check_average(self):
        if len(self.val_rmse) != config.N_CHANNELS:
            raise ValueError(f"expected {config.N_CHANNELS} channel RMSE values")
        if not np.isclose(self.val_rmse_avg, float(np.mean(self.val_rmse)), rtol=0.0, atol=1e-12):
            raise ValueError("val_rmse_avg must equal the mean of the channel values")
        return self

    @classmethod
    def from_rmse(cls, epoch: int, rmse, config_hash: str) -> "CheckpointMeta":
        rmse = [float(r) for r in rmse]
        return cls(epoch=epoch, val_rmse=rmse, val_rmse_avg=float(np.mean(rmse)), config_hash=config_hash)


def adamw_step(params: dict, state: OptimizerState, cfg: TrainConfig):
    """Один шаг AdamW с раздельным weight decay; параметры меняются на месте"""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for parameter(s): {', '.join(missing)}")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, param in params.items():
        g = param.grad
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** state.step)
        v_hat = v / (1 - b2 ** state.step)
        param.data = param.data - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * param.data)


def predict_arrays(model: SCAWaveNet, arrays: SampleArrays, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Детерминированный прогон в режиме eval: (B, 4)"""
    was_training = model.training
    model.eval()
    out = np.zeros((len(arrays), config.N_CHANNELS))
    for idx in iterate_batches(len(arrays), min(batch_size, chunk_size(model.cfg))):
        out[idx] = model.forward(arrays.ddms[idx], arrays.aps[idx]).numpy()
    model.train(was_training)
    return out


def channel_rmse(model: SCAWaveNet, arrays: SampleArrays) -> list:
    errors = predict_arrays(model, arrays) - arrays.swh
    return np.sqrt(np.mean(errors ** 2, axis=0)).tolist()


@dataclass
class TrainResult:
    meta: CheckpointMeta
    history: list
    best_state: dict
    stopped_early: bool
    step_losses: list = field(default_factory=list)   # по одному значению на шаг оптимизатора


def train(model: SCAWaveNet, train_set: SampleArrays, val_set: SampleArrays, cfg: TrainConfig, seed: int,
          config_hash: str = "", validate=None) -> TrainResult:
    """Возвращает лучший по среднему RMSE валидации чекпоинт, а не последний.

    validate(model) -> RMSE по четырём каналам; по умолчанию считается на val_set.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractError("training needs non-empty train and validation sets")
    validate = validate or (lambda m: channel_rmse(m, val_set))
    params = model.named_parameters()
    state = OptimizerState()
    history, step_losses = [], []
    best_meta, best_state, wait = None, None, 0
    stopped_early = False
    limit = chunk_size(model.cfg)
    if limit < cfg.batch_size:
        logger.info(f"Batches of {cfg.batch_size} run in chunks of {limit} samples to bound attention memory")

    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.default_rng([seed, epoch])
        model.train()
        total, seen = 0.0, 0
        for idx in iterate_batches(len(train_set), cfg.batch_size, rng):
            model.zero_grad()
            step_loss = 0.0
            # градиенты частей батча накапливаются, шаг оптимизатора один
            for part in _chunks(idx, limit):
                pred = model.forward(train_set.ddms[part], train_set.aps[part], rng=rng)
                loss = batch_loss(pred, train_set.swh[part], cfg.delta)
                if len(part) < len(idx):
                    loss = mul(loss, len(part) / len(idx))
                loss.backward()
                step_loss += loss.item()
            adamw_step(params, state, cfg)
            step_losses.append(step_loss)
            total += step_loss * len(idx)
            seen += len(idx)
            logger.debug(f"epoch {epoch} step {state.step}: loss {step_loss:.6f}")
        train_loss = total / seen

        rmse = [float(r) for r in validate(model)]
        meta = CheckpointMeta.from_rmse(epoch, rmse, config_hash)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        **{f"val_rmse_ch{i + 1}": r for i, r in enumerate(rmse)},
                        "val_rmse_avg": meta.val_rmse_avg, "config_hash": config_hash})
        if best_meta is None or meta.val_rmse_avg < best_meta.val_rmse_avg:
            best_meta, wait = meta, 0
            best_state = {name: p.data.copy() for name, p in params.items()}
        else:
            wait += 1
        logger.info(f"Epoch {epoch}: train loss {train_loss:.5f}, val RMSE "
                    f"{' '.join(f'{r:.4f}' for r in rmse)} avg {meta.val_rmse_avg:.4f} "
                    f"(patience {wait}/{cfg.patience})")
        if wait >= cfg.patience:
            stopped_early = True
            logger.info(f"Early stopping at epoch {epoch}; best epoch {best_meta.epoch}")
            break

    for name, param in params.items():
        param.data = best_state[name].copy()
    model.eval()
    return TrainResult(meta=best_meta, history=history, best_state=best_state, stopped_early=stopped_early,
                       step_losses=step_losses)


def prediction_records(arrays: SampleArrays, predictions: np.ndarray, config_hash: str) -> list:
    records = []
    for b, sample_id in enumerate(arrays.sample_ids):
        stations = arrays.station_ids[b] if arrays.station_ids else [None] * config.N_CHANNELS
        for ch in range(config.N_CHANNELS):
            records.append({
                "sample_id": sample_id,
                "channel": ch + 1,
                "y_hat": float(predictions[b, ch]),
                "y_ref": float(arrays.swh[b, ch]),
                "lat": float(arrays.lats[b, ch]),
                "lon": float(arrays.lons[b, ch]),
                "station_id": stations[ch],
                "config_hash": config_hash,
            })
    return records


def predict(model: SCAWaveNet, arrays: SampleArrays, config_hash: str = "") -> list:
    """Прогноз по всем образцам: 4 записи на образец, пустой набор -> []"""
    if len(arrays) == 0:
        return []
    return prediction_records(arrays, predict_arrays(model, arrays), config_hash)


def write_history(path: str, history: list):
    pd.DataFrame(history, columns=HISTORY_COLUMNS).to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Training history written to {path}")


def prepare_arrays(samples, model_cfg, standardization: dict) -> SampleArrays:
    """Образцы -> стандартизованные массивы под столбцы AP модели"""
    arrays = model_inputs(samples, model_cfg.ap_columns, (model_cfg.ddm_width, model_cfg.ddm_height))
    return standardize(arrays, standardization)


def predict_samples(model: SCAWaveNet, samples, standardization: dict, config_hash: str = "") -> list:
    return predict(model, prepare_arrays(samples, model.cfg, standardization), config_hash)


@dataclass
class FitOutcome:
    model: SCAWaveNet
    result: TrainResult
    standardization: dict
    splits: dict


def fit_model(app: AppConfig, samples, config_hash: str = "", seed: int = None) -> FitOutcome:
    """Разбиение, стандартизация по train, обучение; seed задаёт и веса, и порядок батчей"""
    seed = app.seed if seed is None else seed
    splits = split_dataset(samples, app.pipeline, app.seed)
    shape = (app.model.ddm_width, app.model.ddm_height)
    columns = app.model.ap_columns
    if not splits["train"] or not splits["val"]:
        raise ContractError(f"training needs non-empty train and validation splits, got "
                            f"{len(splits['train'])} and {len(splits['val'])}")
    stats = compute_standardization(model_inputs(splits["train"], columns, shape))
    train_set = standardize(model_inputs(splits["train"], columns, shape), stats)
    val_set = standardize(model_inputs(splits["val"], columns, shape), stats)
    model = SCAWaveNet(app.model, seed)
    logger.info(f"Training {app.model.strategy} model with {sum(p.size for p in model.parameters())} "
                f"parameters on {len(train_set)} samples, validating on {len(val_set)}")
    result = train(model, train_set, val_set, app.train, seed, config_hash)
    return FitOutcome(model=model, result=result, standardization=stats, splits=splits)
