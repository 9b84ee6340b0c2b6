"""Слияние признаков DDM и AP, MLP-голова на четыре канала и Huber loss."""
import logging

import numpy as np

from config import config
from config.schema import ModelConfig
from services.ddm_branch import _check_strategy
from services.errors import ConfigError, ContractError, DimensionError
from services.tensor import (Module, Tensor, abs_, add, as_tensor, concat, matmul, mean, mul, relu,
                             reshape, sub, swap_last, where, xavier_uniform)

logger = logging.getLogger(__name__)


def fuse(d_prime, a_prime, strategy: str) -> Tensor:
    """CI: (..., 4, M+K) - вектор на канал; CD: (..., 4(M+K)) - один общий вектор.

    Любая из веток может отсутствовать (абляция), но не обе.
    """
    _check_strategy(strategy)
    parts = []
    if d_prime is not None:
        parts.append(swap_last(d_prime))
    if a_prime is not None:
        parts.append(as_tensor(a_prime))
    if not parts:
        raise ContractError("fuse needs at least one feature branch")
    if len(parts) == 2 and parts[0].shape[:-1] != parts[1].shape[:-1]:
        raise DimensionError(f"DDM features {d_prime.shape} and AP features {a_prime.shape} disagree")
    fused = concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    if strategy == "CI":
        return fused
    return reshape(fused, fused.shape[:-2] + (-1,))


def fused_width(cfg: ModelConfig) -> int:
    """Ширина входа головы: на канал (CI) или общая (CD)"""
    width = cfg.n_ap
    if cfg.use_ddm_branch:
        width += cfg.n_tokens if cfg.head_input == "full" else cfg.embed_dim
    return width if cfg.strategy == "CI" else config.N_CHANNELS * width


def hidden_widths(in_width: int, cfg: ModelConfig) -> list:
    """Геометрическое сужение от ширины входа (с потолком) до head_min_width"""
    start = min(max(in_width, cfg.head_min_width), cfg.head_max_width)
    n = cfg.head_hidden_layers
    if n == 1:
        return [start]
    ratio = cfg.head_min_width / start
    return [max(cfg.head_min_width, int(round(start * ratio ** (i / (n - 1))))) for i in range(n)]


class TaskHead(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("head")
        self.strategy = cfg.strategy
        in_width = fused_width(cfg)
        out_width = 1 if cfg.strategy == "CI" else config.N_CHANNELS
        self.widths = hidden_widths(in_width, cfg)
        self.layers = []
        fan_in = in_width
        for i, width in enumerate(self.widths + [out_width]):
            name = f"layer{i + 1}" if i < len(self.widths) else "out"
            self.layers.append((
                self.parameter(f"{name}.weight", xavier_uniform(rng, (fan_in, width), fan_in, width)),
                self.parameter(f"{name}.bias", np.zeros(width)),
            ))
            fan_in = width

    def forward(self, fused) -> Tensor:
        return head_forward(fused, self, self.strategy)


def head_forward(fused, head: TaskHead, strategy: str) -> Tensor:
    """9 скрытых слоёв с ReLU; в CI одна сеть применяется к каждому каналу"""
    _check_strategy(strategy)
    x = as_tensor(fused)
    for weight, bias in head.layers[:-1]:
        x = relu(add(matmul(x, weight), bias))
    weight, bias = head.layers[-1]
    out = add(matmul(x, weight), bias)
    if strategy == "CI":
        return reshape(out, out.shape[:-1])
    return out


def huber(y_hat: float, y: float, delta: float) -> float:
    if delta <= 0:
        raise ConfigError(f"Huber delta must be positive, got {delta}")
    e = abs(y - y_hat)
    if e <= delta:
        return 0.5 * e * e
    return delta * e - 0.5 * delta * delta


def huber_tensor(pred, ref, delta: float) -> Tensor:
    if delta <= 0:
        raise ConfigError(f"Huber delta must be positive, got {delta}")
    err = sub(as_tensor(ref), pred)
    magnitude = abs_(err)
    quadratic = mul(mul(err, err), 0.5)
    linear = sub(mul(magnitude, delta), 0.5 * delta * delta)
    return where(magnitude.data <= delta, quadratic, linear)


def batch_loss(pred, ref, delta: float) -> Tensor:
    """Среднее Huber по всем парам (образец, канал)"""
    pred = as_tensor(pred)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match reference {ref.shape}")
    if pred.size == 0:
        raise ContractError("batch_loss on an empty batch")
    return mean(huber_tensor(pred, ref, delta))
