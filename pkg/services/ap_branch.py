"""Ветка вспомогательных параметров (AP): эмбеддинг 1D-свёрткой и два
сигмоидных гейта - по пространственной оси и по оси каналов.
"""
import logging

import numpy as np

from config import config
from config.schema import ModelConfig
from services.ddm_branch import _check_strategy
from services.errors import DimensionError
from services.tensor import (Module, Tensor, add, concat, conv1d_embed, matmul, mul, reshape, sigmoid,
                             split, sum_, swap_last, xavier_uniform)

logger = logging.getLogger(__name__)

EMBED_CHANNELS = 2 * config.N_CHANNELS


class ApBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("ap")
        c, k, e = config.N_CHANNELS, cfg.n_ap, cfg.ap_expand
        self.strategy = cfg.strategy
        self.n_ap = k

        if cfg.strategy == "CD":
            self.embed = {
                "weight": self.parameter("embed.weight", xavier_uniform(rng, (EMBED_CHANNELS, c, 1), c, EMBED_CHANNELS)),
                "bias": self.parameter("embed.bias", np.zeros(EMBED_CHANNELS)),
            }
        else:
            # выход o смотрит только на входной канал o % 4
            self.embed = {
                "weight": self.parameter("embed.weight", rng.uniform(0.5, 1.5, size=EMBED_CHANNELS)),
                "bias": self.parameter("embed.bias", np.zeros(EMBED_CHANNELS)),
            }

        self.spatial = {
            "p1": self.parameter("spatial.p1.weight", xavier_uniform(rng, (k, e * k), k, e * k)),
            "b1": self.parameter("spatial.p1.bias", np.zeros(e * k)),
            "p2": self.parameter("spatial.p2.weight", xavier_uniform(rng, (e * k, k), e * k, k)),
            "b2": self.parameter("spatial.p2.bias", np.zeros(k)),
        }

        if cfg.strategy == "CD":
            self.channel = {
                "p3": self.parameter("channel.p3.weight", xavier_uniform(rng, (c, e * c), c, e * c)),
                "b3": self.parameter("channel.p3.bias", np.zeros(e * c)),
                "p4": self.parameter("channel.p4.weight", xavier_uniform(rng, (e * c, c), e * c, c)),
                "b4": self.parameter("channel.p4.bias", np.zeros(c)),
            }
        else:
            self.channel = {
                "p3": self.parameter("channel.p3.weight", xavier_uniform(rng, (c, e), 1, e)),
                "b3": self.parameter("channel.p3.bias", np.zeros((c, e))),
                "p4": self.parameter("channel.p4.weight", xavier_uniform(rng, (c, e), e, 1)),
                "b4": self.parameter("channel.p4.bias", np.zeros(c)),
            }

    def forward(self, a) -> Tensor:
        if a.shape[-2:] != (config.N_CHANNELS, self.n_ap):
            raise DimensionError(f"AP matrix must be (..., {config.N_CHANNELS}, {self.n_ap}), got {a.shape}")
        a1, a2 = ap_embed(a, self.embed, self.strategy)
        w_a1 = spatial_gate(a1, self.spatial)
        w_a2 = channel_gate(a2, self.channel, self.strategy)
        return apply_gates(a, w_a1, w_a2)


def ap_embed(a, weights: dict, strategy: str = "CD") -> tuple:
    """(..., 4, K) -> A1, A2 по (..., 4, K): поточечная свёртка в 8 каналов и деление пополам"""
    _check_strategy(strategy)
    if strategy == "CD":
        embedded = conv1d_embed(a, weights["weight"], weights["bias"])
    else:
        doubled = concat([a, a], axis=-2)
        embedded = add(mul(doubled, reshape(weights["weight"], (EMBED_CHANNELS, 1))),
                       reshape(weights["bias"], (EMBED_CHANNELS, 1)))
    a1, a2 = split(embedded, axis=-2, parts=2)
    return a1, a2


def spatial_gate(a1, weights: dict) -> Tensor:
    """W_A1 = sigmoid(P2(P1(A1))), проекции вдоль оси параметров каждой строки"""
    up = add(matmul(a1, weights["p1"]), weights["b1"])
    return sigmoid(add(matmul(up, weights["p2"]), weights["b2"]))


def channel_gate(a2, weights: dict, strategy: str = "CD") -> Tensor:
    """W_A2 = sigmoid(P4(P3(A2^T)))^T, проекции вдоль оси каналов"""
    _check_strategy(strategy)
    t = swap_last(a2)
    if strategy == "CD":
        up = add(matmul(t, weights["p3"]), weights["b3"])
        gate = sigmoid(add(matmul(up, weights["p4"]), weights["b4"]))
    else:
        up = add(mul(reshape(t, t.shape + (1,)), weights["p3"]), weights["b3"])
        gate = sigmoid(add(sum_(mul(up, weights["p4"]), axis=-1), weights["b4"]))
    return swap_last(gate)


def apply_gates(a, w_a1, w_a2) -> Tensor:
    """A' = A ⊗ W_A1 ⊗ W_A2"""
    if not a.shape == w_a1.shape == w_a2.shape:
        raise DimensionError(f"gate shapes {w_a1.shape}, {w_a2.shape} do not match AP shape {a.shape}")
    return mul(mul(a, w_a1), w_a2)
