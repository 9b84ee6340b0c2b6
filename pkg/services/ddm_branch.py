"""Ветка DDM: патч-эмбеддинг, глобальный токен, позиционное кодирование,
агрегация каналов и энкодер со spatial-channel attention.

Каналы CYGNSS работают как головы внимания: d_model = h = 4, d_k = 1.
Тензор токенов хранится как (..., M, 4), столбец c - канал c.
"""
import logging

import numpy as np

from config import config
from config.schema import ModelConfig
from services.errors import ConfigError, DimensionError
from services.tensor import (Module, Tensor, add, concat, conv_patchify, dropout, index,
                             layer_norm, matmul, mul, relu, reshape, softmax_rows, stack, sum_,
                             swap_last, xavier_uniform)

logger = logging.getLogger(__name__)

STRATEGIES = ("CI", "CD")


def _check_strategy(strategy: str):
    if strategy not in STRATEGIES:
        raise ConfigError(f"Unknown channel strategy '{strategy}', expected one of {STRATEGIES}")


def positional_encoding(seq_len: int, dim: int) -> Tensor:
    """Синусоидальное кодирование: sin на чётных столбцах, cos на нечётных"""
    if dim < 1:
        raise DimensionError(f"positional encoding needs dim >= 1, got {dim}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    column = np.arange(dim)
    two_d = (column - column % 2).astype(np.float64)
    angle = pos / np.power(10000.0, two_d / dim)
    return Tensor(np.where(column % 2 == 0, np.sin(angle), np.cos(angle)))


class DdmEmbedding(Module):
    """Общие для всех четырёх каналов ядра патчей и глобальный токен"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "ddm.embed"):
        super().__init__(prefix)
        p, d_e = cfg.patch_size, cfg.embed_dim
        self.kernels = {}
        self.biases = {}
        for name in config.DDM_TYPES:
            self.kernels[name] = self.parameter(
                f"kernel.{name}", xavier_uniform(rng, (d_e, 1, p, p), p * p, d_e))
            self.biases[name] = self.parameter(f"bias.{name}", np.zeros(d_e))
        self.global_token = self.parameter("global_token", rng.normal(0.0, 0.02, size=(1, d_e)))


def embed_channel(ddms, embedding: DdmEmbedding, cfg: ModelConfig) -> Tensor:
    """(..., 3, W, H) -> (..., 3N+1, D_e): патчи трёх типов DDM, глобальный токен в позиции 0, PE"""
    if ddms.ndim < 3 or ddms.shape[-3] != len(config.DDM_TYPES):
        raise DimensionError(f"expected (..., 3, W, H) DDMs, got {ddms.shape}")
    axis = ddms.ndim - 3
    lead = ddms.shape[:axis]
    pieces = []
    for t, name in enumerate(config.DDM_TYPES):
        key = (slice(None),) * axis + (t,)
        pieces.append(conv_patchify(index(ddms, key), embedding.kernels[name],
                                    embedding.biases[name], cfg.patch_size))
    sequence = concat(pieces, axis=-2)
    token = add(Tensor(np.zeros(lead + embedding.global_token.shape)), embedding.global_token)
    sequence = concat([token, sequence], axis=-2)
    return add(sequence, positional_encoding(sequence.shape[-2], cfg.embed_dim))


def aggregate_channels(per_channel) -> Tensor:
    """4 последовательности (S, D_e) -> токены (M, 4), M = S * D_e.

    Порядок развёртки: (тип DDM, токен, компонента эмбеддинга) построчно.
    """
    if len(per_channel) != config.N_CHANNELS:
        raise DimensionError(f"expected {config.N_CHANNELS} channel sequences, got {len(per_channel)}")
    flat = [reshape(seq, seq.shape[:-2] + (-1,)) for seq in per_channel]
    return stack(flat, axis=-1)


def _heads(x: Tensor) -> Tensor:
    # (..., M, 4) -> (..., 4, M, 1)
    return reshape(swap_last(x), x.shape[:-2] + (x.shape[-1], x.shape[-2], 1))


def attention_weights(tokens, weights: dict) -> Tensor:
    """softmax(Q_i K_i^T / sqrt(d_k)) для каждой головы: (..., 4, M, M)"""
    q = _heads(mul(tokens, weights["q_scale"]))
    k = _heads(mul(tokens, weights["k_scale"]))
    # d_k = 1, масштаб 1/sqrt(1)
    return softmax_rows(matmul(q, swap_last(k)))


def sca_attention(tokens, weights: dict, strategy: str) -> Tensor:
    """Пространственное внимание внутри каждого канала + смешивание каналов через W^O"""
    _check_strategy(strategy)
    if tokens.shape[-1] != config.N_CHANNELS:
        raise DimensionError(f"tokens must have {config.N_CHANNELS} channel columns, got {tokens.shape}")
    attn = attention_weights(tokens, weights)
    v = _heads(mul(tokens, weights["v_scale"]))
    heads = matmul(attn, v)
    h = swap_last(reshape(heads, heads.shape[:-1]))
    if strategy == "CD":
        return matmul(h, weights["w_o"])
    return mul(h, weights["w_o"])


def add_norm(residual, sublayer, gamma, beta, strategy: str, dropout_p: float = 0.0, train: bool = False,
             rng=None, eps: float = 1e-5, standard_residual: bool = False) -> Tensor:
    """residual + Dropout(LN(sublayer)); для MSA residual = sublayer = O.

    В режиме CI статистики LN считаются по токенам отдельно для каждого
    столбца, чтобы каналы не смешивались.
    """
    _check_strategy(strategy)
    axis = -1 if strategy == "CD" else -2
    if standard_residual:
        return layer_norm(add(residual, sublayer), gamma, beta, eps=eps, axis=axis)
    normed = layer_norm(sublayer, gamma, beta, eps=eps, axis=axis)
    return add(residual, dropout(normed, dropout_p, train, rng))


def ffn(x, weights: dict, strategy: str, dropout_p: float = 0.0, train: bool = False, rng=None) -> Tensor:
    """L2(Dropout(ReLU(L1(x)))) по токенам; в CI - блочно-диагональные L1, L2"""
    _check_strategy(strategy)
    if strategy == "CD":
        hidden = relu(add(matmul(x, weights["w1"]), weights["b1"]))
        hidden = dropout(hidden, dropout_p, train, rng)
        return add(matmul(hidden, weights["w2"]), weights["b2"])
    # (..., M, 4) -> (..., M, 4, 1) * (4, F)
    expanded = reshape(x, x.shape + (1,))
    hidden = relu(add(mul(expanded, weights["w1"]), weights["b1"]))
    hidden = dropout(hidden, dropout_p, train, rng)
    return add(sum_(mul(hidden, weights["w2"]), axis=-1), weights["b2"])


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str):
        super().__init__(prefix)
        c = config.N_CHANNELS
        self.strategy = cfg.strategy
        self.attn = {
            "q_scale": self.parameter("q_scale", rng.uniform(0.5, 1.5, size=c)),
            "k_scale": self.parameter("k_scale", rng.uniform(0.5, 1.5, size=c)),
            "v_scale": self.parameter("v_scale", rng.uniform(0.5, 1.5, size=c)),
        }
        if cfg.strategy == "CD":
            self.attn["w_o"] = self.parameter("w_o", xavier_uniform(rng, (c, c), c, c))
        else:
            self.attn["w_o"] = self.parameter("w_o", rng.uniform(0.5, 1.5, size=c))
        self.ln1 = (self.parameter("ln1.gamma", np.ones(c)), self.parameter("ln1.beta", np.zeros(c)))

        if cfg.strategy == "CD":
            self.ffn = {
                "w1": self.parameter("ffn.w1", xavier_uniform(rng, (c, cfg.d_ff), c, cfg.d_ff)),
                "b1": self.parameter("ffn.b1", np.zeros(cfg.d_ff)),
                "w2": self.parameter("ffn.w2", xavier_uniform(rng, (cfg.d_ff, c), cfg.d_ff, c)),
                "b2": self.parameter("ffn.b2", np.zeros(c)),
            }
        else:
            if cfg.d_ff % c:
                raise ConfigError(f"d_ff={cfg.d_ff} must be divisible by {c} in CI mode")
            width = cfg.d_ff // c
            self.ffn = {
                "w1": self.parameter("ffn.w1", xavier_uniform(rng, (c, width), 1, width)),
                "b1": self.parameter("ffn.b1", np.zeros((c, width))),
                "w2": self.parameter("ffn.w2", xavier_uniform(rng, (c, width), width, 1)),
                "b2": self.parameter("ffn.b2", np.zeros(c)),
            }
        self.ln2 = (self.parameter("ln2.gamma", np.ones(c)), self.parameter("ln2.beta", np.zeros(c)))


def encoder_layer_forward(tokens, layer: EncoderLayer, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    strategy = cfg.strategy
    norm = dict(strategy=strategy, dropout_p=cfg.dropout_p, train=train, rng=rng,
                eps=cfg.ln_eps, standard_residual=cfg.standard_residual)
    o = sca_attention(tokens, layer.attn, strategy)
    # стандартный вариант: LN(x + MSA(x)); по умолчанию D = O + Dropout(LN(O))
    d = add_norm(tokens if cfg.standard_residual else o, o, *layer.ln1, **norm)
    d_f = ffn(d, layer.ffn, strategy, cfg.dropout_p, train, rng)
    return add_norm(d, d_f, *layer.ln2, **norm)


class DdmBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__("ddm")
        self.cfg = cfg
        self.embedding = self.child(DdmEmbedding(cfg, rng))
        self.layers = [self.child(EncoderLayer(cfg, rng, f"ddm.encoder.layer{i + 1}")) for i in range(cfg.n_layers)]

    def forward(self, ddms, rng=None) -> Tensor:
        return encoder_forward(ddms, self, self.cfg, train=self.training, rng=rng)


def encoder_forward(ddms, branch: DdmBranch, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    """(..., 4, 3, W, H) -> D' (..., M, 4)"""
    if ddms.ndim < 4 or ddms.shape[-4] != config.N_CHANNELS:
        raise DimensionError(f"expected (..., 4, 3, W, H) DDM stack, got {ddms.shape}")
    if ddms.shape[-2:] != (cfg.ddm_width, cfg.ddm_height):
        raise DimensionError(f"DDM geometry {ddms.shape[-2:]} does not match config "
                             f"{cfg.ddm_width}x{cfg.ddm_height}")
    embedded = embed_channel(ddms, branch.embedding, cfg)       # (..., 4, S, D_e)
    tokens = aggregate_channels([index(embedded, (Ellipsis, c, slice(None), slice(None)))
                                 for c in range(config.N_CHANNELS)])
    for layer in branch.layers:
        tokens = encoder_layer_forward(tokens, layer, cfg, train, rng)
    return tokens
