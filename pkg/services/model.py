"""SCAWaveNet: ветки DDM и AP, слияние, голова; подсчёт параметров и FLOPs; чекпоинты."""
import json
import logging
import os

import numpy as np
from pydantic import ValidationError

from config import config
from config.schema import ModelConfig
from services.ap_branch import EMBED_CHANNELS, ApBranch
from services.ddm_branch import DdmBranch, encoder_forward
from services.errors import DataFormatError, SchemaVersionError
from services.fusion_head import TaskHead, fuse, fused_width, head_forward, hidden_widths
from services.tensor import Module, Tensor, as_tensor, index

logger = logging.getLogger(__name__)

# справочные значения для сравнения, не проверяются
REFERENCE_COMPLEXITY = {"CI": (0.915e6, 7.721e9), "CD": (1.966e6, 9.812e9)}
HEADER_KEYS = ("format_version", "model_config", "parameters", "standardization", "ap_columns", "meta", "config_hash")


class SCAWaveNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int):
        super().__init__("")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.ddm = self.child(DdmBranch(cfg, rng)) if cfg.use_ddm_branch else None
        self.ap = self.child(ApBranch(cfg, rng)) if cfg.n_ap else None
        self.head = self.child(TaskHead(cfg, rng))

    def forward(self, ddms, aps, rng=None) -> Tensor:
        """(B, 4, 3, W, H), (B, 4, K) -> ŷ (B, 4)"""
        d_prime = a_prime = None
        if self.ddm is not None:
            d_prime = encoder_forward(as_tensor(ddms), self.ddm, self.cfg, train=self.training, rng=rng)
            if self.cfg.head_input == "global_only":
                d_prime = index(d_prime, (Ellipsis, slice(0, self.cfg.embed_dim), slice(None)))
        if self.ap is not None:
            a_prime = self.ap.forward(as_tensor(aps))
        return head_forward(fuse(d_prime, a_prime, self.cfg.strategy), self.head, self.cfg.strategy)

    __call__ = forward


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def estimate_flops(cfg: ModelConfig) -> int:
    """Умножения-сложения одного прямого прохода на образец, FLOPs = 2 · MACs"""
    c = config.N_CHANNELS
    macs = 0
    if cfg.use_ddm_branch:
        m = cfg.n_tokens
        macs += c * len(config.DDM_TYPES) * cfg.n_patches * cfg.embed_dim * cfg.patch_size ** 2
        per_layer = 3 * m * c                 # масштабы Q, K, V
        per_layer += c * 2 * m * m            # QK^T и A·V по головам
        per_layer += m * c * (c if cfg.strategy == "CD" else 1)
        per_layer += 2 * m * (c * cfg.d_ff if cfg.strategy == "CD" else cfg.d_ff)
        macs += cfg.n_layers * per_layer
    k, e = cfg.n_ap, cfg.ap_expand
    if k:
        macs += EMBED_CHANNELS * k * (c if cfg.strategy == "CD" else 1)
        macs += 2 * c * k * e * k
        macs += 2 * k * c * e * (c if cfg.strategy == "CD" else 1)
    widths = [fused_width(cfg)] + hidden_widths(fused_width(cfg), cfg) + [1 if cfg.strategy == "CI" else c]
    head = sum(a * b for a, b in zip(widths, widths[1:]))
    macs += head * (c if cfg.strategy == "CI" else 1)
    return 2 * macs


def complexity_report(cfg: ModelConfig, seed: int = 0) -> dict:
    model = SCAWaveNet(cfg, seed)
    params, flops = count_params(model), estimate_flops(cfg)
    ref_params, ref_flops = REFERENCE_COMPLEXITY[cfg.strategy]
    return {"strategy": cfg.strategy, "params": params, "flops": flops,
            "reference_params": ref_params, "reference_flops": ref_flops}


def save_checkpoint(path: str, model: SCAWaveNet, *, meta: dict, standardization: dict, config_hash: str):
    """Строка JSON-заголовка, затем float64 little-endian всех параметров в порядке заголовка"""
    named = model.named_parameters()
    header = {
        "format_version": config.CHECKPOINT_VERSION,
        "model_config": model.cfg.model_dump(mode="json"),
        "parameters": [{"name": name, "shape": list(p.shape)} for name, p in named.items()],
        "standardization": standardization,
        "ap_columns": list(model.cfg.ap_columns),
        "meta": meta,
        "config_hash": config_hash,
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for param in named.values():
            f.write(np.ascontiguousarray(param.data, dtype="<f8").tobytes())
    logger.info(f"Checkpoint saved to {path} ({count_params(model)} parameters)")


def load_checkpoint(path: str) -> tuple:
    with open(path, "rb") as f:
        first = f.readline()
        payload = f.read()
    try:
        header = json.loads(first.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"Checkpoint {path} has an unreadable header: {e}") from e
    if not isinstance(header, dict):
        raise DataFormatError(f"Checkpoint {path} header is not a JSON object")
    if header.get("format_version") != config.CHECKPOINT_VERSION:
        raise SchemaVersionError(f"Checkpoint {path} has format version {header.get('format_version')}, "
                                 f"expected {config.CHECKPOINT_VERSION}")
    missing = [key for key in HEADER_KEYS if key not in header]
    if missing:
        raise DataFormatError(f"Checkpoint {path} header lacks key(s): {', '.join(missing)}")
    try:
        model = SCAWaveNet(ModelConfig.model_validate(header["model_config"]), seed=0)
        expected = [(entry["name"], tuple(entry["shape"])) for entry in header["parameters"]]
    except (ValidationError, KeyError, TypeError) as e:
        raise DataFormatError(f"Checkpoint {path} header is malformed: {e}") from e
    named = model.named_parameters()
    if expected != [(name, p.shape) for name, p in named.items()]:
        raise DataFormatError(f"Checkpoint {path} parameter layout does not match its model config")
    total = sum(p.size for p in named.values())
    if len(payload) != total * 8:
        raise DataFormatError(f"Checkpoint {path} payload is {len(payload)} bytes, expected {total * 8}")
    values = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for param in named.values():
        param.data = values[offset:offset + param.size].reshape(param.shape).astype(np.float64)
        offset += param.size
    model.eval()
    return model, header
