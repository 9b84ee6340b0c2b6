import numpy as np
import pytest
from pydantic import ValidationError

from services.ddm_branch import (DdmBranch, DdmEmbedding, EncoderLayer, add_norm, aggregate_channels,
                                 attention_weights, embed_channel, encoder_forward, encoder_layer_forward, ffn,
                                 positional_encoding, sca_attention)
from services.errors import ConfigError, DimensionError
from services.tensor import Tensor


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def test_positional_encoding_values():
    pe = positional_encoding(5, 4).data
    pos = np.arange(5)
    np.testing.assert_allclose(pe[:, 0], np.sin(pos))
    np.testing.assert_allclose(pe[:, 1], np.cos(pos))
    np.testing.assert_allclose(pe[:, 2], np.sin(pos / 100.0))
    np.testing.assert_allclose(pe[:, 3], np.cos(pos / 100.0))


def test_embedding_sequence_layout(model_cfg, rng):
    cfg = model_cfg()
    embedding = DdmEmbedding(cfg, rng)
    ddms = rng.normal(size=(3, 6, 6))
    seq = embed_channel(Tensor(ddms), embedding, cfg).data
    n = cfg.n_patches
    assert seq.shape == (3 * n + 1, cfg.embed_dim)
    pe = positional_encoding(3 * n + 1, cfg.embed_dim).data
    np.testing.assert_allclose(seq[0] - pe[0], embedding.global_token.data[0])
    # второй тип DDM, патч (0, 1): строки 0..2, столбцы 3..5
    kernel = embedding.kernels["eff_scatter"].data
    bias = embedding.biases["eff_scatter"].data
    patch = ddms[1, 0:3, 3:6]
    expected = [np.sum(patch * kernel[d, 0]) + bias[d] for d in range(cfg.embed_dim)]
    np.testing.assert_allclose(seq[1 + n + 1] - pe[1 + n + 1], expected)


def test_aggregate_channels_column_per_channel(rng):
    seqs = [Tensor(rng.normal(size=(13, 2))) for _ in range(4)]
    tokens = aggregate_channels(seqs).data
    assert tokens.shape == (26, 4)
    for c, seq in enumerate(seqs):
        np.testing.assert_array_equal(tokens[:, c], seq.data.reshape(-1))
    with pytest.raises(DimensionError):
        aggregate_channels(seqs[:3])


@pytest.mark.parametrize("strategy", ["CI", "CD"])
def test_attention_matches_loop_oracle(model_cfg, rng, strategy):
    layer = EncoderLayer(model_cfg(strategy=strategy), rng, "layer")
    tokens = rng.normal(size=(7, 4))
    weights = {k: v.data for k, v in layer.attn.items()}
    attn = attention_weights(Tensor(tokens), layer.attn).data
    np.testing.assert_allclose(attn.sum(axis=-1), np.ones((4, 7)))
    heads = np.zeros((7, 4))
    for c in range(4):
        q = tokens[:, c] * weights["q_scale"][c]
        k = tokens[:, c] * weights["k_scale"][c]
        v = tokens[:, c] * weights["v_scale"][c]
        scores = softmax(np.outer(q, k))
        np.testing.assert_allclose(attn[c], scores)
        heads[:, c] = scores @ v
    expected = heads @ weights["w_o"] if strategy == "CD" else heads * weights["w_o"]
    np.testing.assert_allclose(sca_attention(Tensor(tokens), layer.attn, strategy).data, expected)


def test_unknown_strategy_rejected(model_cfg, rng):
    layer = EncoderLayer(model_cfg(), rng, "layer")
    with pytest.raises(ConfigError):
        sca_attention(Tensor(np.ones((3, 4))), layer.attn, "XX")


def test_ci_layer_keeps_channels_isolated(model_cfg, rng):
    cfg = model_cfg(strategy="CI")
    layer = EncoderLayer(cfg, rng, "layer")
    tokens = rng.normal(size=(10, 4))
    changed = tokens.copy()
    changed[:, 2] += rng.normal(size=10)
    before = encoder_layer_forward(Tensor(tokens), layer, cfg).data
    after = encoder_layer_forward(Tensor(changed), layer, cfg).data
    np.testing.assert_allclose(after[:, [0, 1, 3]], before[:, [0, 1, 3]])
    assert not np.allclose(after[:, 2], before[:, 2])


def test_cd_layer_mixes_channels(model_cfg, rng):
    cfg = model_cfg(strategy="CD")
    layer = EncoderLayer(cfg, rng, "layer")
    tokens = rng.normal(size=(10, 4))
    changed = tokens.copy()
    changed[:, 2] += rng.normal(size=10)
    before = encoder_layer_forward(Tensor(tokens), layer, cfg).data
    after = encoder_layer_forward(Tensor(changed), layer, cfg).data
    assert not np.allclose(after[:, 0], before[:, 0])


@pytest.mark.parametrize("strategy", ["CI", "CD"])
@pytest.mark.parametrize("standard_residual", [False, True])
def test_layer_is_token_permutation_equivariant(model_cfg, rng, strategy, standard_residual):
    cfg = model_cfg(strategy=strategy, standard_residual=standard_residual)
    layer = EncoderLayer(cfg, rng, "layer")
    tokens = rng.normal(size=(9, 4))
    perm = rng.permutation(9)
    out = encoder_layer_forward(Tensor(tokens), layer, cfg).data
    permuted = encoder_layer_forward(Tensor(tokens[perm]), layer, cfg).data
    np.testing.assert_allclose(permuted, out[perm], atol=1e-10)


def test_ci_branch_isolates_channel_ddms(model_cfg, rng):
    cfg = model_cfg(strategy="CI", n_layers=2)
    branch = DdmBranch(cfg, rng).eval()
    ddms = rng.normal(size=(2, 4, 3, 6, 6))
    changed = ddms.copy()
    changed[:, 1] += 1.0
    before = branch.forward(ddms).data
    after = branch.forward(changed).data
    assert before.shape == (2, cfg.n_tokens, 4)
    np.testing.assert_allclose(after[..., [0, 2, 3]], before[..., [0, 2, 3]])


def test_encoder_rejects_wrong_geometry(model_cfg, rng):
    cfg = model_cfg()
    branch = DdmBranch(cfg, rng)
    with pytest.raises(DimensionError):
        encoder_forward(Tensor(np.zeros((1, 4, 3, 5, 6))), branch, cfg)
    with pytest.raises(DimensionError):
        encoder_forward(Tensor(np.zeros((1, 3, 3, 6, 6))), branch, cfg)


def test_ci_requires_divisible_ffn_width(model_cfg):
    with pytest.raises(ValidationError):
        model_cfg(strategy="CI", d_ff=18)


def loop_layer_norm(x, gamma, beta, eps, over_tokens):
    m, c = x.shape
    out = np.zeros_like(x)
    if over_tokens:
        for i in range(c):
            mu = sum(x[t, i] for t in range(m)) / m
            var = sum((x[t, i] - mu) ** 2 for t in range(m)) / m
            for t in range(m):
                out[t, i] = (x[t, i] - mu) / np.sqrt(var + eps) * gamma[i] + beta[i]
    else:
        for t in range(m):
            mu = sum(x[t, i] for i in range(c)) / c
            var = sum((x[t, i] - mu) ** 2 for i in range(c)) / c
            for i in range(c):
                out[t, i] = (x[t, i] - mu) / np.sqrt(var + eps) * gamma[i] + beta[i]
    return out


def loop_encoder_layer(tokens, layer, strategy, eps):
    """Внимание, D = O + LN(O), FFN, D + LN(FFN(D)) циклами по токенам и каналам"""
    p = {k: v.data for k, v in layer.attn.items()}
    f = {k: v.data for k, v in layer.ffn.items()}
    m = tokens.shape[0]
    heads = np.zeros((m, 4))
    for c in range(4):
        for t in range(m):
            q = tokens[t, c] * p["q_scale"][c]
            scores = [q * tokens[s, c] * p["k_scale"][c] for s in range(m)]
            top = max(scores)
            weights = [np.exp(s - top) for s in scores]
            total = sum(weights)
            heads[t, c] = sum(w / total * tokens[s, c] * p["v_scale"][c] for s, w in enumerate(weights))
    o = np.zeros((m, 4))
    for t in range(m):
        for i in range(4):
            if strategy == "CD":
                o[t, i] = sum(heads[t, c] * p["w_o"][c, i] for c in range(4))
            else:
                o[t, i] = heads[t, i] * p["w_o"][i]
    over_tokens = strategy == "CI"
    d = o + loop_layer_norm(o, layer.ln1[0].data, layer.ln1[1].data, eps, over_tokens)
    d_f = np.zeros((m, 4))
    for t in range(m):
        for i in range(4):
            if strategy == "CD":
                hidden = [max(0.0, sum(d[t, c] * f["w1"][c, k] for c in range(4)) + f["b1"][k])
                          for k in range(f["w1"].shape[1])]
                d_f[t, i] = sum(h * f["w2"][k, i] for k, h in enumerate(hidden)) + f["b2"][i]
            else:
                hidden = [max(0.0, d[t, i] * f["w1"][i, k] + f["b1"][i, k]) for k in range(f["w1"].shape[1])]
                d_f[t, i] = sum(h * f["w2"][i, k] for k, h in enumerate(hidden)) + f["b2"][i]
    return d + loop_layer_norm(d_f, layer.ln2[0].data, layer.ln2[1].data, eps, over_tokens)


@pytest.mark.parametrize("strategy", ["CI", "CD"])
@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_encoder_layer_matches_loop_oracle(model_cfg, rng, strategy, m):
    cfg = model_cfg(strategy=strategy)
    layer = EncoderLayer(cfg, rng, "layer")
    for params in (layer.ln1, layer.ln2):
        params[0].data = rng.uniform(0.5, 1.5, size=4)
        params[1].data = rng.normal(size=4)
    tokens = rng.normal(size=(m, 4))
    out = encoder_layer_forward(Tensor(tokens), layer, cfg).data
    np.testing.assert_allclose(out, loop_encoder_layer(tokens, layer, strategy, cfg.ln_eps), rtol=0, atol=1e-10)


@pytest.mark.parametrize("strategy", ["CI", "CD"])
def test_add_norm_with_zero_affine_returns_input(rng, strategy):
    x = rng.normal(size=(5, 4))
    out = add_norm(Tensor(x), Tensor(x), np.zeros(4), np.zeros(4), strategy).data
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("strategy", ["CI", "CD"])
def test_zero_ffn_weights_leave_input_after_add_norm(model_cfg, rng, strategy):
    layer = EncoderLayer(model_cfg(strategy=strategy), rng, "layer")
    zeros = {k: np.zeros_like(v.data) for k, v in layer.ffn.items()}
    x = rng.normal(size=(6, 4))
    d_f = ffn(Tensor(x), zeros, strategy)
    np.testing.assert_array_equal(d_f.data, np.zeros((6, 4)))
    np.testing.assert_array_equal(add_norm(Tensor(x), d_f, np.ones(4), np.zeros(4), strategy).data, x)


def permute_layer(layer, perm, strategy):
    """Переставить поканальные веса слоя так же, как переставлены каналы входа"""
    for key in ("q_scale", "k_scale", "v_scale"):
        layer.attn[key].data = layer.attn[key].data[perm]
    w_o = layer.attn["w_o"].data
    layer.attn["w_o"].data = w_o[perm][:, perm] if strategy == "CD" else w_o[perm]
    for param in layer.ln1 + layer.ln2:
        param.data = param.data[perm]
    f = layer.ffn
    if strategy == "CD":
        f["w1"].data = f["w1"].data[perm]
        f["w2"].data = f["w2"].data[:, perm]
        f["b2"].data = f["b2"].data[perm]
    else:
        for key in ("w1", "b1", "w2", "b2"):
            f[key].data = f[key].data[perm]


@pytest.mark.parametrize("strategy", ["CI", "CD"])
def test_branch_is_channel_permutation_equivariant(model_cfg, rng, strategy):
    cfg = model_cfg(strategy=strategy, n_layers=2)
    branch = DdmBranch(cfg, rng).eval()
    ddms = rng.normal(size=(2, 4, 3, 6, 6))
    out = branch.forward(ddms).data
    perm = np.array([2, 0, 3, 1])
    for layer in branch.layers:
        permute_layer(layer, perm, strategy)
    permuted = branch.forward(ddms[:, perm]).data
    np.testing.assert_allclose(permuted, out[..., perm], rtol=0, atol=1e-10)
