import json

import numpy as np
import pytest

from services.errors import DataFormatError, SchemaVersionError
from services.fusion_head import batch_loss
from services.model import SCAWaveNet, complexity_report, count_params, estimate_flops, load_checkpoint, save_checkpoint
from services.tensor import numerical_gradient


@pytest.mark.parametrize("strategy", ["CI", "CD"])
def test_forward_shape_and_determinism(model_cfg, toy_inputs, strategy):
    ddms, aps = toy_inputs
    model = SCAWaveNet(model_cfg(strategy=strategy), seed=3).eval()
    out = model(ddms, aps)
    assert out.shape == (2, 4)
    np.testing.assert_array_equal(out.data, SCAWaveNet(model_cfg(strategy=strategy), seed=3).eval()(ddms, aps).data)


@pytest.mark.parametrize("strategy", ["CI", "CD"])
@pytest.mark.parametrize("head_input", ["full", "global_only"])
def test_gradients_match_finite_differences(model_cfg, toy_inputs, strategy, head_input):
    ddms, aps = toy_inputs
    model = SCAWaveNet(model_cfg(strategy=strategy, head_input=head_input), seed=11).eval()
    ref = np.random.default_rng(5).uniform(0.5, 3.0, size=(2, 4))

    def loss():
        # большая delta: Huber квадратичен на всём диапазоне
        return batch_loss(model(ddms, aps), ref, 100.0)

    model.zero_grad()
    loss().backward()
    picker = np.random.default_rng(0)
    for name, param in model.named_parameters().items():
        indices = picker.choice(param.size, size=min(3, param.size), replace=False)
        numeric = numerical_gradient(lambda: loss().item(), param, eps=1e-6, flat_indices=indices)
        analytic = param.grad.reshape(-1)[indices]
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7, err_msg=name)


def test_ci_model_leaves_other_channels_bit_identical(model_cfg):
    rng = np.random.default_rng(21)
    model = SCAWaveNet(model_cfg(strategy="CI"), seed=2).eval()
    ddms, aps = rng.normal(size=(1, 4, 3, 6, 6)), rng.normal(size=(1, 4, 9))
    base = model(ddms, aps).data
    for _ in range(100):
        j = int(rng.integers(4))
        changed_ddms, changed_aps = ddms.copy(), aps.copy()
        changed_ddms[:, j] = rng.normal(size=(1, 3, 6, 6))
        changed_aps[:, j] = rng.normal(size=(1, 9))
        out = model(changed_ddms, changed_aps).data
        others = [i for i in range(4) if i != j]
        np.testing.assert_array_equal(out[:, others], base[:, others])


def test_cd_model_couples_channels(model_cfg):
    rng = np.random.default_rng(22)
    eps = 1e-4
    for trial in range(20):
        model = SCAWaveNet(model_cfg(strategy="CD"), seed=trial).eval()
        ddms, aps = rng.normal(size=(1, 4, 3, 6, 6)), rng.normal(size=(1, 4, 9))
        j = trial % 4
        shift_ddms, shift_aps = np.zeros_like(ddms), np.zeros_like(aps)
        shift_ddms[:, j], shift_aps[:, j] = eps, eps
        sensitivity = (model(ddms + shift_ddms, aps + shift_aps).data
                       - model(ddms - shift_ddms, aps - shift_aps).data) / (2 * eps)
        others = [i for i in range(4) if i != j]
        assert np.max(np.abs(sensitivity[0, others])) > 1e-8, trial


def test_cd_has_more_parameters_than_ci(model_cfg):
    ci = count_params(SCAWaveNet(model_cfg(strategy="CI"), seed=0))
    cd = count_params(SCAWaveNet(model_cfg(strategy="CD"), seed=0))
    assert cd > ci > 0


def test_parameter_names_are_hierarchical(model_cfg):
    names = list(SCAWaveNet(model_cfg(), seed=0).named_parameters())
    assert names[0] == "ddm.embed.kernel.brcs"
    assert "ddm.encoder.layer1.q_scale" in names
    assert "ap.spatial.p1.weight" in names
    assert names[-1] == "head.out.bias"


def test_ablations_drop_branches(model_cfg, toy_inputs):
    ddms, aps = toy_inputs
    ap_only = SCAWaveNet(model_cfg(use_ddm_branch=False), seed=0)
    assert ap_only.ddm is None
    assert ap_only(ddms, aps).shape == (2, 4)
    ddm_plus_three = SCAWaveNet(model_cfg(ap_groups=("ddm",)), seed=0)
    assert ddm_plus_three(ddms, aps[..., :3]).shape == (2, 4)
    assert count_params(ddm_plus_three) < count_params(SCAWaveNet(model_cfg(), seed=0))


def test_flops_grow_linearly_with_depth(model_cfg):
    flops = [estimate_flops(model_cfg(n_layers=n)) for n in (1, 2, 3)]
    assert flops[0] > 0
    assert flops[2] - flops[1] == flops[1] - flops[0] > 0


def test_complexity_report_fields(model_cfg):
    info = complexity_report(model_cfg(strategy="CI"))
    assert info["strategy"] == "CI"
    assert info["params"] == count_params(SCAWaveNet(model_cfg(strategy="CI"), seed=0))
    assert info["reference_params"] == pytest.approx(0.915e6)


@pytest.mark.parametrize("strategy", ["CI", "CD"])
def test_checkpoint_round_trip(tmp_path, model_cfg, toy_inputs, strategy):
    ddms, aps = toy_inputs
    model = SCAWaveNet(model_cfg(strategy=strategy), seed=4).eval()
    path = tmp_path / "model.ckpt"
    stats = {"ap_columns": ["ddm_nbrcs"], "ap_mean": [1.0], "ap_std": [2.0], "ddm_mean": [0, 0, 0],
             "ddm_std": [1, 1, 1]}
    save_checkpoint(str(path), model, meta={"epoch": 3}, standardization=stats, config_hash="abc123")
    loaded, header = load_checkpoint(str(path))
    assert not loaded.training
    assert header["config_hash"] == "abc123"
    assert header["meta"] == {"epoch": 3}
    assert header["standardization"] == stats
    assert loaded.cfg == model.cfg
    np.testing.assert_array_equal(loaded(ddms, aps).data, model(ddms, aps).data)


def test_checkpoint_version_mismatch(tmp_path, model_cfg):
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), SCAWaveNet(model_cfg(), seed=0), meta={}, standardization={}, config_hash="")
    first, rest = path.read_bytes().split(b"\n", 1)
    header = json.loads(first)
    header["format_version"] = 99
    path.write_bytes(json.dumps(header).encode("utf-8") + b"\n" + rest)
    with pytest.raises(SchemaVersionError):
        load_checkpoint(str(path))


def test_truncated_checkpoint(tmp_path, model_cfg):
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), SCAWaveNet(model_cfg(), seed=0), meta={}, standardization={}, config_hash="")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataFormatError):
        load_checkpoint(str(path))


@pytest.mark.parametrize("key", ["model_config", "parameters", "standardization"])
def test_checkpoint_header_without_key(tmp_path, model_cfg, key):
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), SCAWaveNet(model_cfg(), seed=0), meta={}, standardization={}, config_hash="")
    first, rest = path.read_bytes().split(b"\n", 1)
    header = json.loads(first)
    del header[key]
    path.write_bytes(json.dumps(header).encode("utf-8") + b"\n" + rest)
    with pytest.raises(DataFormatError):
        load_checkpoint(str(path))
