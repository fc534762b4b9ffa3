import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gistnet.errors import ConfigError, ShapeError
from gistnet.models import (VGG16_PLAN, FoveaConfig, GistNetConfig, PeripheryConfig, build_fovea,
                            build_gistnet, count_params, desk_config, forward_fovea, forward_gistnet,
                            paper_config)
from gistnet.tensor import SeededRng

FULL_FOVEA_CONV = 14_714_688
FULL_FC1 = 25088 * 4096 + 4096
FULL_FC2 = 4096 * 1024 + 1024
FULL_CLS = 1024 * 80 + 80
PERIPHERY_CHANNELS = (32, 128, 128, 256, 256, 256, 256, 256)


def hand_conv_params(channels, kernels, c_in=3):
    total = 0
    for c, k in zip(channels, kernels):
        total += c * c_in * k * k + c
        c_in = c
    return total


def test_vgg_conv_count_by_hand():
    chans = [c for c in VGG16_PLAN if c != "P"]
    assert hand_conv_params(chans, [3] * len(chans)) == FULL_FOVEA_CONV


def test_full_scale_shapes():
    cfg = paper_config()
    assert cfg.fovea.grid == 7 and cfg.fovea.flatten_len == 25088
    assert cfg.periphery.grid == 7 and cfg.periphery.flatten_len == 12_544
    shapes = build_gistnet_shapes(cfg)
    assert shapes["fusion.dense"]["weights"] == (13_568, 80)
    assert shapes["fovea.fc1"]["weights"] == (25088, 4096)
    assert 25088 * 4096 == 102_760_448


def build_gistnet_shapes(cfg):
    from gistnet.models import GistNet

    return GistNet(cfg).param_shapes()


def test_full_scale_parameter_accounting():
    from gistnet.models import FoveaNet, GistNet

    cfg = paper_config()
    base, _ = count_params(FoveaNet(cfg.fovea).param_shapes())
    gist, table = count_params(GistNet(cfg).param_shapes())
    assert base == FULL_FOVEA_CONV + FULL_FC1 + FULL_FC2 + FULL_CLS == 121_756_560
    periphery = hand_conv_params(PERIPHERY_CHANNELS, (5, 5, 5, 5, 5, 3, 3, 3))
    assert periphery == 4_743_040
    assert table["fusion.dense"] == 13_568 * 80 + 80 == 1_085_520
    assert gist == 127_503_120 == base - FULL_CLS + periphery + 1_085_520
    added = gist - base
    assert added == 5_746_560
    assert round(100 * added / base, 2) == 4.72 and added / base < 0.05


def test_desk_shapes_and_build():
    cfg = desk_config(8)
    model, params = build_gistnet(cfg, SeededRng(0))
    assert cfg.fovea.grid == 8 and cfg.periphery.grid == 2
    assert cfg.periphery.flatten_len == 128 and model.fusion_input == 192
    fovea, fparams = build_fovea(cfg.fovea, SeededRng(0))
    assert fparams["fovea.classifier"]["weights"].shape == (64, 8)
    assert "fovea.classifier" not in params and "fusion.dense" in params
    assert list(params) == [n for n, s in model.layers if s.param_shapes()]


@given(st.sampled_from([0.25, 0.5, 1.0]))
def test_count_identity_at_every_scale(scale):
    from gistnet.models import FoveaNet, GistNet

    cfg = GistNetConfig(desk_config().fovea, desk_config().periphery, scale).resolved()
    base, btab = count_params(FoveaNet(cfg.fovea).param_shapes())
    gist, gtab = count_params(GistNet(cfg).param_shapes())
    periphery = sum(v for k, v in gtab.items() if k.startswith("periphery."))
    assert gist == base - btab["fovea.classifier"] + periphery + gtab["fusion.dense"]
    assert len([k for k in gtab if k.startswith("periphery.conv")]) == 8


def test_scaled_paper_config_keeps_topology():
    cfg = GistNetConfig(paper_config().fovea, paper_config().periphery, 0.25).resolved()
    cfg.validate()
    assert len(cfg.periphery.conv_channels) == 8
    assert cfg.periphery.kernels == (5, 5, 5, 5, 5, 3, 3, 3)
    assert cfg.periphery.side % 64 == 0


def test_config_errors():
    with pytest.raises(ConfigError):
        PeripheryConfig(side=100).validate()
    with pytest.raises(ConfigError):
        FoveaConfig(side=100).validate()
    with pytest.raises(ConfigError):
        PeripheryConfig(kernels=(3,) * 8).validate()


def test_forward_contracts():
    cfg = desk_config(8)
    model, params = build_gistnet(cfg, SeededRng(1))
    fovea, fparams = build_fovea(cfg.fovea, SeededRng(1))
    logits, emb = forward_fovea(fovea, fparams, np.zeros((3, 64, 64), np.float32))
    assert logits.shape == (8,) and emb.shape == (64,)
    assert not logits.any()  # zero image and zero biases
    logits, pemb = forward_gistnet(model, params, np.zeros((3, 64, 64), np.float32),
                                   np.zeros((3, 128, 128), np.float32))
    assert logits.shape == (8,) and pemb.shape == (128,) and np.all(np.isfinite(logits))
    with pytest.raises(ShapeError):
        forward_gistnet(model, params, np.zeros((3, 64, 64), np.float32), np.zeros((3, 64, 64), np.float32))


def test_stream_isolation():
    cfg = desk_config(8)
    model, params = build_gistnet(cfg, SeededRng(2))
    rng = SeededRng(3)
    fx = rng.uniform((2, 3, 64, 64)).astype(np.float32)
    c1 = rng.uniform((2, 3, 128, 128)).astype(np.float32)
    c2 = rng.uniform((2, 3, 128, 128)).astype(np.float32)
    l1, e1, _ = model.forward(params, fx, c1)
    l2, e2, _ = model.forward(params, fx, c2)
    assert np.array_equal(e1["fovea"], e2["fovea"])
    assert not np.array_equal(l1, l2)


def test_build_is_deterministic():
    cfg = desk_config(8)
    _, a = build_gistnet(cfg, SeededRng(4))
    _, b = build_gistnet(cfg, SeededRng(4))
    assert all(np.array_equal(a[n][k], b[n][k]) for n in a for k in a[n])


def test_config_round_trip():
    cfg = desk_config(6)
    assert GistNetConfig.from_dict(cfg.to_dict()) == cfg


def test_fused_gradcheck_reaches_both_streams():
    from gistnet.optim import grad_check
    from gistnet.gradcheck import model_closure

    closure, params = model_closure(seed=1)
    rep = grad_check(closure, params, max_entries=3, rng=SeededRng(1, 2))
    assert rep.passed, [(r.name, r.max_rel_err) for r in rep.failures()]
    checked = {r.name.split(".")[0] for r in rep.rows if r.checked}
    assert {"fovea", "periphery", "fusion"} <= checked
