import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from tsdistill import nets
from tsdistill.errors import ArgumentError, DimensionError
from tsdistill.nets import CLIENT_GROUPS, CLOUD_GROUPS, NetConfig
from tsdistill.tensor import Tensor

SMALL = NetConfig(input_hw=8, extractor_hw=4, extractor_channels=(2, 3), main_channels=(2, 3),
                  T=3, T_s=2, num_classes=4, dtype="float64")


def randomized(params, seed, bias_scale=0.3):
    rng = np.random.default_rng(seed)
    return params.with_values({
        k: Tensor(rng.normal(size=v.shape) * (bias_scale if v.ndim == 1 else 1.0), dtype=v.dtype)
        for k, v in params.named().items()})


def test_default_feature_shape():
    cfg = NetConfig()
    params = nets.init_params(cfg, 0, "tsd")
    x = Tensor(np.random.default_rng(0).uniform(size=(16, 32, 32, 3)).astype(np.float32))
    assert nets.coarse_features(x, params.extractor, cfg).shape == (16, 8, 8, 16)
    assert cfg.feature_shape == (16, 8, 8, 16)


def test_zero_input_zero_bias_gives_zero_features():
    cfg = NetConfig()
    params = nets.init_params(cfg, 3, "tsd")
    out = nets.coarse_features(Tensor(np.zeros((16, 32, 32, 3), np.float32)), params.extractor, cfg)
    assert not np.any(out.data)


def test_coarse_features_composition_oracle(rng):
    params = randomized(nets.init_params(SMALL, 0, "tsd"), 1)
    x = rng.uniform(size=(3, 8, 8, 3))
    got = nets.coarse_features(Tensor(x, dtype=np.float64), params.extractor, SMALL).data
    ex = {k: v.data for k, v in params.extractor.items()}
    np.testing.assert_allclose(got, oracles.coarse_features(x, ex, 2), atol=1e-10)


def test_coarse_features_rejects_wrong_shape():
    params = nets.init_params(SMALL, 0, "tsd")
    with pytest.raises(DimensionError):
        nets.coarse_features(Tensor(np.zeros((3, 6, 6, 3))), params.extractor, SMALL)
    with pytest.raises(DimensionError):
        nets.coarse_features(Tensor(np.zeros((4, 8, 8, 3))), params.extractor, SMALL)


def test_recognize_composition_oracle(rng):
    params = randomized(nets.init_params(SMALL, 0, "uniform"), 2)
    y = rng.uniform(size=(2, 8, 8, 3))
    got = nets.recognize(Tensor(y, dtype=np.float64), params.main, SMALL).data
    main = {k: v.data for k, v in params.main.items()}
    np.testing.assert_allclose(got, oracles.recognize(y, main, SMALL.input_shift), atol=1e-10)


@given(st.integers(0, 2 ** 31), st.integers(1, 5))
def test_recognize_outputs_distribution(seed, frames):
    rng = np.random.default_rng(seed)
    cfg = NetConfig(input_hw=8, extractor_hw=4, main_channels=(4, 4), T=5, T_s=1)
    params = randomized(nets.init_params(cfg, seed % 100, "uniform"), seed % 100)
    y = Tensor(rng.uniform(size=(frames, 8, 8, 3)).astype(np.float32))
    p = nets.recognize(y, params.main, cfg).data
    assert np.all(p >= 0)
    assert abs(float(p.sum()) - 1) <= 1e-6


def test_zero_classifier_gives_uniform(rng):
    params = nets.init_params(NetConfig(), 0, "uniform")
    params = params.with_values({"main.fc": Tensor(np.zeros((32, 8), np.float32))})
    p = nets.recognize(Tensor(rng.uniform(size=(4, 32, 32, 3)).astype(np.float32)),
                       params.main, NetConfig()).data
    np.testing.assert_allclose(p, 1 / 8, atol=1e-7)


def test_recognizer_is_order_sensitive(rng):
    params = randomized(nets.init_params(SMALL, 0, "uniform"), 5)
    y = rng.uniform(size=(3, 8, 8, 3))
    forward = nets.recognize(Tensor(y, dtype=np.float64), params.main, SMALL).data
    backward = nets.recognize(Tensor(y[::-1], dtype=np.float64), params.main, SMALL).data
    assert np.max(np.abs(forward - backward)) > 1e-6


def test_tsd_forward_shapes(rng):
    cfg = NetConfig()
    params = nets.init_params(cfg, 0, "tsd")
    x = Tensor(rng.uniform(size=(2, 16, 32, 32, 3)).astype(np.float32))
    probs, p, y = nets.tsd_forward(x, params, cfg)
    assert probs.shape == (2, 8) and p.shape == (2, 16, 4) and y.shape == (2, 4, 32, 32, 3)


def test_default_parameter_counts():
    params = nets.init_params(NetConfig(), 0, "tsd")
    extractor = 9 * 3 + 3 * 8 + 8 + 9 * 8 + 8 * 16 + 16
    tsd_block = 2 * (27 * 16 * 16 + 16) + 16 * 4 + 4
    main = 27 * 3 * 16 + 16 + 27 * 16 * 32 + 32 + 32 * 8 + 8
    assert params.count(("extractor",)) == extractor == 275
    assert params.count(("tsd",)) == tsd_block == 13924
    assert params.count(CLOUD_GROUPS) == main == 15432
    assert params.count(CLIENT_GROUPS) == extractor + tsd_block


def test_parameter_names_unique_and_split_clean():
    params = nets.init_params(NetConfig(), 0, "tsd")
    names = list(params.named())
    assert len(names) == len(set(names))
    client = {id(t) for g in CLIENT_GROUPS for t in params.groups()[g].values()}
    cloud = {id(t) for g in CLOUD_GROUPS for t in params.groups()[g].values()}
    assert not client & cloud
    assert all(t.requires_grad for t in params.named().values())


@pytest.mark.parametrize("variant,groups", [("i3d", {"main"}), ("uniform", {"main"}),
                                            ("rand", {"main"}), ("attn", {"main", "attention"}),
                                            ("tsd", {"main", "extractor", "tsd"})])
def test_init_groups_per_variant(variant, groups):
    params = nets.init_params(NetConfig(), 0, variant)
    assert {g for g, d in params.groups().items() if d} == groups


def test_attention_weights_start_uniform():
    w = nets.attention_weights(nets.init_params(NetConfig(), 0, "attn")).data
    np.testing.assert_allclose(w, 1 / 16, atol=1e-7)


@pytest.mark.parametrize("kwargs", [dict(extractor_hw=64), dict(extractor_hw=12), dict(T=3, T_s=4),
                                    dict(num_classes=0), dict(main_channels=(4,)),
                                    dict(dtype="float16")])
def test_net_config_validation(kwargs):
    with pytest.raises(ArgumentError):
        NetConfig(**kwargs)


def test_with_values_rejects_unknown_name():
    with pytest.raises(KeyError):
        nets.init_params(NetConfig(), 0, "i3d").with_values({"main.nope": Tensor(np.ones(1))})
