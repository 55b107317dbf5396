import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tsdistill import nets, saasbench as sb
from tsdistill.errors import ArgumentError
from tsdistill.nets import NetConfig
from tsdistill.tensor import OpRecord

GEOM = NetConfig()


def params_for(variant, T, T_s, seed=0):
    return nets.init_params(replace(GEOM, T=T, T_s=T_s), seed, variant)


def main_layers(cfg, frames):
    """Hand-written layer list of the recognizer on ``frames`` raw frames."""
    c1, c2 = cfg.main_channels
    s, h1 = cfg.input_hw, -(-cfg.input_hw // 2)
    h2 = -(-h1 // 2)
    return [
        ("pointwise", dict(n=frames * s * s * 3)),  # input shift
        ("conv", dict(k=(3, 3, 3), cin=3, cout=c1, t=frames, h=h1, w=h1)),
        ("pointwise", dict(n=frames * h1 * h1 * c1)), ("pointwise", dict(n=frames * h1 * h1 * c1)),
        ("conv", dict(k=(3, 3, 3), cin=c1, cout=c2, t=frames, h=h2, w=h2)),
        ("pointwise", dict(n=frames * h2 * h2 * c2)), ("pointwise", dict(n=frames * h2 * h2 * c2)),
        ("pointwise", dict(n=frames * h2 * h2 * c2)),  # spatio-temporal mean
        ("matmul", dict(m=1, k=c2, n=cfg.num_classes)),
        ("pointwise", dict(n=cfg.num_classes)),
        ("softmax", dict(n=cfg.num_classes)),
    ]


def client_layers(cfg, T, T_s):
    """Extractor, TSD block and distillation product for one clip."""
    s, e = cfg.input_hw, cfg.extractor_hw
    a, b = cfg.extractor_channels
    h = -(-e // 2)
    hwc = h * h * b
    return [
        ("pointwise", dict(n=T * s * s * 3)),  # average pooling
        ("dwconv", dict(k=(1, 3, 3), c=3, t=T, h=e, w=e)),
        ("conv", dict(k=(1, 1, 1), cin=3, cout=a, t=T, h=e, w=e)),
        ("pointwise", dict(n=T * e * e * a)), ("pointwise", dict(n=T * e * e * a)),
        ("dwconv", dict(k=(1, 3, 3), c=a, t=T, h=h, w=h)),
        ("conv", dict(k=(1, 1, 1), cin=a, cout=b, t=T, h=h, w=h)),
        ("pointwise", dict(n=T * hwc)), ("pointwise", dict(n=T * hwc)),
        ("conv", dict(k=(3, 3, 3), cin=b, cout=b, t=T, h=h, w=h)),  # w_alpha
        ("pointwise", dict(n=T * hwc)),
        ("conv", dict(k=(1, 1, 1), cin=T, cout=T_s, t=h, h=h, w=b)),  # w_beta over frames
        ("pointwise", dict(n=T_s * hwc)),
        ("conv", dict(k=(3, 3, 3), cin=b, cout=b, t=T, h=h, w=h)),  # w_gamma
        ("pointwise", dict(n=T * hwc)),
        ("matmul", dict(m=T, k=hwc, n=T_s)),
        ("softmax", dict(n=T * T_s)),
        ("matmul", dict(m=T_s, k=T, n=s * s * 3)),  # distillation Y = XP
    ]


def total(layers):
    return sum(oracles.layer_flops(layer) for layer in layers)


# ----------------------------------------------------------------------------
# count_flops


def test_matmul_2x3x4_is_48():
    assert sb.count_flops(OpRecord("matmul", ((2, 3), (3, 4)), (2, 4))) == 48


def test_pointwise_conv_over_2x2x2_is_16():
    rec = OpRecord("conv3d", ((2, 2, 2, 1), (1, 1, 1, 1, 1)), (2, 2, 2, 1))
    assert sb.count_flops(rec) == 16


@pytest.mark.parametrize("rec,expect", [
    (OpRecord("softmax_cols", ((5, 3),), (5, 3)), 60),
    (OpRecord("relu", ((4, 5),), (4, 5)), 20),
    (OpRecord("mean", ((2, 3, 4),), (2,)), 24),
    (OpRecord("permute", ((2, 3),), (3, 2)), 0),
    (OpRecord("depthwise_conv3d", ((2, 4, 4, 3), (1, 3, 3, 3)), (2, 2, 2, 3)), 2 * 9 * 24),
])
def test_count_flops_rules(rec, expect):
    assert sb.count_flops(rec) == expect


@pytest.mark.parametrize("rec", [OpRecord("matmul", None, (2, 2)), OpRecord("relu", ((2,),), None),
                                 OpRecord("relu", (None,), (2,)), OpRecord("fft", ((4,),), (4,))])
def test_count_flops_rejects_unshaped_or_unknown(rec):
    with pytest.raises(ArgumentError):
        sb.count_flops(rec)


@pytest.mark.parametrize("T,T_s", [(16, 4), (80, 20), (8, 8)])
def test_full_network_matches_layer_list_oracle(T, T_s):
    cfg = replace(GEOM, T=T, T_s=T_s)
    r = sb.simulate_session(params_for("tsd", T, T_s), "tsd", "split", T, T_s, 1, GEOM)
    assert r.client_flops == total(client_layers(cfg, T, T_s))
    assert r.cloud_flops == total(main_layers(cfg, T_s))


def test_i3d_cloud_matches_layer_list_oracle():
    r = sb.simulate_session(params_for("i3d", 16, 4), "i3d", "cloud_only", 16, 4, 2, GEOM)
    assert r.cloud_flops == 2 * total(main_layers(GEOM, 16)) and r.client_flops == 0


# ----------------------------------------------------------------------------
# simulate_session


def test_i3d_q3_t20_transmits_60_frames():
    r = sb.simulate_session(params_for("i3d", 20, 20), "i3d", "cloud_only", 20, 20, 3, GEOM)
    assert r.frames_transmitted == 60 == r.frames_processed_cloud


def test_split_tsd_bytes():
    r = sb.simulate_session(params_for("tsd", 80, 20), "tsd", "split", 80, 20, 3, GEOM)
    assert r.frames_transmitted == 60 and r.frames_processed_client == 240
    assert r.bytes_transmitted == 3 * 20 * 32 * 32 * 3 * 4 == 737_280


def test_cloud_flops_linear_in_distilled_frames():
    a = sb.simulate_session(params_for("tsd", 80, 20), "tsd", "split", 80, 20, 3, GEOM)
    b = sb.simulate_session(params_for("tsd", 80, 40), "tsd", "split", 80, 40, 3, GEOM)
    assert 0.48 <= a.cloud_flops / b.cloud_flops <= 0.52
    assert a.cloud_params == b.cloud_params


@pytest.mark.parametrize("variant", ["tsd", "attn"])
def test_deployment_conserves_work(variant):
    p = params_for(variant, 16, 4)
    split = sb.simulate_session(p, variant, "split", 16, 4, 3, GEOM)
    cloud = sb.simulate_session(p, variant, "cloud_only", 16, 4, 3, GEOM)
    assert cloud.total_flops == split.client_flops + split.cloud_flops
    assert cloud.client_params + cloud.cloud_params == split.client_params + split.cloud_params
    assert cloud.frames_transmitted == 48 and split.frames_transmitted == 12


def test_split_cloud_equals_i3d_on_raw_ts_frames():
    split = sb.simulate_session(params_for("tsd", 16, 4), "tsd", "split", 16, 4, 3, GEOM)
    plain = sb.simulate_session(params_for("i3d", 4, 4), "i3d", "cloud_only", 4, 4, 3, GEOM)
    assert split.cloud_flops == plain.cloud_flops and split.cloud_params == plain.cloud_params


@settings(max_examples=15)
@given(st.integers(2, 24), st.data())
def test_monotone_in_ts_and_q(T, data):
    T_s = data.draw(st.integers(1, T - 1))
    Q = data.draw(st.integers(1, 4))
    lo = sb.simulate_session(params_for("tsd", T, T_s), "tsd", "split", T, T_s, Q, GEOM)
    hi = sb.simulate_session(params_for("tsd", T, T_s + 1), "tsd", "split", T, T_s + 1, Q, GEOM)
    more = sb.simulate_session(params_for("tsd", T, T_s), "tsd", "split", T, T_s, Q + 1, GEOM)
    assert hi.cloud_flops > lo.cloud_flops
    assert more.frames_transmitted > lo.frames_transmitted
    assert lo.bytes_transmitted == lo.frames_transmitted * 32 * 32 * 3 * 4


def test_float64_geometry_doubles_bytes():
    geom = replace(GEOM, dtype="float64")
    p = nets.init_params(geom, 0, "tsd")
    r = sb.simulate_session(p, "tsd", "split", 16, 4, 1, geom)
    assert r.bytes_transmitted == 4 * 32 * 32 * 3 * 8


@pytest.mark.parametrize("variant", ["i3d", "uniform", "rand"])
def test_split_requires_client_component(variant):
    with pytest.raises(ArgumentError):
        sb.simulate_session(params_for(variant, 16, 4), variant, "split", 16, 4, 3, GEOM)


@pytest.mark.parametrize("args", [("tsd", "edge", 16, 4, 1), ("tsd", "split", 16, 5, 1),
                                  ("tsd", "split", 16, 4, 0), ("nope", "cloud_only", 16, 4, 1)])
def test_invalid_sessions(args):
    with pytest.raises(ArgumentError):
        sb.simulate_session(params_for("tsd", 16, 4), *args[:2], *args[2:], GEOM)


def test_cost_csv(tmp_path):
    r = sb.simulate_session(params_for("tsd", 16, 4), "tsd", "split", 16, 4, 3, GEOM)
    sb.write_cost_csv(tmp_path / "bench.csv", [r])
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert tuple(rows[0]) == sb.CSV_COLUMNS
    assert rows[0]["clips"] == "3" and int(rows[0]["cloud_flops"]) == r.cloud_flops
    assert np.isclose(int(rows[0]["bytes_transmitted"]), r.bytes_transmitted)
