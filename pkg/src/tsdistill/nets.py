"""Desk-scale networks around the distillation block.

The client side is a coarse feature extractor (spatial downsample plus two
depthwise-separable stages); the cloud side is a small 3D CNN classifier.
Both work on single clips ``(T, H, W, C)`` or batches ``(N, T, H, W, C)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as tn
from .errors import ArgumentError, DimensionError
from .tensor import Tensor
from .tsd import TsdWeights, compute_transform, distill, init_tsd_weights

CLIENT_GROUPS = ("extractor", "tsd", "attention")
CLOUD_GROUPS = ("main",)


@dataclass(frozen=True)
class NetConfig:
    input_hw: int = 32
    extractor_hw: int = 16
    in_channels: int = 3
    extractor_channels: tuple = (8, 16)
    main_channels: tuple = (16, 32)
    T: int = 16
    T_s: int = 4
    num_classes: int = 8
    input_shift: float = 0.5
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "extractor_channels", tuple(self.extractor_channels))
        object.__setattr__(self, "main_channels", tuple(self.main_channels))
        extents = (self.input_hw, self.extractor_hw, self.in_channels, self.T, self.T_s,
                   self.num_classes, *self.extractor_channels, *self.main_channels)
        if any(int(v) < 1 for v in extents):
            raise ArgumentError(f"all extents must be positive: {self}")
        if self.extractor_hw > self.input_hw or self.input_hw % self.extractor_hw:
            raise ArgumentError(
                f"extractor_hw={self.extractor_hw} must divide input_hw={self.input_hw}")
        if len(self.extractor_channels) != 2 or len(self.main_channels) != 2:
            raise ArgumentError("extractor and main network have exactly two stages")
        if self.T_s > self.T:
            raise ArgumentError(f"T_s={self.T_s} exceeds T={self.T}")
        if self.dtype not in ("float32", "float64"):
            raise ArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def feature_shape(self) -> tuple:
        """Extractor output for one clip: the second stage halves H and W."""
        side = -(-self.extractor_hw // 2)
        return (self.T, side, side, self.extractor_channels[1])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ModelParams:
    """Named weights split by deployment side.

    ``extractor``, ``tsd`` and ``attention`` form the client component,
    ``main`` the cloud component. Groups not used by a variant are empty.
    """

    extractor: dict = field(default_factory=dict)
    tsd: dict = field(default_factory=dict)
    main: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)

    def groups(self) -> dict:
        return {"extractor": self.extractor, "tsd": self.tsd, "main": self.main,
                "attention": self.attention}

    def named(self) -> dict:
        return {f"{g}.{k}": v for g, d in self.groups().items() for k, v in d.items()}

    def tsd_weights(self) -> TsdWeights:
        return TsdWeights.from_dict(self.tsd)

    def with_values(self, updates: dict) -> "ModelParams":
        """Copy with some flat-named tensors replaced."""
        groups = {g: dict(d) for g, d in self.groups().items()}
        for key, value in updates.items():
            g, k = key.split(".", 1)
            if k not in groups[g]:
                raise KeyError(key)
            groups[g][k] = value
        return replace(self, **groups)

    def count(self, groups) -> int:
        all_groups = self.groups()
        return sum(t.size for g in groups for t in all_groups[g].values())


def _param(arr, dtype) -> Tensor:
    return Tensor(arr, dtype=dtype, requires_grad=True)


def _he(rng, shape, fan_in, dtype):
    return _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), dtype)


def init_extractor(cfg: NetConfig, rng) -> dict:
    dt = cfg.np_dtype
    c0 = cfg.in_channels
    c1, c2 = cfg.extractor_channels
    return {
        "dw1": _he(rng, (1, 3, 3, c0), 9, dt),
        "pw1": _he(rng, (1, 1, 1, c0, c1), c0, dt),
        "b1": _param(np.zeros(c1), dt),
        "dw2": _he(rng, (1, 3, 3, c1), 9, dt),
        "pw2": _he(rng, (1, 1, 1, c1, c2), c1, dt),
        "b2": _param(np.zeros(c2), dt),
    }


def init_main(cfg: NetConfig, rng) -> dict:
    dt = cfg.np_dtype
    c0 = cfg.in_channels
    m1, m2 = cfg.main_channels
    k = cfg.num_classes
    return {
        "conv1": _he(rng, (3, 3, 3, c0, m1), 27 * c0, dt),
        "b1": _param(np.zeros(m1), dt),
        "conv2": _he(rng, (3, 3, 3, m1, m2), 27 * m1, dt),
        "b2": _param(np.zeros(m2), dt),
        "fc": _param(rng.normal(0.0, np.sqrt(1.0 / m2), size=(m2, k)), dt),
        "fc_b": _param(np.zeros(k), dt),
    }


def init_attention(cfg: NetConfig) -> dict:
    """Free per-position importance logits; zeros give uniform weights."""
    return {"logits": _param(np.zeros(cfg.T), cfg.np_dtype)}


def init_params(cfg: NetConfig, seed=0, variant="tsd") -> ModelParams:
    rng = np.random.default_rng(seed)
    main = init_main(cfg, rng)
    extractor, tsd, attention = {}, {}, {}
    if variant == "tsd":
        extractor = init_extractor(cfg, rng)
        tsd = init_tsd_weights(cfg.extractor_channels[1], cfg.T, cfg.T_s, rng,
                               dtype=cfg.np_dtype).as_dict()
    elif variant == "attn":
        attention = init_attention(cfg)
    return ModelParams(extractor=extractor, tsd=tsd, main=main, attention=attention)


def _check_clip(x: Tensor, cfg: NetConfig, frames=None):
    side = cfg.input_hw
    want = (side, side, cfg.in_channels)
    if x.ndim not in (4, 5) or x.shape[-3:] != want:
        raise DimensionError(f"expected clip frames of shape {want}, got {x.shape}")
    if frames is not None and x.shape[-4] != frames:
        raise DimensionError(f"expected {frames} frames, got {x.shape[-4]}")


def avg_pool_spatial(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    *lead, h, w, c = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"frame {h}x{w} not divisible by pooling factor {factor}")
    blocks = tn.reshape(x, (*lead, h // factor, factor, w // factor, factor, c))
    r = len(lead)
    return tn.mean(blocks, (r + 1, r + 3))


def coarse_features(x: Tensor, extractor: dict, cfg: NetConfig) -> Tensor:
    """Client-side feature map ``(T, H', W', C')`` from raw frames."""
    _check_clip(x, cfg, cfg.T)
    h = avg_pool_spatial(x, cfg.input_hw // cfg.extractor_hw)
    h = tn.depthwise_conv3d(h, extractor["dw1"])
    h = tn.relu(tn.add_bias(tn.conv3d(h, extractor["pw1"]), extractor["b1"]))
    h = tn.depthwise_conv3d(h, extractor["dw2"], stride=(1, 2, 2))
    return tn.relu(tn.add_bias(tn.conv3d(h, extractor["pw2"]), extractor["b2"]))


def recognize_logits(y: Tensor, main: dict, cfg: NetConfig) -> Tensor:
    _check_clip(y, cfg)
    batched = y.ndim == 5
    if not batched:
        y = tn.reshape(y, (1,) + y.shape)
    if cfg.input_shift:
        y = tn.add_bias(y, Tensor(np.full(cfg.in_channels, -cfg.input_shift), dtype=y.dtype))
    h = tn.relu(tn.add_bias(tn.conv3d(y, main["conv1"], stride=(1, 2, 2)), main["b1"]))
    h = tn.relu(tn.add_bias(tn.conv3d(h, main["conv2"], stride=(1, 2, 2)), main["b2"]))
    pooled = tn.mean(h, (1, 2, 3))
    logits = tn.add_bias(tn.matmul(pooled, main["fc"]), main["fc_b"])
    return logits if batched else tn.reshape(logits, (cfg.num_classes,))


def class_softmax(logits: Tensor) -> Tensor:
    """Softmax over classes for ``(K,)`` or ``(N, K)`` logits."""
    if logits.ndim == 1:
        return tn.reshape(tn.softmax_cols(tn.reshape(logits, (logits.shape[0], 1))), logits.shape)
    return tn.permute(tn.softmax_cols(tn.permute(logits, (1, 0))), (1, 0))


def recognize(y: Tensor, main: dict, cfg: NetConfig) -> Tensor:
    """Class probabilities for a (possibly batched) clip of any length."""
    return class_softmax(recognize_logits(y, main, cfg))


def attention_weights(params: ModelParams) -> Tensor:
    logits = params.attention["logits"]
    return tn.reshape(tn.softmax_cols(tn.reshape(logits, (logits.shape[0], 1))), logits.shape)


def tsd_transform(x: Tensor, params: ModelParams, cfg: NetConfig) -> Tensor:
    return compute_transform(coarse_features(x, params.extractor, cfg), params.tsd_weights())


def tsd_forward(x: Tensor, params: ModelParams, cfg: NetConfig):
    """Full client+cloud pass. Returns ``(probs, P, distilled)``."""
    p = tsd_transform(x, params, cfg)
    y = distill(x, p)
    return recognize(y, params.main, cfg), p, y
