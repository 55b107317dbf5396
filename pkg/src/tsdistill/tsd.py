"""Temporal sequence distillation block.

A transformation matrix ``P`` of shape ``(T, T_s)`` is predicted from a clip's
feature map and applied to the raw frames: distilled frame ``j`` is
``sum_i P[i, j] * frame_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tn
from .errors import ArgumentError, DimensionError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class TsdWeights:
    """Kernels of the two-path block.

    ``w_alpha`` and ``w_gamma`` are ``(3, 3, 3, C, C)`` convolutions over the
    feature map. ``w_beta`` is a ``(1, 1, 1, T, T_s)`` convolution applied after
    moving time to the channel axis, so it mixes the T frames into T_s slots.
    """

    w_alpha: Tensor
    w_beta: Tensor
    w_gamma: Tensor
    b_alpha: Tensor
    b_beta: Tensor
    b_gamma: Tensor

    @property
    def T(self) -> int:
        return self.w_beta.shape[3]

    @property
    def T_s(self) -> int:
        return self.w_beta.shape[4]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d) -> "TsdWeights":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


def init_tsd_weights(channels, T, T_s, rng, std=0.01, dtype=tn.DEFAULT_DTYPE, kernel=(3, 3, 3)):
    """Gaussian kernels with standard deviation ``std``, zero biases."""
    if not 1 <= T_s <= T:
        raise ArgumentError(f"need 1 <= T_s <= T, got T={T}, T_s={T_s}")

    def gauss(*shape):
        return Tensor(rng.normal(0.0, std, size=shape), dtype=dtype, requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n), dtype=dtype, requires_grad=True)

    return TsdWeights(
        w_alpha=gauss(*kernel, channels, channels),
        w_beta=gauss(1, 1, 1, T, T_s),
        w_gamma=gauss(*kernel, channels, channels),
        b_alpha=zeros(channels),
        b_beta=zeros(T_s),
        b_gamma=zeros(channels),
    )


def transform_logits(f: Tensor, weights: TsdWeights) -> Tensor:
    """Pre-softmax ``(T, T_s)`` scores (batched: ``(N, T, T_s)``)."""
    if f.ndim not in (4, 5):
        raise DimensionError(f"feature map must be (T,H,W,C) or (N,T,H,W,C), got {f.shape}")
    if not np.all(np.isfinite(f.data)):
        raise NumericError("feature map contains non-finite values")
    batched = f.ndim == 5
    if not batched:
        f = f.reshape((1,) + f.shape)
    n, T, h, w, c = f.shape
    if weights.T_s > T:
        raise ArgumentError(f"T_s={weights.T_s} exceeds clip length T={T}")
    if weights.T != T:
        raise DimensionError(f"w_beta expects T={weights.T} frames, feature map has {T}")

    # temporal-embedding path: conv, move T to channels, mix T -> T_s
    a = tn.add_bias(tn.conv3d(f, weights.w_alpha), weights.b_alpha)
    a = tn.permute(a, (0, 2, 3, 4, 1))
    o = tn.add_bias(tn.conv3d(a, weights.w_beta, padding="valid"), weights.b_beta)
    c_out = o.shape[3]
    o_mat = tn.reshape(o, (n, h * w * c_out, weights.T_s))

    # feature-embedding path
    g = tn.add_bias(tn.conv3d(f, weights.w_gamma), weights.b_gamma)
    if g.shape[-1] != c_out:
        raise DimensionError(f"w_alpha and w_gamma output widths differ: {c_out} vs {g.shape[-1]}")
    g_mat = tn.reshape(g, (n, T, h * w * c_out))

    logits = tn.matmul(g_mat, o_mat)
    return logits if batched else tn.reshape(logits, (T, weights.T_s))


def compute_transform(f: Tensor, weights: TsdWeights) -> Tensor:
    """Column-stochastic ``P`` from feature map ``f``."""
    return tn.softmax_cols(transform_logits(f, weights))


def distill(x: Tensor, p: Tensor) -> Tensor:
    """Apply ``Y = X P`` frame-wise.

    ``x`` is ``(T, H, W, C)`` with ``p`` ``(T, T_s)``, or ``(N, T, H, W, C)``
    with ``p`` either shared ``(T, T_s)`` or per clip ``(N, T, T_s)``.
    """
    if x.ndim not in (4, 5):
        raise DimensionError(f"clip must be (T,H,W,C) or (N,T,H,W,C), got {x.shape}")
    T = x.shape[-4]
    frame_shape = x.shape[-3:]
    hwc = int(np.prod(frame_shape))
    if p.ndim not in (2, 3) or p.shape[-2] != T:
        raise DimensionError(f"transform {p.shape} does not have {T} rows for clip {x.shape}")
    T_s = p.shape[-1]

    if x.ndim == 4:
        if p.ndim != 2:
            raise DimensionError(f"unbatched clip needs a 2-d transform, got {p.shape}")
        rows = tn.reshape(x, (T, hwc))
        y = tn.matmul(tn.permute(p, (1, 0)), rows)
        return tn.reshape(y, (T_s,) + frame_shape)

    n = x.shape[0]
    rows = tn.reshape(x, (n, T, hwc))
    if p.ndim == 3:
        if p.shape[0] != n:
            raise DimensionError(f"transform batch {p.shape[0]} != clip batch {n}")
        y = tn.matmul(tn.permute(p, (0, 2, 1)), rows)
        return tn.reshape(y, (n, T_s) + frame_shape)

    stacked = tn.reshape(tn.permute(rows, (1, 0, 2)), (T, n * hwc))
    y = tn.matmul(tn.permute(p, (1, 0)), stacked)
    y = tn.permute(tn.reshape(y, (T_s, n, hwc)), (1, 0, 2))
    return tn.reshape(y, (n, T_s) + frame_shape)


def column_sums(p) -> np.ndarray:
    data = p.data if isinstance(p, Tensor) else np.asarray(p)
    return data.sum(axis=-2)
