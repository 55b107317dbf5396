"""Frame-selection baselines expressed as transformation matrices.

Every baseline is a ``(T, T_s)`` matrix consumed by :func:`tsdistill.tsd.distill`,
so sampling, attention and learned distillation share one pipeline.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ArgumentError
from .tensor import Tensor


class Variant(str, enum.Enum):
    RANDOM = "rand"
    UNIFORM = "uniform"
    ATTENTION = "attn"
    TSD = "tsd"


@dataclass(frozen=True)
class SelectorKind:
    variant: Variant
    rng_seed: int = 0
    attention_weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.ATTENTION:
            if self.attention_weights is None:
                raise ArgumentError("attention selector needs weights")
            check_attention_weights(np.asarray(self.attention_weights, dtype=np.float64))


def _check_lengths(T, T_s):
    if not 1 <= T_s <= T:
        raise ArgumentError(f"need 1 <= T_s <= T, got T={T}, T_s={T_s}")


def one_hot_P(indices, T, dtype=tn.DEFAULT_DTYPE) -> np.ndarray:
    """Column ``j`` is the basis vector ``e_{indices[j]}``."""
    indices = np.asarray(indices, dtype=np.int64)
    p = np.zeros((T, len(indices)), dtype=dtype)
    p[indices, np.arange(len(indices))] = 1
    return p


def uniform_stride(T, T_s) -> int:
    return T // T_s


def max_uniform_offset(T, T_s) -> int:
    _check_lengths(T, T_s)
    return T - 1 - (T_s - 1) * uniform_stride(T, T_s)


def uniform_indices(T, T_s, offset=0) -> np.ndarray:
    hi = max_uniform_offset(T, T_s)
    if not 0 <= offset <= hi:
        raise ArgumentError(f"offset {offset} outside admissible range [0, {hi}] for T={T}, T_s={T_s}")
    return offset + uniform_stride(T, T_s) * np.arange(T_s)


def uniform_P(T, T_s, offset=0, dtype=tn.DEFAULT_DTYPE) -> Tensor:
    return Tensor(one_hot_P(uniform_indices(T, T_s, offset), T, dtype))


def random_indices(T, T_s, seed) -> np.ndarray:
    _check_lengths(T, T_s)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.sort(rng.choice(T, size=T_s, replace=False))


def random_P(T, T_s, seed, dtype=tn.DEFAULT_DTYPE) -> Tensor:
    """Ordered random subset; ``seed`` is an int or a ``numpy`` Generator."""
    return Tensor(one_hot_P(random_indices(T, T_s, seed), T, dtype))


def check_attention_weights(w: np.ndarray, atol=1e-5):
    if w.ndim != 1:
        raise ArgumentError(f"attention weights must be a vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ArgumentError("attention weights must be finite and non-negative")
    if abs(float(w.sum()) - 1.0) > atol:
        raise ArgumentError(f"attention weights must sum to 1, got {w.sum()}")


def attention_P_train(weights) -> Tensor:
    """Diagonal ``T * diag(w)``; differentiable when ``weights`` is a tracked Tensor."""
    w = tn.as_tensor(weights)
    check_attention_weights(w.data)
    return tn.scale(tn.diag(w), w.shape[0])


def attention_indices(weights, T_s) -> np.ndarray:
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    check_attention_weights(w)
    _check_lengths(len(w), T_s)
    # stable sort on the negated weights: equal weights keep index order
    top = np.argsort(-w, kind="stable")[:T_s]
    return np.sort(top)


def attention_P_test(weights, T_s, dtype=tn.DEFAULT_DTYPE) -> Tensor:
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    return Tensor(one_hot_P(attention_indices(w, T_s), len(w), dtype))
