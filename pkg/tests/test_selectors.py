import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsdistill import selectors as sel
from tsdistill.errors import ArgumentError
from tsdistill.tensor import Tensor
from tsdistill.tsd import distill


def selected_rows(p):
    p = p.data if isinstance(p, Tensor) else p
    assert np.all((p == 0) | (p == 1))
    assert np.all(p.sum(axis=0) == 1)
    return [int(np.flatnonzero(p[:, j])[0]) for j in range(p.shape[1])]


def test_uniform_t20_ts5():
    assert selected_rows(sel.uniform_P(20, 5, 0)) == [0, 4, 8, 12, 16]


def test_uniform_identity_when_ts_equals_t():
    assert np.array_equal(sel.uniform_P(7, 7, 0).data, np.eye(7))


def test_uniform_offset_gather(rng):
    assert selected_rows(sel.uniform_P(10, 3, 1)) == [1, 4, 7]
    x = rng.normal(size=(10, 2, 2, 3)).astype(np.float32)
    y = distill(Tensor(x), sel.uniform_P(10, 3, 1)).data
    assert np.array_equal(y, x[[1, 4, 7]])


@pytest.mark.parametrize("T,T_s,offset", [(10, 3, 4), (10, 3, -1), (16, 4, 4), (5, 5, 1)])
def test_uniform_offset_out_of_range(T, T_s, offset):
    with pytest.raises(ArgumentError):
        sel.uniform_P(T, T_s, offset)


@given(st.integers(1, 30), st.data())
def test_uniform_indices_increasing_and_admissible(T, data):
    T_s = data.draw(st.integers(1, T))
    offset = data.draw(st.integers(0, sel.max_uniform_offset(T, T_s)))
    idx = sel.uniform_indices(T, T_s, offset)
    assert np.all(np.diff(idx) > 0) and idx[-1] < T


def test_random_identity_when_ts_equals_t():
    for seed in range(5):
        assert np.array_equal(sel.random_P(6, 6, seed).data, np.eye(6))


def test_random_deterministic_per_seed():
    assert selected_rows(sel.random_P(16, 4, 42)) == selected_rows(sel.random_P(16, 4, 42))


def test_random_marginals_match_subset_enumeration():
    T, T_s, draws = 5, 2, 10_000
    subsets = list(itertools.combinations(range(T), T_s))
    exact = np.array([sum(i in s for s in subsets) for i in range(T)]) / len(subsets)
    rng = np.random.default_rng(0)
    counts = np.zeros(T)
    for _ in range(draws):
        counts[sel.random_indices(T, T_s, rng)] += 1
    np.testing.assert_allclose(exact, 2 / 5)
    assert np.all(np.abs(counts / draws - exact) <= 0.02)


@given(st.integers(1, 20), st.data(), st.integers(0, 2 ** 31))
def test_random_indices_sorted_unique(T, data, seed):
    T_s = data.draw(st.integers(1, T))
    idx = sel.random_indices(T, T_s, seed)
    assert len(idx) == T_s and np.all(np.diff(idx) > 0)


# ----------------------------------------------------------------------------
# attention


def test_attention_train_uniform_is_identity():
    np.testing.assert_allclose(sel.attention_P_train(np.full(5, 0.2)).data, np.eye(5), atol=1e-6)


def test_attention_train_one_hot_weights():
    p = sel.attention_P_train(np.array([1.0, 0, 0, 0])).data
    assert np.array_equal(p, np.diag([4.0, 0, 0, 0]))


def test_attention_train_scaling_oracle(rng):
    w = rng.uniform(size=6)
    w /= w.sum()
    x = rng.normal(size=(6, 2, 2, 3))
    y = distill(Tensor(x, dtype=np.float64), sel.attention_P_train(Tensor(w, dtype=np.float64))).data
    for i in range(6):
        np.testing.assert_allclose(y[i], x[i] * w[i] * 6, atol=1e-12)
    # the one non-stochastic generator: column i sums to T * w_i
    np.testing.assert_allclose(sel.attention_P_train(Tensor(w, dtype=np.float64)).data.sum(axis=0),
                               6 * w, atol=1e-12)


@pytest.mark.parametrize("w", [[0.5, 0.6, -0.1], [0.2, 0.2, 0.2], [np.nan, 0.5, 0.5]])
def test_attention_rejects_invalid_weights(w):
    with pytest.raises(ArgumentError):
        sel.attention_P_train(np.array(w))
    with pytest.raises(ArgumentError):
        sel.attention_P_test(np.array(w), 1)


def test_attention_test_top2():
    assert selected_rows(sel.attention_P_test(np.array([0.1, 0.4, 0.2, 0.3]), 2)) == [1, 3]


def test_attention_test_ties_prefer_low_index():
    assert selected_rows(sel.attention_P_test(np.full(4, 0.25), 2)) == [0, 1]


def test_attention_test_matches_full_sort_oracle():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(2, 12))
        T_s = int(rng.integers(1, T + 1))
        w = rng.integers(1, 5, size=T).astype(float)  # coarse values force ties
        w /= w.sum()
        order = sorted(range(T), key=lambda i: (-w[i], i))
        assert selected_rows(sel.attention_P_test(w, T_s)) == sorted(order[:T_s])


def test_selector_kind_validation():
    assert sel.SelectorKind("rand", rng_seed=3).variant is sel.Variant.RANDOM
    with pytest.raises(ArgumentError):
        sel.SelectorKind("attn")
    with pytest.raises(ValueError):
        sel.SelectorKind("nearest")


@given(st.integers(0, 2 ** 31))
def test_one_hot_distill_is_exact_gather(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 3, 3, 2)).astype(np.float32)
    idx = sel.random_indices(8, 3, rng)
    assert np.array_equal(distill(Tensor(x), sel.random_P(8, 3, seed)).data,
                          x[sel.random_indices(8, 3, seed)])
    assert np.array_equal(distill(Tensor(x), Tensor(sel.one_hot_P(idx, 8))).data, x[idx])
