import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from sqpinvit import tt
from _helpers import matricization_sigmas


def test_basis_and_evaluate():
    x = tt.TensorTrain.basis([1, 0, 1])
    v = tt.to_full(x)
    assert v[0b101] == 1.0 and np.count_nonzero(v) == 1
    assert tt.evaluate(x, [1, 0, 1]) == 1.0
    assert tt.evaluate(x, [1, 1, 1]) == 0.0


def test_constructor_rejects_bad_cores():
    with pytest.raises(ValueError):
        tt.TensorTrain([np.zeros((1, 3, 1))])
    with pytest.raises(ValueError):
        tt.TensorTrain([np.zeros((1, 2, 2)), np.zeros((3, 2, 1))])
    with pytest.raises(ValueError):
        tt.TensorTrain([np.zeros((2, 2, 1))])


def test_full_expansion_cap():
    with pytest.raises(tt.CapacityError):
        tt.to_full(tt.TensorTrain.zeros(5), cap=4)


def test_strong_kronecker_slices():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 2, 3))
    b = rng.standard_normal((3, 2, 4))
    c = tt.strong_kronecker(a, b)
    for ia in range(2):
        for ib in range(2):
            assert_allclose(c[:, 2 * ia + ib, :], a[:, ia, :] @ b[:, ib, :])


def test_tt_svd_is_exact():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(2 ** 7)
    x, sig = tt.tt_svd(v)
    assert_allclose(tt.to_full(x), v, atol=1e-12)
    for k, s in enumerate(sig):
        assert_allclose(s, matricization_sigmas(v, k)[: len(s)], rtol=1e-10)


def test_tt_svd_of_train_drops_redundant_rank():
    rng = np.random.default_rng(2)
    x = tt.TensorTrain.random(6, 2, rng)
    y = tt.add(x, x)
    z, _ = tt.tt_svd(y)
    assert max(z.ranks) <= 2
    assert_allclose(tt.to_full(z), 2 * tt.to_full(x), atol=1e-12)


def test_orthogonalize_keeps_tensor_and_gives_norm():
    rng = np.random.default_rng(3)
    x = tt.TensorTrain.random(6, 3, rng)
    for pivot in (0, 3, 5):
        z = tt.orthogonalize(x, pivot)
        assert_allclose(tt.to_full(z), tt.to_full(x), atol=1e-12)
        for k in range(pivot):
            c = z.cores[k].reshape(-1, z.cores[k].shape[2])
            assert_allclose(c.T @ c, np.eye(c.shape[1]), atol=1e-12)
        assert_allclose(np.linalg.norm(z.cores[pivot]), np.linalg.norm(tt.to_full(x)))


def test_add_scale_inner_norm():
    rng = np.random.default_rng(4)
    x = tt.TensorTrain.random(5, 2, rng)
    y = tt.TensorTrain.random(5, 3, rng)
    fx, fy = tt.to_full(x), tt.to_full(y)
    assert_allclose(tt.to_full(tt.add(x, tt.scale(y, -2.0))), fx - 2 * fy, atol=1e-12)
    assert_allclose(tt.inner(x, y), fx @ fy)
    assert_allclose(tt.norm(x), np.linalg.norm(fx))
    assert tt.add(x, y).ranks == [a + b for a, b in zip(x.ranks, y.ranks)]


def test_truncate_by_caps_matches_explicit():
    rng = np.random.default_rng(5)
    v = rng.standard_normal(2 ** 6)
    x, _ = tt.tt_svd(v)
    y, err = tt.truncate(x, caps=[2, 2, 2, 2, 2], return_error=True)
    assert max(y.ranks) <= 2
    assert_allclose(err, np.linalg.norm(tt.to_full(y) - v), rtol=1e-9)


def test_truncate_zero_tolerance_is_identity():
    rng = np.random.default_rng(6)
    x = tt.TensorTrain.random(4, 2, rng)
    assert tt.truncate(x, eps=0.0) is x
    with pytest.raises(ValueError):
        tt.truncate(x)


def test_truncate_large_tolerance_gives_zero():
    rng = np.random.default_rng(7)
    x = tt.TensorTrain.random(4, 2, rng)
    y = tt.truncate(x, eps=10 * tt.norm(x))
    assert tt.norm(y) == 0.0


def test_rtl_sweep_also_within_tolerance():
    rng = np.random.default_rng(8)
    v = rng.standard_normal(2 ** 6)
    x, _ = tt.tt_svd(v)
    eps = 0.3 * np.linalg.norm(v)
    y = tt.truncate(x, eps=eps, sweep="rtl")
    assert np.linalg.norm(tt.to_full(y) - v) <= eps * (1 + 1e-10)


@settings(max_examples=40, deadline=None)
@given(K=st.integers(2, 6), seed=st.integers(0, 2 ** 31 - 1), frac=st.floats(0.01, 0.9))
def test_truncation_error_within_tolerance_and_quasi_optimal(K, seed, frac):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(2 ** K)
    v /= np.linalg.norm(v)
    x, _ = tt.tt_svd(v)
    y, err = tt.truncate(x, eps=frac, return_error=True)
    true = np.linalg.norm(tt.to_full(y) - v)
    assert_allclose(err, true, rtol=1e-8, atol=1e-13)
    assert true <= frac * (1 + 1e-10)
    tails = [np.linalg.norm(matricization_sigmas(v, k)[r:])
             for k, r in enumerate(y.ranks)]
    # no approximation with these ranks beats the largest single-cut tail
    assert true >= max(tails) * (1 - 1e-10) - 1e-14
    assert true <= np.sqrt(K - 1) * max(tails) * (1 + 1e-10) + 1e-14
