import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dettraj import autodiff as ad
from dettraj.autodiff import Tensor, grad_check
from dettraj.gradcheck import check_primitives, primitive_cases


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_matmul_identity():
    A = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(A)).data, A)


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3)


def test_softmax_large_mask_is_stable():
    out = ad.softmax(Tensor(np.array([0.0, -1e9, 1.0]))).data
    assert np.all(np.isfinite(out)) and out[1] == 0.0


def test_mse_self_is_zero_with_zero_grad():
    a = leaf([[1.0, 2.0], [3.0, 4.0]])
    loss = ad.mse(a, a.data.copy())
    loss.backward()
    assert loss.item() == 0.0
    np.testing.assert_array_equal(a.grad, 0.0)


def test_mse_mean_over_elements_and_empty_mask():
    a = leaf(np.zeros((3, 2)))
    assert ad.mse(a, np.ones((3, 2))).item() == 1.0
    assert ad.mse(a, np.ones((3, 2)), np.zeros((3, 1), bool)).item() == 0.0


def test_sum_of_squares_grad():
    w = leaf([1.0, 2.0])
    ad.sum(ad.mul(w, w)).backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_two_backward_calls_double():
    w = leaf([1.0, -3.0, 0.5])
    x = np.array([2.0, 1.0, 4.0])
    loss = ad.sum(ad.mul(ad.mul(w, w), x))
    loss.backward()
    g1 = w.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(w.grad, 2 * g1)


def test_backward_requires_scalar():
    w = leaf([1.0, 2.0])
    with pytest.raises(ValueError):
        ad.mul(w, w).backward()


@pytest.mark.parametrize("fn", [
    lambda: ad.add(leaf(np.ones((2, 3))), leaf(np.ones((4, 3)))),
    lambda: ad.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3)))),
    lambda: ad.mse(leaf(np.ones((2, 3))), np.ones((3, 2))),
])
def test_shape_errors_name_op_and_shapes(fn):
    with pytest.raises(ValueError) as e:
        fn()
    msg = str(e.value)
    assert "(2, 3)" in msg and any(op in msg for op in ("add", "matmul", "mse"))


def test_no_grad_builds_no_graph():
    w = leaf([1.0, 2.0])
    with ad.no_grad():
        y = ad.mul(w, w)
    assert not y.requires_grad and y._parents == ()


def test_grad_check_linear():
    w = leaf(np.random.default_rng(0).normal(size=5))
    c = np.random.default_rng(1).normal(size=5)
    assert grad_check(lambda: ad.sum(ad.mul(w, c)), [w]) < 1e-9


def test_grad_check_relu_away_from_kink():
    w = leaf([-1.0, -0.3, 0.2, 1.5])
    c = np.array([1.0, 2.0, -1.0, 0.5])
    assert grad_check(lambda: ad.sum(ad.mul(ad.relu(w), c)), [w]) < 1e-6


def test_sqrt_grad_zero_at_zero():
    w = leaf([0.0, 4.0])
    ad.sum(ad.sqrt(w)).backward()
    np.testing.assert_array_equal(w.grad, [0.0, 0.25])


def test_layer_norm_statistics():
    x = np.random.default_rng(3).normal(size=(4, 16)) * 3 + 2
    y = ad.layer_norm(Tensor(x)).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 16 * x.var(-1) / (16 * x.var(-1) + 16e-5), rtol=1e-9)


def test_getitem_gather_accumulates_repeats():
    w = leaf([1.0, 2.0, 3.0])
    ad.sum(w[np.array([0, 0, 2])]).backward()
    np.testing.assert_array_equal(w.grad, [2.0, 0.0, 1.0])


@pytest.mark.parametrize("name", sorted(primitive_cases()))
def test_each_primitive_against_finite_differences(name):
    f, params = primitive_cases(seed=3)[name]
    assert grad_check(f, params, h=1e-5) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_random_composite_graph(seed):
    rng = np.random.default_rng(seed)
    W1, W2 = leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=(5, 2)))
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 2))

    def f():
        h = ad.layer_norm(ad.matmul(x, W1))
        h = ad.mul(ad.softmax(h), ad.sqrt(ad.add(ad.mul(h, h), 1.0)))
        return ad.add(ad.mse(ad.matmul(h, W2), y), ad.mean(ad.norm(ad.transpose(W2))))
    assert grad_check(f, [W1, W2]) < 1e-4


def test_forward_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(5)
        W = leaf(rng.normal(size=(6, 6)))
        x = rng.normal(size=(3, 6))
        loss = ad.mean(ad.softmax(ad.matmul(ad.layer_norm(ad.matmul(x, W)), W)))
        loss.backward()
        return loss.item(), W.grad.copy()
    (a, ga), (b, gb) = run(), run()
    assert a == b and np.array_equal(ga, gb)


def test_primitive_suite_report():
    errs = check_primitives()
    assert max(errs.values()) < 1e-4
