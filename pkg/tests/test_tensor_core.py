import math

import numpy as np
import pytest

from kfgdet import tensor as T
from kfgdet.errors import GraphError, NonFiniteError, ShapeError
from kfgdet.tensor import Tensor, grad_check, no_grad


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- conv2d
def test_conv_all_ones_center_and_corner(backend):
    y = T.conv2d(t(np.ones((1, 1, 3, 3))), t(np.ones((1, 1, 3, 3))), stride=1, pad=1).data
    assert y[0, 0, 1, 1] == 9.0
    assert y[0, 0, 0, 0] == y[0, 0, 0, 2] == y[0, 0, 2, 0] == y[0, 0, 2, 2] == 4.0
    assert y[0, 0, 0, 1] == 6.0


def test_conv_identity_kernel(rng, backend):
    x = rng.standard_normal((2, 1, 5, 4))
    assert np.array_equal(T.conv2d(t(x), t(np.ones((1, 1, 1, 1)))).data, x)


def test_conv_output_shape():
    x = Tensor(np.zeros((1, 16, 64, 64), dtype=np.float32))
    w = Tensor(np.zeros((32, 16, 3, 3), dtype=np.float32))
    assert T.conv2d(x, w, stride=2, pad=1).shape == (1, 32, 32, 32)


def test_conv_matches_direct_loop(rng, backend):
    x = rng.standard_normal((2, 4, 6, 7))
    w = rng.standard_normal((6, 2, 3, 2))
    b = rng.standard_normal(6)
    y = T.conv2d(t(x), t(w), t(b), stride=(2, 1), pad=(1, 0), groups=2, dilation=(1, 2)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 0)))
    ho = (6 + 2 - 2 - 1) // 2 + 1
    wo = (7 - 2 * 1 - 1) // 1 + 1
    ref = np.zeros((2, 6, ho, wo))
    for n in range(2):
        for co in range(6):
            g = co // 3
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, 2 * g:2 * g + 2, 2 * i:2 * i + 3, j:j + 3:2]
                    ref[n, co, i, j] = (patch * w[co]).sum() + b[co]
    assert np.allclose(y, ref, atol=1e-12)


def test_conv_depthwise_and_errors(rng):
    x = t(rng.standard_normal((1, 4, 5, 5)))
    assert T.conv2d(x, t(rng.standard_normal((4, 1, 3, 3))), pad=1, groups=4).shape == (1, 4, 5, 5)
    with pytest.raises(ShapeError) as e:
        T.conv2d(x, t(np.ones((4, 3, 3, 3))))
    assert e.value.dim == "Cin"
    with pytest.raises(ShapeError) as e:
        T.conv2d(x, t(np.ones((3, 2, 3, 3))), groups=2)
    assert e.value.dim == "Cout"
    with pytest.raises(ShapeError) as e:
        T.conv2d(x, t(np.ones((4, 4, 7, 7))))
    assert e.value.dim == "H"
    with pytest.raises(ShapeError):
        T.conv2d(t(np.ones((4, 5, 5))), t(np.ones((4, 4, 1, 1))))


def test_conv_linearity(rng, f64):
    x1, x2 = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    a, b = 1.7, -0.3
    lhs = T.conv2d(t(a * x1 + b * x2), t(w), pad=1).data
    rhs = a * T.conv2d(t(x1), t(w), pad=1).data + b * T.conv2d(t(x2), t(w), pad=1).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * np.max(np.abs(rhs))


# ---------------------------------------------------------------- pooling
def test_maxpool_constant(backend):
    x = t(np.full((1, 2, 6, 6), 3.5))
    y = T.max_pool2d(x, 5, 1, 2)
    assert y.shape == x.shape and np.all(y.data == 3.5)


def test_avgpool_hand_value():
    assert T.avg_pool2d(t([[[[1, 2], [3, 4]]]]), 2, 2).data.tolist() == [[[[2.5]]]]


def test_maxpool_shape_and_padding_sentinel(backend):
    assert T.max_pool2d(t(np.zeros((1, 3, 8, 8))), 2, 2).shape == (1, 3, 4, 4)
    y = T.max_pool2d(t(np.full((1, 1, 3, 3), -5.0)), 3, 1, 1)
    assert np.all(y.data == -5.0)  # padding never wins


def test_avgpool_counts_padding():
    y = T.avg_pool2d(t(np.ones((1, 1, 2, 2))), 3, 1, 1).data
    assert np.allclose(y, 4 / 9)


def test_pool_errors():
    with pytest.raises(ShapeError):
        T.max_pool2d(t(np.zeros((1, 1, 4, 4))), 3, 1, 2)
    with pytest.raises(ShapeError):
        T.max_pool2d(t(np.zeros((1, 1, 2, 2))), 5, 1, 0)


def test_maxpool_tie_goes_to_first(backend):
    x = t(np.ones((1, 1, 2, 2)), grad=True)
    T.max_pool2d(x, 2, 2).sum().backward()
    assert x.grad.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


# ---------------------------------------------------------------- upsample / concat
def test_upsample():
    x = t([[[[1, 2], [3, 4]]]])
    assert np.array_equal(T.upsample_nearest(x, 1).data, x.data)
    assert T.upsample_nearest(x, 2).data[0, 0].tolist() == [
        [1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    assert T.upsample_nearest(t(np.zeros((1, 8, 20, 20))), 2).shape == (1, 8, 40, 40)


def test_concat_channels(rng):
    a, b = t(rng.standard_normal((1, 4, 8, 8))), t(rng.standard_normal((1, 4, 8, 8)))
    c = T.concat_channels([a, b])
    assert c.shape == (1, 8, 8, 8)
    assert np.array_equal(c.data[:, :4], a.data)
    assert T.concat_channels([a]) is a
    with pytest.raises(ShapeError):
        T.concat_channels([a, t(np.zeros((1, 4, 4, 8)))])


# ---------------------------------------------------------------- normalization
def test_batchnorm_eval_identity(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    y = T.batch_norm(t(x), t(np.ones(3)), t(np.zeros(3)), np.zeros(3), np.ones(3), eps=0.0)
    assert np.allclose(y.data, x)


def test_batchnorm_train_two_values():
    x = t(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
    rm, rv = np.zeros(1), np.ones(1)
    y = T.batch_norm(x, t([1.0]), t([0.0]), rm, rv, training=True, eps=1e-12)
    assert np.allclose(y.data.ravel(), [-1, 1])
    assert np.isclose(rm[0], 0.03 * 2.0)
    assert np.isclose(rv[0], 0.97 + 0.03 * 2.0)  # unbiased batch variance 2


def test_batchnorm_affine_collapse(rng):
    y = T.batch_norm(t(rng.standard_normal((2, 2, 3, 3))), t([0.0, 0.0]), t([5.0, 5.0]),
                     np.zeros(2), np.ones(2))
    assert np.all(y.data == 5.0)


def test_groupnorm_cases(rng):
    g1, b0 = t(np.ones(4)), t(np.zeros(4))
    assert np.all(T.group_norm(t(np.full((1, 4, 3, 3), 2.0)), 2, g1, b0).data == 0)
    x = np.zeros((1, 2, 1, 2))
    x[0, :, 0, 1] = 2.0
    y = T.group_norm(t(x), 1, t(np.ones(2)), t(np.zeros(2)), eps=1e-12).data
    assert np.allclose(y[0, :, 0], [[-1, 1], [-1, 1]])
    xr = rng.standard_normal((2, 4, 3, 3))
    inst = T.group_norm(t(xr), 4, g1, b0).data
    ref = (xr - xr.mean(axis=(2, 3), keepdims=True)) / np.sqrt(xr.var(axis=(2, 3), keepdims=True) + 1e-5)
    assert np.allclose(inst, ref)
    whole = T.group_norm(t(xr), 1, g1, b0).data
    ref = (xr - xr.mean(axis=(1, 2, 3), keepdims=True)) / np.sqrt(xr.var(axis=(1, 2, 3), keepdims=True) + 1e-5)
    assert np.allclose(whole, ref)
    with pytest.raises(ShapeError):
        T.group_norm(t(xr), 3, t(np.ones(4)), t(np.zeros(4)))


# ---------------------------------------------------------------- activations / linear / gap
def test_activations():
    assert T.silu(t([0.0])).data[0] == 0.0
    assert T.sigmoid(t([0.0])).data[0] == 0.5
    assert math.isclose(T.silu(t([1.0])).data[0], 1 / (1 + math.exp(-1)), rel_tol=1e-15)
    assert np.allclose(T.softmax(t(np.zeros((2, 5))), axis=1).data, 0.2)
    assert np.allclose(T.activation(t([0.0]), "sigmoid").data, 0.5)
    with pytest.raises(ShapeError):
        T.softmax(t(np.zeros((2, 5))), axis=2)


def test_softmax_simplex(rng):
    s = T.softmax(t(rng.standard_normal((6, 7)) * 20), axis=1).data
    assert np.all(s >= 0) and np.allclose(s.sum(axis=1), 1, atol=1e-9)


def test_linear():
    x = t(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(T.linear(x, t(np.eye(3)), t(np.zeros(3))).data, x.data)
    assert T.linear(t([[1.0, 2.0]]), t([[1.0, 1.0]]), t([0.5])).data.tolist() == [[3.5]]
    assert T.linear(t(np.zeros((4, 16))), t(np.zeros((8, 16)))).shape == (4, 8)
    with pytest.raises(ShapeError):
        T.linear(t(np.zeros((4, 16))), t(np.zeros((8, 15))))


def test_global_avg_pool():
    assert np.all(T.global_avg_pool(t(np.full((1, 2, 3, 3), 4.0))).data == 4.0)
    assert T.global_avg_pool(t(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2))).data[0, 0] == 2.5
    assert T.global_avg_pool(t(np.zeros((2, 8, 10, 10)))).shape == (2, 8)


def test_no_broadcasting():
    with pytest.raises(ShapeError):
        T.add(t(np.zeros((2, 3))), t(np.zeros((3,))))


# ---------------------------------------------------------------- autograd
def test_backward_sum_gives_ones(rng):
    x = t(rng.standard_normal((2, 3)), grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_silu_at_zero():
    x = t(np.zeros(4), grad=True)
    T.silu(x).sum().backward()
    assert np.allclose(x.grad, 0.5)


def test_backward_accumulates_reuse(rng):
    x = t(rng.standard_normal(3), grad=True)
    (x + x).sum().backward()
    assert np.array_equal(x.grad, np.full(3, 2.0))


def test_accumulation_law(rng):
    xv = rng.standard_normal((2, 3))

    def grad_of(fn):
        x = t(xv, grad=True)
        fn(x).sum().backward()
        return x.grad

    both = grad_of(lambda x: T.add(T.silu(x), T.mul(x, x)))
    assert np.allclose(both, grad_of(T.silu) + grad_of(lambda x: T.mul(x, x)))


def test_backward_non_scalar_rejected():
    x = t(np.zeros(3), grad=True)
    with pytest.raises(GraphError):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = t(np.ones(3), grad=True)
    with no_grad():
        y = T.exp(x)
    assert not y.requires_grad


def test_non_finite_surfaces():
    with pytest.raises(NonFiniteError) as e:
        T.log(t([0.0]))
    assert e.value.op == "log"


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).dtype == np.float32


# ---------------------------------------------------------------- grad_check
def test_grad_check_conv(rng, f64):
    w = t(rng.uniform(-1, 1, (2, 3, 3, 3)))
    assert grad_check(lambda x: T.conv2d(x, w, pad=1), t(rng.uniform(-1, 1, (1, 3, 5, 5))), 1e-4) <= 1e-5


def test_grad_check_constant_function(f64):
    assert grad_check(lambda x: Tensor(np.ones(3)), t(np.ones(2)), 1e-4) == 0.0


def test_grad_check_group_norm(rng, f64):
    g, b = t(rng.uniform(0.5, 1.5, 4)), t(rng.uniform(-1, 1, 4))
    err = grad_check(lambda x: T.group_norm(x, 2, g, b), t(rng.uniform(-1, 1, (1, 4, 3, 3))), 1e-4)
    assert err <= 1e-4


def test_grad_check_requires_float64(rng):
    with pytest.raises(TypeError):
        grad_check(T.exp, Tensor(np.ones(2, dtype=np.float32)))
