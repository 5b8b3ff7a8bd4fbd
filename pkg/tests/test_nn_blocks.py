import itertools

import numpy as np
import pytest

from kfgdet.errors import ConfigError, ShapeError
from kfgdet.nn.blocks import SPPF, Bottleneck, C2f, ConvBlock, DetectHeadV8, dfl_expectation
from kfgdet.nn.module import Conv2dLayer, param_count
from kfgdet.tensor import Tensor, grad_check


def zeros(*shape):
    return Tensor(np.zeros(shape, dtype=np.float32))


def test_param_count_examples():
    assert param_count(ConvBlock(16, 32, 3)) == ConvBlock.formula(16, 32, 3) == 4672
    assert param_count(ConvBlock(8, 8, 1)) == 80
    b = Bottleneck(32, 32, k=(3, 3), e=1.0)
    assert param_count(b) == Bottleneck.formula(32, 32, e=1.0) == 18560


def test_running_stats_not_counted():
    blk = ConvBlock(4, 6, 3)
    names = [n for n, _ in blk.named_parameters()]
    assert names == ["beta", "gamma", "weight"]  # registry is sorted
    assert {n for n, _ in blk.named_buffers()} == {"running_mean", "running_var"}


@pytest.mark.parametrize("c1,c2,n", list(itertools.product((8, 16, 24), (8, 32), (1, 2, 3))))
def test_formula_grid(c1, c2, n):
    assert param_count(C2f(c1, c2, n)) == C2f.formula(c1, c2, n)
    assert param_count(SPPF(c1, c2)) == SPPF.formula(c1, c2)
    assert param_count(ConvBlock(c1, c2, 3, groups=8)) == ConvBlock.formula(c1, c2, 3, groups=8)
    assert param_count(Conv2dLayer(c1, c2)) == Conv2dLayer.formula(c1, c2)


@pytest.mark.parametrize("ch", [(16, 32, 64), (64, 128, 256)])
def test_detect_head_formula(ch):
    assert param_count(DetectHeadV8(3, ch)) == DetectHeadV8.formula(3, ch)


def test_conv_block_shapes():
    assert ConvBlock(3, 16, 3, 2)(zeros(1, 3, 64, 64)).shape == (1, 16, 32, 32)
    with pytest.raises(ConfigError):
        ConvBlock(6, 4, 3, groups=4)


def test_bottleneck_zero_weights_is_identity(rng):
    b = Bottleneck(8, 8, shortcut=True)
    b.cv1.weight.data[...] = 0
    b.cv2.weight.data[...] = 0
    b.cv2.beta.data[...] = 0
    b.eval()
    x = rng.standard_normal((1, 8, 5, 5)).astype(np.float32)
    # silu(0) = 0, so the second block emits exact zeros and only the shortcut remains
    assert np.array_equal(b(Tensor(x)).data, x)


def test_bottleneck_shortcut_channel_check():
    with pytest.raises(ConfigError):
        Bottleneck(8, 16, shortcut=True)


def test_c2f_shape():
    m = C2f(64, 64, n=2)
    assert m.c == 32
    assert m.cv2.cin == (2 + 2) * 32
    assert m(zeros(1, 64, 40, 40)).shape == (1, 64, 40, 40)


@pytest.mark.parametrize("size", [1, 3, 7])
def test_c2f_sppf_preserve_spatial(size):
    assert C2f(8, 8, 1)(zeros(2, 8, size, size + 1)).shape == (2, 8, size, size + 1)
    assert SPPF(8, 4)(zeros(2, 8, size, size)).shape == (2, 4, size, size)


def test_sppf_pools_preserve_constant():
    from kfgdet.tensor import max_pool2d
    x = Tensor(np.full((1, 2, 6, 6), 0.7))
    y = x
    for _ in range(3):
        y = max_pool2d(y, 5, 1, 2)
        assert np.all(y.data == 0.7)
    assert SPPF(4, 4).cv2.cin == 4 * 2


def test_detect_head_shapes():
    head = DetectHeadV8(3, (64, 128, 256))
    levels = [zeros(1, 64, 8, 8), zeros(1, 128, 4, 4), zeros(1, 256, 2, 2)]
    out = head(levels)
    assert [o[0].shape for o in out] == [(1, 64, 8, 8), (1, 64, 4, 4), (1, 64, 2, 2)]
    assert [o[1].shape for o in out] == [(1, 3, 8, 8), (1, 3, 4, 4), (1, 3, 2, 2)]
    with pytest.raises(ShapeError):
        head(levels[:2])


def test_detect_head_p3_full_size():
    head = DetectHeadV8(3, (64, 128, 256))
    reg, cls = head.cv2[0](zeros(1, 64, 80, 80)), head.cv3[0](zeros(1, 64, 80, 80))
    assert reg.shape == (1, 64, 80, 80) and cls.shape == (1, 3, 80, 80)


def test_detect_head_branches_share_nothing():
    head = DetectHeadV8(3, (16, 32, 64))
    ids = [id(p) for p in head.parameters()]
    assert len(ids) == len(set(ids))
    assert head.aliases() == {}


def test_dfl_expectation_examples():
    onehot = np.full(16, -1e9)
    onehot[3] = 0.0
    assert dfl_expectation(onehot) == pytest.approx(3.0)
    assert dfl_expectation(np.zeros(16)) == pytest.approx(7.5)


def test_dfl_range(rng):
    d = dfl_expectation(rng.standard_normal((200, 16)) * 30)
    assert np.all(d >= 0) and np.all(d <= 15)


@pytest.mark.parametrize("make", [
    lambda: ConvBlock(4, 6, 3, 2),
    lambda: Bottleneck(4, 4),
    lambda: C2f(4, 6, 2),
    lambda: SPPF(4, 4),
])
def test_block_grad_check(make, f64, rng):
    m = make()
    m.to(np.float64)
    x = Tensor(rng.uniform(-1, 1, (2, 4, 6, 6)), requires_grad=True)
    assert grad_check(lambda t: m(t), x, 1e-4, max_points=24) <= 1e-4
    params = [p for _, p in m.named_parameters()]
    assert grad_check(lambda t: m(t), x, 1e-4, wrt=params, max_points=6) <= 1e-4
