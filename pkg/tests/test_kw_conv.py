import math

import numpy as np
import pytest

from kfgdet.errors import ShapeError, WarehouseError
from kfgdet.kw import (
    WGM,
    C2fKW,
    KWConv,
    KWConvLayer,
    Warehouse,
    make_warehouse,
    slots_for,
    warehouse_param_report,
)
from kfgdet.nn.blocks import C2f, ConvBlock
from kfgdet.nn.module import param_count
from kfgdet.tensor import Tensor, grad_check, softmax


def x64(rng, *shape):
    return Tensor(rng.uniform(-1, 1, shape))


def randomize_wgm(layer, rng, scale=1.0):
    layer.wgm.fc2_w.data[...] = rng.standard_normal(layer.wgm.fc2_w.shape) * scale
    layer.wgm.fc2_b.data[...] = rng.standard_normal(layer.wgm.fc2_b.shape) * scale


def max_rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)))


# ---------------------------------------------------------------- WGM
def test_wgm_zero_init_is_uniform(f64, rng):
    wgm = WGM(8, 4)
    alpha = wgm(x64(rng, 3, 8, 5, 5)).data
    assert alpha.shape == (3, 1, 4)
    np.testing.assert_allclose(alpha, 0.25)


def test_wgm_k1_is_one(f64, rng):
    wgm = WGM(8, 1)
    wgm.fc2_w.data[...] = 3.0
    assert np.all(wgm(x64(rng, 2, 8, 3, 3)).data == 1.0)


def test_softmax_ln3():
    a = softmax(Tensor(np.array([math.log(3.0), 0.0])), axis=0).data
    np.testing.assert_allclose(a, [0.75, 0.25], rtol=1e-12)


def test_wgm_simplex(f64, rng):
    wgm = WGM(6, 5, slots=2)
    wgm.fc2_w.data[...] = rng.standard_normal(wgm.fc2_w.shape) * 5
    alpha = wgm(Tensor(rng.standard_normal((16, 6, 4, 4)) * 10)).data
    assert np.all(alpha >= 0)
    np.testing.assert_allclose(alpha.sum(axis=2), 1.0, atol=1e-9)


def test_wgm_channel_mismatch(f64, rng):
    with pytest.raises(ShapeError):
        WGM(8, 4)(x64(rng, 1, 6, 3, 3))


# ---------------------------------------------------------------- KWConv
def test_k1_equals_conv_block(f64, rng):
    wh = Warehouse(1, (6, 4, 3, 3))
    layer = KWConvLayer(wh, 4, 6, 3, stride=2)
    layer.bias.data[...] = rng.standard_normal(6)
    ref = ConvBlock(4, 6, 3, 2)
    ref.weight.data[...] = wh.cells.data[0]
    x = x64(rng, 2, 4, 9, 9)
    # the reference block has no bias, so fold it into BN's beta in eval mode
    layer.eval()
    ref.eval()
    ref.beta.data[...] = layer.bias.data * ref.gamma.data / np.sqrt(1.0 + ref.eps)
    assert max_rel(layer(x).data, ref(x).data) <= 1e-6


@pytest.mark.parametrize("slots", [1, 2])
def test_mix_orders_agree(f64, rng, slots):
    wh = Warehouse(3, (6 // slots, 4, 3, 3))
    a = KWConvLayer(wh, 4, 6, 3, mode="conv_then_mix")
    b = KWConvLayer(wh, 4, 6, 3, mode="mix_then_conv")
    randomize_wgm(a, rng)
    b.wgm = a.wgm
    x = x64(rng, 3, 4, 7, 7)
    assert max_rel(a.conv(x).data, b.conv(x).data) <= 1e-6


def test_identical_cells_reduce_to_plain_conv(f64, rng):
    from kfgdet.tensor import conv2d
    wh = Warehouse(2, (5, 3, 3, 3))
    wh.cells.data[1] = wh.cells.data[0]
    layer = KWConvLayer(wh, 3, 5, 3)
    randomize_wgm(layer, rng, 4.0)
    x = x64(rng, 2, 3, 6, 6)
    ref = conv2d(x, Tensor(wh.cells.data[0]), pad=1).data
    np.testing.assert_allclose(layer.conv(x).data, ref, rtol=1e-10, atol=1e-12)


def test_selector_alpha(f64, rng):
    from kfgdet.tensor import conv2d
    wh = Warehouse(2, (4, 3, 3, 3))
    layer = KWConvLayer(wh, 3, 4, 3)
    x = x64(rng, 1, 3, 5, 5)
    for k in range(2):
        alpha = np.zeros((1, 1, 2))
        alpha[0, 0, k] = 1.0
        ref = conv2d(x, Tensor(wh.cells.data[k]), pad=1).data
        np.testing.assert_allclose(layer.conv(x, Tensor(alpha)).data, ref, atol=1e-12)


def test_bad_alpha_shape(f64, rng):
    layer = KWConvLayer(Warehouse(2, (4, 3, 3, 3)), 3, 4, 3)
    with pytest.raises(WarehouseError):
        layer.conv(x64(rng, 1, 3, 5, 5), Tensor(np.full((1, 1, 3), 1 / 3)))


def test_geometry_mismatch_rejected():
    with pytest.raises(WarehouseError):
        KWConvLayer(Warehouse(2, (4, 3, 3, 3)), 5, 4, 3)
    with pytest.raises(WarehouseError):
        KWConvLayer(Warehouse(2, (4, 3, 3, 3)), 3, 6, 3)
    with pytest.raises(WarehouseError):
        Warehouse(0, (4, 3, 3, 3))


def test_shared_storage_is_observed_by_all_members(f64, rng):
    wh = Warehouse(2, (4, 4, 3, 3))
    a, b = KWConvLayer(wh, 4, 4, 3), KWConvLayer(wh, 4, 4, 3)
    assert wh.members == [a, b]
    assert a.warehouse.cells is b.warehouse.cells
    x = x64(rng, 1, 4, 5, 5)
    before = b.conv(x).data.copy()
    a.warehouse.cells.data[0] += 0.5
    assert not np.allclose(b.conv(x).data, before)


def test_gradients_reach_cells_wgm_and_bias(f64, rng):
    layer = KWConv(4, 8, 3, stride=2, K=4).layer
    randomize_wgm(layer, rng)
    layer.wgm.fc2_w.data[...] = rng.standard_normal(layer.wgm.fc2_w.shape)
    x = x64(rng, 2, 4, 6, 6)
    # bias feeds train-mode BN, whose gradient w.r.t. a per-channel shift is zero;
    # the pre-normalization output exposes it
    (layer.conv(x) * Tensor(rng.standard_normal((2, 8, 3, 3)))).sum().backward()
    for p in (layer.warehouse.cells, layer.wgm.fc1_w, layer.wgm.fc2_w, layer.bias):
        assert p.grad is not None and np.any(p.grad != 0)
    ps = [layer.warehouse.cells, layer.wgm.fc1_w, layer.wgm.fc2_w, layer.bias]
    assert grad_check(lambda t: layer.conv(t), x, 1e-4, wrt=ps, max_points=8) <= 1e-4


# ---------------------------------------------------------------- C2f-KW
def test_c2f_kw_shape():
    from kfgdet.tensor import Tensor as T
    m = C2fKW(128, 128, n=1)
    assert m(T(np.zeros((1, 128, 20, 20), dtype=np.float32))).shape == (1, 128, 20, 20)


def test_c2f_kw_k1_equals_c2f(f64, rng):
    kw = C2fKW(8, 8, n=2, K=1, shortcut=False)
    ref = C2f(8, 8, n=2, shortcut=False)
    ref.cv1.weight.data[...] = kw.cv1.weight.data
    ref.cv2.weight.data[...] = kw.cv2.weight.data
    # K=1 with one shared bank: every bottleneck conv uses the same kernel
    cell = kw.warehouse.cells.data[0]
    for b in ref.m:
        b.cv1.weight.data[...] = cell
        b.cv2.weight.data[...] = cell
    kw.eval()
    ref.eval()
    x = x64(rng, 2, 8, 6, 6)
    assert max_rel(kw(x).data, ref(x).data) <= 1e-6


def test_c2f_kw_single_warehouse():
    m = C2fKW(16, 16, n=3)
    assert len(m.warehouse.members) == 6
    assert all(layer.warehouse is m.warehouse for layer in m.kw_layers())
    assert {n for n, _ in m.named_parameters() if n.endswith("cells")} == {"m.0.cv1.warehouse.cells"}


def test_shared_vs_private_param_difference():
    n, K = 2, 4
    shared, private = C2fKW(16, 16, n=n, K=K), C2fKW(16, 16, n=n, K=K, shared=False)
    cells = shared.warehouse.K * shared.warehouse.cell_size
    assert param_count(private) - param_count(shared) == (2 * n - 1) * cells
    assert param_count(shared) < param_count(private)


# ---------------------------------------------------------------- reports
def test_report_example():
    wh = Warehouse(4, (32, 32, 3, 3))
    for _ in range(3):
        KWConvLayer(wh, 32, 32, 3)
    rep = warehouse_param_report(wh)
    assert (rep.raw, rep.non_shared, rep.saving_factor) == (36864, 110592, 3.0)
    assert rep.amortized == 36864 / 3


def test_report_single_member_and_empty():
    wh = Warehouse(2, (4, 4, 3, 3))
    with pytest.raises(WarehouseError):
        warehouse_param_report(wh)
    KWConvLayer(wh, 4, 4, 3)
    rep = warehouse_param_report(wh)
    assert rep.raw == rep.non_shared and rep.saving_factor == 1


@pytest.mark.parametrize("k", [1, 2, 4, 7])
def test_saving_factor_is_member_count(k):
    wh = Warehouse(k, (2, 2, 1, 1))
    for _ in range(5):
        KWConvLayer(wh, 2, 2, 1)
    assert warehouse_param_report(wh).saving_factor == 5


def test_slots_partition_budget():
    assert slots_for(4, 1, 64) == 4
    assert slots_for(4, 2, 64) == 2
    assert slots_for(4, 6, 64) == 1
    assert slots_for(4, 1, 6) == 3
    wh = make_warehouse(4, 1, 16, 32)
    assert wh.K * wh.cell_size == 32 * 16 * 9
