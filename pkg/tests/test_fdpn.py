import numpy as np
import pytest

from kfgdet.errors import ShapeError
from kfgdet.fdpn import FDPN, PAN, ADown, FocusFuse, MultiKernelMix
from kfgdet.nn.module import manual_seed, param_count
from kfgdet.tensor import Tensor, avg_pool2d, grad_check


def zeros(*shape):
    return Tensor(np.zeros(shape, dtype=np.float32))


def x64(rng, *shape):
    return Tensor(rng.uniform(-1, 1, shape))


def test_adown_shape_and_odd_size():
    m = ADown(64, 96)
    assert m(zeros(1, 64, 80, 80)).shape == (1, 96, 40, 40)
    with pytest.raises(ShapeError):
        m(zeros(1, 64, 7, 8))
    assert param_count(m) == ADown.formula(64, 96)


def test_adown_constant_avgpool():
    y = avg_pool2d(Tensor(np.full((1, 2, 6, 6), 0.3)), 2, 1, 0)
    assert y.shape == (1, 2, 5, 5)
    np.testing.assert_allclose(y.data, 0.3)


def test_focus_fuse_shape_and_stride_check():
    m = FocusFuse(64, 128, 256, 128)
    out = m(zeros(1, 64, 80, 80), zeros(1, 128, 40, 40), zeros(1, 256, 20, 20))
    assert out.shape == (1, 128, 40, 40)
    with pytest.raises(ShapeError):
        m(zeros(1, 64, 80, 80), zeros(1, 128, 40, 40), zeros(1, 256, 40, 40))


def test_focus_fuse_p5_ablation(f64, rng):
    m = FocusFuse(4, 8, 8, 8).eval()
    m.conv5.weight.data[...] = 0
    p3, p4 = x64(rng, 1, 4, 8, 8), x64(rng, 1, 8, 4, 4)
    a = m(p3, p4, x64(rng, 1, 8, 2, 2)).data
    b = m(p3, p4, x64(rng, 1, 8, 2, 2)).data
    assert np.array_equal(a, b)


def test_focus_fuse_batch_permutation(f64, rng):
    m = FocusFuse(4, 8, 8, 8).eval()
    p = [x64(rng, 3, 4, 8, 8), x64(rng, 3, 8, 4, 4), x64(rng, 3, 8, 2, 2)]
    perm = [2, 0, 1]
    out = m(*p).data
    out_perm = m(*[Tensor(t.data[perm]) for t in p]).data
    np.testing.assert_allclose(out_perm, out[perm], rtol=1e-12, atol=1e-14)


def test_mix_shape():
    assert MultiKernelMix(128)(zeros(1, 128, 40, 40)).shape == (1, 128, 40, 40)


def test_mix_zero_branches(f64, rng):
    m = MultiKernelMix(8).eval()
    for b in m.branches:
        b.weight.data[...] = 0
    f = x64(rng, 2, 8, 5, 5)
    np.testing.assert_allclose(m(f).data, m.exit(f).data + f.data, rtol=1e-12)


def test_mix_jacobian_identity_when_ablated(f64, rng):
    m = MultiKernelMix(4).eval()
    for b in list(m.branches) + [m.exit]:
        b.weight.data[...] = 0
    f = x64(rng, 1, 4, 5, 5)
    f.requires_grad = True
    y = m(f)
    np.testing.assert_array_equal(y.data, f.data)
    g = np.random.default_rng(3).standard_normal(y.shape)
    (y * Tensor(g)).sum().backward()
    np.testing.assert_allclose(f.grad, g, rtol=1e-12)
    assert grad_check(lambda t: m(t), f, 1e-4) <= 1e-4


def test_fdpn_shapes():
    out = FDPN(64, 128, 256)(zeros(1, 64, 80, 80), zeros(1, 128, 40, 40), zeros(1, 256, 20, 20))
    assert [o.shape for o in out] == [(1, 64, 80, 80), (1, 128, 40, 40), (1, 256, 20, 20)]


@pytest.mark.parametrize("size", [32, 64, 96])
def test_fdpn_stride_contract(size):
    out = FDPN(8, 16, 16)(zeros(1, 8, size // 8, size // 8), zeros(1, 16, size // 16, size // 16),
                          zeros(1, 16, size // 32, size // 32))
    assert [o.shape[2] for o in out] == [size // 8, size // 16, size // 32]


def test_fdpn_zero_input_deterministic():
    m = FDPN(8, 16, 16)
    args = (zeros(1, 8, 8, 8), zeros(1, 16, 4, 4), zeros(1, 16, 2, 2))
    a, b = m(*args), m(*args)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))


def _reaches_all(seed):
    manual_seed(seed)
    rng = np.random.default_rng(seed)
    m = FDPN(8, 16, 16).eval()
    p = [x64(rng, 1, 8, 8, 8), x64(rng, 1, 16, 4, 4), x64(rng, 1, 16, 2, 2)]
    base = [o.data for o in m(*p)]
    for lvl in range(3):
        q = [Tensor(t.data.copy()) for t in p]
        q[lvl].data[0, 0, 0, 0] += 0.5
        out = [o.data for o in m(*q)]
        if not all(np.max(np.abs(o - b)) > 0 for o, b in zip(out, base)):
            return False
    return True


def test_fdpn_reachability(f64):
    assert all(_reaches_all(seed) for seed in range(20))


def test_fdpn_grad_check(f64, rng):
    m = FDPN(4, 8, 8, dw_kernels=(1, 3))
    p = [x64(rng, 1, 4, 8, 8), x64(rng, 1, 8, 4, 4), x64(rng, 1, 8, 2, 2)]
    for t in p:
        t.requires_grad = True

    def f(_):
        from kfgdet.tensor import concat, reshape
        return concat([reshape(o, (-1,)) for o in m(*p)], axis=0)

    assert grad_check(f, p[0], 1e-4, wrt=p, max_points=12) <= 1e-4


def test_pan_shapes():
    out = PAN(8, 16, 32)(zeros(1, 8, 8, 8), zeros(1, 16, 4, 4), zeros(1, 32, 2, 2))
    assert [o.shape for o in out] == [(1, 8, 8, 8), (1, 16, 4, 4), (1, 32, 2, 2)]
