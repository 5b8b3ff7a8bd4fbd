import numpy as np
import pytest

from kfgdet.errors import ShapeError
from kfgdet.gsd_head import GNConvBlock, GSDHead, clamp_groups, head_param_compare
from kfgdet.nn.blocks import DetectHeadV8
from kfgdet.nn.module import param_count
from kfgdet.tensor import Tensor, grad_check


def levels(rng, ch=(8, 16, 16), s=8, n=1):
    return [Tensor(rng.uniform(-1, 1, (n, c, s >> i, s >> i))) for i, c in enumerate(ch)]


def test_shapes_full_width():
    head = GSDHead(3, (64, 128, 256))
    z = [Tensor(np.zeros((1, c, s, s), dtype=np.float32)) for c, s in ((64, 80), (128, 40), (256, 20))]
    out = head(z)
    assert [o[0].shape for o in out] == [(1, 64, 80, 80), (1, 64, 40, 40), (1, 64, 20, 20)]
    assert [o[1].shape for o in out] == [(1, 3, 80, 80), (1, 3, 40, 40), (1, 3, 20, 20)]
    with pytest.raises(ShapeError):
        head(z[:2])


def test_gn_block_formula_and_groups():
    assert param_count(GNConvBlock(16, 32, 3)) == 16 * 32 * 9 + 64
    assert clamp_groups(64) == 16
    assert clamp_groups(24) == 12
    assert clamp_groups(4) == 4


@pytest.mark.parametrize("ch,cs", [((64, 128, 256), None), ((16, 32, 64), 16), ((8, 8, 8), 8)])
def test_formula_matches_allocation(ch, cs):
    head = GSDHead(3, ch, cs)
    assert param_count(head) == GSDHead.formula(3, ch, cs)
    assert head.cs == (min(ch) if cs is None else cs)


def test_stem_independent_of_level_count():
    two, three = GSDHead(3, (16, 32), 16), GSDHead(3, (16, 32, 32), 16)
    stem = sum(p.size for m in two.stem for p in m.parameters())
    assert stem == sum(p.size for m in three.stem for p in m.parameters())
    per_level = GNConvBlock.formula(32, 16) + 16 * 64 + 64 + 16 * 3 + 3 + 1
    assert param_count(three) - param_count(two) == per_level


def test_scale_init_identity(f64, rng):
    head = GSDHead(3, (8, 16, 16), 8)
    xs = levels(rng)
    for i, (reg, _) in enumerate(head(xs)):
        assert head.scales[i].scale.data[0] == 1.0
        np.testing.assert_array_equal(reg.data, head.reg[i](head.trunk(xs[i], i)).data)


def test_stem_perturbation_reaches_all_levels(f64, rng):
    head = GSDHead(3, (8, 16, 16), 8)
    xs = levels(rng)
    before = [o for pair in head(xs) for o in pair]
    head.stem[0].weight.data[0, 0, 1, 1] += 0.1
    after = [o for pair in head(xs) for o in pair]
    assert all(np.max(np.abs(a.data - b.data)) > 0 for a, b in zip(after, before))


def test_stem_gradient_is_sum_over_levels(f64, rng):
    head = GSDHead(3, (8, 16, 16), 8)
    xs = levels(rng)
    gs = [[rng.standard_normal(o.shape) for o in pair] for pair in head(xs)]
    stem = [p for m in head.stem for p in m.parameters()]

    def run(mask):
        head.zero_grad()
        loss = None
        for keep, pair, g in zip(mask, head(xs), gs):
            if keep:
                for o, gi in zip(pair, g):
                    term = (o * Tensor(gi)).sum()
                    loss = term if loss is None else loss + term
        loss.backward()
        return [p.grad.copy() for p in stem]

    full = run((1, 1, 1))
    parts = [run(m) for m in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    for i, g in enumerate(full):
        np.testing.assert_allclose(g, sum(p[i] for p in parts), rtol=1e-10, atol=1e-12)


def test_scale_gradient(f64, rng):
    head = GSDHead(3, (8, 16, 16), 8)
    xs = levels(rng)
    out = head(xs)
    g = rng.standard_normal(out[1][0].shape)
    (out[1][0] * Tensor(g)).sum().backward()
    unscaled = head.reg[1](head.trunk(xs[1], 1)).data
    assert head.scales[1].scale.grad[0] == pytest.approx(float((g * unscaled).sum()), rel=1e-10)
    scale = head.scales[1].scale
    assert grad_check(lambda _: head(xs)[1][0], scale, 1e-4, wrt=[scale]) <= 1e-4


def test_class_output_not_scaled(f64, rng):
    head = GSDHead(3, (8, 16, 16), 8)
    xs = levels(rng)
    cls = head(xs)[0][1].data
    head.scales[0].scale.data[0] = 3.0
    np.testing.assert_array_equal(head(xs)[0][1].data, cls)


@pytest.mark.parametrize("ch", [(64, 128, 256), (16, 32, 64), (32, 32, 32)])
def test_shared_head_is_smaller(ch):
    a, b, frac = head_param_compare(DetectHeadV8(3, ch), GSDHead(3, ch))
    assert b < a and 0 < frac < 1
    assert a == DetectHeadV8.formula(3, ch) and b == GSDHead.formula(3, ch)


def test_grad_check(f64, rng):
    head = GSDHead(2, (4, 8, 8), cs=8, reg_max=4)
    xs = levels(rng, (4, 8, 8), s=4, n=2)
    for x in xs:
        x.requires_grad = True

    def f(_):
        from kfgdet.tensor import concat, reshape
        return concat([reshape(o, (-1,)) for pair in head(xs) for o in pair], axis=0)

    assert grad_check(f, xs[0], 1e-4, wrt=xs, max_points=10) <= 1e-4
    assert grad_check(f, xs[0], 1e-4, wrt=[p for _, p in head.named_parameters()], max_points=3) <= 1e-4
