"""Property-based checks for shape laws and evaluation invariants."""
from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from kfgdet.evaluation import (
    Box,
    Detection,
    GroundTruth,
    average_precision_bruteforce,
    average_precision_exact,
    decode_arrays,
    evaluate,
    match,
    nms,
    nms_reference,
)
from kfgdet.tensor import Tensor, conv2d

FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def boxes(draw, size=64):
    x1 = draw(st.integers(0, size - 2))
    y1 = draw(st.integers(0, size - 2))
    return Box(x1, y1, draw(st.integers(x1 + 1, size)), draw(st.integers(y1 + 1, size)))


@st.composite
def detections(draw, max_n=20, nc=3):
    n = draw(st.integers(0, max_n))
    return [Detection(draw(boxes()), draw(st.integers(0, nc - 1)),
                      draw(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9, 1.0]))) for _ in range(n)]


@st.composite
def ground_truths(draw, max_n=10, nc=3):
    return [(draw(boxes()), draw(st.integers(0, nc - 1))) for _ in range(draw(st.integers(0, max_n)))]


@FAST
@given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(1, 9), w=st.integers(1, 9),
       k=st.sampled_from([1, 3]), s=st.integers(1, 3), d=st.integers(1, 2))
def test_conv_output_shape_law(n, c, h, w, k, s, d):
    p = d * (k - 1) // 2
    eff = d * (k - 1) + 1
    if h + 2 * p < eff or w + 2 * p < eff:
        return
    y = conv2d(Tensor(np.zeros((n, c, h, w), np.float32)), Tensor(np.zeros((2, c, k, k), np.float32)),
               stride=s, pad=p, dilation=d)
    assert y.shape == (n, 2, (h + 2 * p - eff) // s + 1, (w + 2 * p - eff) // s + 1)


@FAST
@given(flags=st.lists(st.booleans(), max_size=20), extra=st.integers(0, 10))
def test_ap_equals_bruteforce(flags, extra):
    n_gt = sum(flags) + extra
    if n_gt == 0:
        return
    exact = average_precision_exact(flags, n_gt)
    assert isinstance(exact, Fraction)
    assert exact == average_precision_bruteforce(flags, n_gt)
    assert 0 <= exact <= 1


@FAST
@given(dets=detections(30), thr=st.sampled_from([0.3, 0.45, 0.5, 0.7]))
def test_nms_matches_reference(dets, thr):
    kept = nms(dets, thr)
    assert kept == nms_reference(dets, thr)
    assert all(d in dets for d in kept)
    assert nms(kept, thr) == kept


@FAST
@given(dets=detections(), gts=ground_truths())
def test_match_conservation(dets, gts):
    g = [GroundTruth(b, c) for b, c in gts]
    r = match(dets, g)
    assert r.tp + r.fp == len(dets) and r.tp + r.fn == len(gts)
    assert r.tp == sum(x.matched for x in g) == sum(r.flags)


@FAST
@given(dist=st.lists(st.floats(0.0, 15.0), min_size=4, max_size=4),
       gy=st.integers(0, 1), gx=st.integers(0, 1))
def test_decode_round_trip(dist, gy, gx):
    reg_max, stride = 16, 8
    logits = np.full((1, 4, reg_max, 2, 2), -1e4)
    for side, v in enumerate(dist):
        lo = int(np.floor(v))
        hi, frac = min(lo + 1, reg_max - 1), v - lo
        # two adjacent bins whose softmax weights interpolate to v
        if frac < 1e-9 or hi == lo:
            logits[0, side, lo, gy, gx] = 0.0
        else:
            logits[0, side, lo, gy, gx] = np.log(1 - frac)
            logits[0, side, hi, gy, gx] = np.log(frac)
    reg = logits.reshape(1, 4 * reg_max, 2, 2)
    cls = np.zeros((1, 3, 2, 2))
    b, _ = decode_arrays([(reg, cls)], reg_max, (stride,))
    cx, cy = (gx + 0.5) * stride, (gy + 0.5) * stride
    want = [cx - dist[0] * stride, cy - dist[1] * stride, cx + dist[2] * stride, cy + dist[3] * stride]
    np.testing.assert_allclose(b[0, gy * 2 + gx], want, atol=1e-4)


@FAST
@given(data=st.data(), n_img=st.integers(1, 3), perm=st.permutations([0, 1, 2]))
def test_map_invariant_under_class_relabeling(data, n_img, perm):
    dets = [data.draw(detections(8)) for _ in range(n_img)]
    gts = [data.draw(ground_truths(5)) for _ in range(n_img)]

    def run(p):
        ds = [[Detection(d.box, p[d.cls], d.conf) for d in row] for row in dets]
        gs = [[GroundTruth(b, p[c]) for b, c in row] for row in gts]
        return evaluate(ds, gs)

    a, b = run([0, 1, 2]), run(perm)
    assert a.map50 == b.map50
    assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)
    for c, m in a.per_class.items():
        assert b.per_class[perm[c]].ap == m.ap
