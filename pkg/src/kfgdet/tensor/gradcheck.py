"""Central finite-difference gradient checking."""
import numpy as np

from .tensor import Tensor, no_grad

# gradients smaller than this are compared in absolute terms
DENOM_FLOOR = 1e-6


def _projection(shape, rng):
    return rng.uniform(-1.0, 1.0, size=shape)


def grad_check(f, x, eps=1e-4, wrt=None, max_points=None, seed=0, atol=DENOM_FLOOR):
    """Return the max elementwise relative error between backward and
    central differences ``(f(x+eps) - f(x-eps)) / 2eps``.

    ``f`` maps ``x`` to a tensor of any shape; it is reduced to a scalar by
    a fixed random projection so every output element is exercised.
    ``wrt`` lists the tensors to differentiate (default ``[x]``); each must
    be a float64 leaf. ``max_points`` caps the number of coordinates probed
    per tensor (sampled without replacement). Gradients below ``atol`` are
    compared in absolute terms. The caller decides the tolerance.
    """
    rng = np.random.default_rng(seed)
    wrt = [x] if wrt is None else list(wrt)
    for t in wrt:
        if t.dtype != np.float64:
            raise TypeError("grad_check runs in 64-bit; got " + str(t.dtype))

    flags = [t.requires_grad for t in wrt]
    for t in wrt:
        t.requires_grad = True
        t.grad = None

    out = f(x)
    proj = _projection(out.shape, rng)

    def scalar():
        with no_grad():
            return float((f(x).data * proj).sum())

    if not out.requires_grad:
        analytic = [np.zeros_like(t.data) for t in wrt]
    else:
        loss = (out * Tensor(proj, dtype=out.dtype)).sum()
        loss.backward()
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]

    worst = 0.0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_points is None or n <= max_points else rng.choice(n, max_points, replace=False)
        af = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar()
            flat[i] = orig - eps
            fm = scalar()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            err = abs(af[i] - num) / max(abs(af[i]), abs(num), atol)
            worst = max(worst, err)

    for t, flag in zip(wrt, flags):
        t.requires_grad = flag
        t.grad = None
    return worst
