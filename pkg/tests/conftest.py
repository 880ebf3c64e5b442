import numpy as np
import pytest

from diffcd.autodiff import Tensor, backward


def finite_diff_grad(f, params, eps=1e-6):
    """Central finite differences of scalar f() w.r.t. each Tensor in params."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f())
            flat[i] = orig - eps
            lo = float(f())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def check_grads(loss_fn, params, rtol=1e-7, eps=1e-6):
    """Assert autodiff gradients match central differences.

    Relative error is measured against the larger of the two norms, with an
    absolute floor so exactly-zero gradients compare cleanly.
    """
    loss = loss_fn()
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(loss, params)
    numeric = finite_diff_grad(lambda: loss_fn().item(), params, eps=eps)
    for p, num in zip(params, numeric):
        denom = max(np.linalg.norm(num), np.linalg.norm(p.grad), 1e-8)
        err = np.linalg.norm(p.grad - num) / denom
        assert err < rtol, f"gradient mismatch for {p.name or 'param'}: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rand_param(rng, shape, name=""):
    t = Tensor(rng.standard_normal(shape), requires_grad=True)
    t.name = name
    return t
