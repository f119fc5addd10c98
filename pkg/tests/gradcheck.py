"""Central finite-difference gradient checking helpers shared by tests."""

import numpy as np

from hiercap.tensor import Tape


def finite_diff(loss_fn, param, h=1e-5):
    """Central differences of a scalar loss w.r.t. every entry of param."""
    flat = param.data.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data)
        flat[i] = orig - h
        fm = float(loss_fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.data.shape)


def check_gradients(loss_fn, params, h=1e-5, tol=1e-4):
    """Backprop loss_fn once, then compare each named parameter's gradient
    against central differences.

    Per parameter the relative error is ||analytic - fd|| / max(||analytic||,
    1e-8); coordinates with |analytic| > 1e-4 are additionally checked
    pointwise at the same tolerance. Returns the worst relative error.
    """
    for _, p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for name, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        fd = finite_diff(loss_fn, p, h)
        err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), 1e-8)
        assert err < tol, f"{name}: norm relative error {err:.3e}"
        healthy = np.abs(analytic) > 1e-4
        if healthy.any():
            coord = (np.abs(analytic - fd)[healthy] / np.abs(analytic)[healthy]).max()
            assert coord < tol, f"{name}: pointwise relative error {coord:.3e}"
            err = max(err, coord)
        worst = max(worst, err)
    return worst
