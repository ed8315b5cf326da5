"""Shared test utilities."""

import numpy as np

from mdlab.fiber_modes import ModeCoefficients


def random_coefficients(rng, n=1):
    """Gauge-fixed random coefficients with a strictly positive C1."""
    out = []
    for _ in range(n):
        c = rng.uniform(-1, 1, 4) + 1j * rng.uniform(-1, 1, 4)
        out.append(ModeCoefficients.gauge_fixed(c))
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


FD_STEP = 1e-6


def fd_gradient(f, x, h=FD_STEP):
    """Central finite-difference gradient of the scalar f() w.r.t. x, perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check_layer_gradients(layer, x, rng):
    """Relative errors of the input and parameter gradients of sum(R * layer(x))."""
    out = layer.forward(x, train=True, rng=rng)
    r = np.random.default_rng(7).normal(size=out.shape)

    def f():
        return float(np.sum(r * layer.forward(x, train=True, rng=rng)))

    layer.forward(x, train=True, rng=rng)
    dx = layer.backward(r)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    errors = {}
    if dx is not None:
        errors["input"] = rel_err(dx, fd_gradient(f, x))
    for k, p in layer.params.items():
        errors[k] = rel_err(analytic[k], fd_gradient(f, p))
    return errors
