"""Layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during ``forward`` and
stores parameter gradients in ``self.grads`` (same keys as ``self.params``).
"""

import numpy as np

from . import kernels


class Layer:
    name = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Conv3x3(Layer):
    """3x3 stride-1 convolution with one pixel of zero padding (NHWC)."""

    def __init__(self, cin, cout, name="conv", input_grad=True):
        super().__init__()
        self.name = name
        self.cin, self.cout = cin, cout
        self.input_grad = input_grad
        self.params = {"W": np.zeros((3, 3, cin, cout)), "b": np.zeros(cout)}

    def forward(self, x, train=False, rng=None):
        n, h, w, _ = x.shape
        cols = kernels.im2col3x3(x).reshape(n * h * w, 9 * self.cin)
        out = cols @ self.params["W"].reshape(9 * self.cin, self.cout)
        out += self.params["b"]
        self._cache = (cols, x.shape)
        return out.reshape(n, h, w, self.cout)

    def backward(self, dout):
        cols, shape = self._cache
        n, h, w, _ = shape
        d2 = dout.reshape(n * h * w, self.cout)
        self.grads["W"] = (cols.T @ d2).reshape(self.params["W"].shape)
        self.grads["b"] = d2.sum(axis=0)
        self._cache = None
        if not self.input_grad:
            return None
        dcols = d2 @ self.params["W"].reshape(9 * self.cin, self.cout).T
        return kernels.col2im3x3(dcols.reshape(n, h, w, 9 * self.cin), self.cin)


class Dense(Layer):
    def __init__(self, nin, nout, name="dense"):
        super().__init__()
        self.name = name
        self.params = {"W": np.zeros((nin, nout)), "b": np.zeros(nout)}

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        dx = dout @ self.params["W"].T
        self._x = None
        return dx


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__()
        self.name = name

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class Tanh(Layer):
    def __init__(self, name="tanh"):
        super().__init__()
        self.name = name

    def forward(self, x, train=False, rng=None):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dout):
        return dout * (1 - self._y * self._y)


class MaxPool2x2(Layer):
    """2x2/stride-2 pooling, floor semantics; ties route the gradient to the
    first maximum in row-major window order."""

    def __init__(self, name="pool"):
        super().__init__()
        self.name = name

    def forward(self, x, train=False, rng=None):
        out, self._idx = kernels.maxpool2x2(x)
        self._hw = x.shape[1:3]
        return out

    def backward(self, dout):
        h, w = self._hw
        return kernels.maxpool2x2_backward(dout, self._idx, h, w)


class Flatten(Layer):
    def __init__(self, name="flatten"):
        super().__init__()
        self.name = name

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout.  Set ``fixed_mask`` to freeze the mask (gradient checks)."""

    def __init__(self, p, name="dropout"):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.name = name
        self.p = p
        self.fixed_mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0:
            self._mask = None
            return x
        if self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            keep = rng.random(x.shape) >= self.p
            mask = keep.astype(x.dtype) / x.dtype.type(1 - self.p)
        self._mask = mask
        return x * mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask
