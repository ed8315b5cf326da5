"""Pure-numpy reference versions of the hot CNN kernels.

All arrays are NHWC.  The 3x3 convolution uses zero padding of one pixel
and im2col columns ordered (dy, dx, channel).
"""

import numpy as np

_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]


def im2col3x3(x):
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, w, 9, c), dtype=x.dtype)
    for k, (dy, dx) in enumerate(_OFFSETS):
        cols[:, :, :, k, :] = xp[:, dy:dy + h, dx:dx + w, :]
    return cols.reshape(n, h, w, 9 * c)


def col2im3x3(dcols, c):
    n, h, w, _ = dcols.shape
    dcols = dcols.reshape(n, h, w, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for k, (dy, dx) in enumerate(_OFFSETS):
        dxp[:, dy:dy + h, dx:dx + w, :] += dcols[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :].copy()


def maxpool2x2(x):
    """2x2/stride-2 max pool with floor semantics.

    Returns the pooled array and the int8 window position (0..3, row-major)
    of the first maximum in each window.
    """
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = (x[:, :2 * ho, :2 * wo, :]
           .reshape(n, ho, 2, wo, 2, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, ho, wo, c, 4))
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2x2_backward(dout, idx, h, w):
    n, ho, wo, c = dout.shape
    onehot = (idx[..., None] == np.arange(4, dtype=np.int8)) * dout[..., None]
    blocks = onehot.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    dx[:, :2 * ho, :2 * wo, :] = blocks.reshape(n, 2 * ho, 2 * wo, c)
    return dx
