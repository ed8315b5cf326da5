"""Rasterized channel stacks: render, half-image crop, normalization, PGM export.

Stacks are channel-last arrays indexed ``[row=y, col=x, channel]``.
"""

import numpy as np

from .errors import AllZeroStack, DataError, WrongWidth
from .fiber_modes import Lp11Basis, superpose
from .grid import RenderGrid
from .polarimetry import project_stack

__all__ = ["RenderGrid", "render_full", "crop_half", "normalize_stack", "render_half",
           "export_image", "read_pgm"]


def render_full(basis: Lp11Basis, coeffs, channels, grid: RenderGrid | None = None) -> np.ndarray:
    """Full-frame (n, n, len(channels)) float64 intensity stack."""
    grid = grid or RenderGrid()
    field = superpose(basis, coeffs, grid)
    return np.stack(project_stack(channels, field), axis=-1)


def crop_half(stack: np.ndarray) -> np.ndarray:
    """Keep the x >= 0 columns (centre column first)."""
    n = stack.shape[0]
    if stack.shape[1] != n or n % 2 == 0:
        raise WrongWidth(f"expected a square odd-sized frame, got {stack.shape[:2]}")
    return stack[:, n // 2:, ...]


def normalize_stack(stack: np.ndarray) -> np.ndarray:
    """Divide the whole stack by its single largest pixel."""
    peak = np.max(stack)
    if not peak > 0:
        raise AllZeroStack("stack has no positive pixel")
    return stack / peak


def render_half(basis, coeffs, channels, grid=None, dtype=np.float64) -> np.ndarray:
    """The network input: render, crop to x >= 0, normalize."""
    return normalize_stack(crop_half(render_full(basis, coeffs, channels, grid))).astype(dtype)


def export_image(image: np.ndarray, path, maxval: int = 255, allow_blank: bool = False) -> None:
    """Write one channel as a binary (P5) PGM, scaling the peak to ``maxval``.

    An all-zero channel raises :class:`AllZeroStack` unless ``allow_blank``,
    in which case it is written black.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DataError(f"expected a single 2-D channel, got shape {image.shape}")
    if not 0 < maxval < 65536:
        raise DataError("maxval must be in 1..65535")
    image = np.clip(image, 0.0, None)
    peak = image.max(initial=0.0)
    if not peak > 0 and not allow_blank:
        raise AllZeroStack("image has no positive pixel")
    scaled = np.rint(image / peak * maxval) if peak > 0 else np.zeros_like(image)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(scaled.astype(dtype).tobytes())


def read_pgm(path) -> tuple:
    """Read a binary PGM written by :func:`export_image`; returns (image, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise DataError(f"not a binary PGM: {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos + 1).reshape(h, w)
    return img, maxval
