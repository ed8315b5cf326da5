"""Synthetic (image stack, label vector) datasets and their binary file format.

File layout::

    <header: one line of UTF-8 JSON terminated by "\\n">
    images  float32 little-endian  [N][H][W][C]
    labels  float32 little-endian  [N][7]

Sample ``i`` is drawn from its own Philox stream keyed by ``(seed, i)``, so a
dataset is a pure function of its header and can be generated in any order.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (AllZeroCoefficients, BadMagic, DataError, InvariantViolation,
                     TruncatedFile, VersionMismatch)
from .fiber_modes import FiberSpec, ModeCoefficients, solve_lp11
from .grid import RenderGrid
from .imaging import render_half
from .polarimetry import HANDEDNESS, ChannelSet

MAGIC = "MDLP11\0"
VERSION = 1
LABEL_LEN = 7
# positions of x1..x4 and y2..y4 inside the label vector
X_SLOTS = (0, 1, 3, 5)
Y_SLOTS = (2, 4, 6)

CONVENTIONS = {
    "sampling": "x1~U(0,1], x2..x4,y2..y4~U[-1,1]",
    "label_norm": "z/max|z|",
    "stack_norm": "stack/max(stack)",
    "layout": "rows=y, cols=x>=0, channel-last",
    "rng": "Philox(SeedSequence(seed, spawn_key=(i,)))",
}

_FLOAT = np.dtype("<f4")


def threads_from_env(default: int = 1) -> int:
    raw = os.environ.get("MDLAB_THREADS")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"MDLAB_THREADS must be an integer >= 1, got {raw!r}")
    if n < 1:
        raise DataError(f"MDLAB_THREADS must be an integer >= 1, got {raw!r}")
    return n


# -- labels -------------------------------------------------------------------

def sample_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def seed_material(seed: int, index: int) -> bytes:
    """The 128-bit key that seeds sample ``index``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return ss.generate_state(4, np.uint32).astype("<u4").tobytes()


def sample_coefficients(rng: np.random.Generator) -> ModeCoefficients:
    while True:
        x1 = 1.0 - rng.random()
        rest = rng.uniform(-1.0, 1.0, size=6)
        z = np.concatenate(([x1], rest))
        if np.max(np.abs(z)) >= 1e-6:
            return decode_labels(z)


def encode_labels(coeffs) -> np.ndarray:
    c = coeffs.c if isinstance(coeffs, ModeCoefficients) else np.asarray(coeffs, complex)
    z = np.empty(LABEL_LEN)
    z[list(X_SLOTS)] = c.real
    z[list(Y_SLOTS)] = c.imag[1:]
    peak = np.max(np.abs(z))
    if peak == 0:
        raise AllZeroCoefficients("cannot normalize an all-zero label vector")
    return z / peak


def decode_labels(z) -> ModeCoefficients:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != LABEL_LEN:
        raise DataError(f"label vector must have {LABEL_LEN} entries, got {z.shape[-1]}")
    c = z[list(X_SLOTS)].astype(np.complex128)
    c[1:] += 1j * z[list(Y_SLOTS)]
    return ModeCoefficients(c)


def decode_many(z) -> np.ndarray:
    """Vectorized decode of an (N, 7) label array to (N, 4) complex, no checks."""
    z = np.asarray(z, dtype=np.float64)
    c = z[..., list(X_SLOTS)].astype(np.complex128)
    c[..., 1:] += 1j * z[..., list(Y_SLOTS)]
    return c


def conjugate_labels(z) -> np.ndarray:
    z = np.array(z, dtype=np.float64)
    z[..., list(Y_SLOTS)] *= -1
    return z


def check_label(z, tol: float = 1e-6) -> None:
    z = np.asarray(z)
    if z.shape != (LABEL_LEN,) or not np.all(np.isfinite(z)):
        raise InvariantViolation(f"malformed label {z!r}")
    if z[0] < 0 or np.any(np.abs(z) > 1 + tol) or abs(np.max(np.abs(z)) - 1) > tol:
        raise InvariantViolation(f"label violates gauge/normalization: {z.tolist()}")


# -- datasets -------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetHeader:
    n: int
    channels: ChannelSet
    seed: int
    fiber: FiberSpec = FiberSpec()
    grid: RenderGrid = field(default=None)
    version: int = VERSION

    def __post_init__(self):
        if self.grid is None:
            object.__setattr__(self, "grid", RenderGrid(core_radius=self.fiber.core_radius))

    @property
    def height(self) -> int:
        return self.grid.n_pixels

    @property
    def width(self) -> int:
        return self.grid.n_pixels // 2 + 1

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def image_shape(self) -> tuple:
        return (self.height, self.width, self.depth)

    def to_json(self) -> str:
        d = {
            "magic": MAGIC,
            "version": self.version,
            "n": self.n,
            "height": self.height,
            "width": self.width,
            "depth": self.depth,
            "channels": self.channels.names,
            "label_len": LABEL_LEN,
            "handedness": HANDEDNESS,
            "fiber": self.fiber.to_dict(),
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "conventions": CONVENTIONS,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DatasetHeader":
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BadMagic(f"header is not JSON: {exc}")
        if not isinstance(d, dict) or d.get("magic") != MAGIC:
            raise BadMagic("not an MDLP11 dataset")
        if d.get("version") != VERSION:
            raise VersionMismatch(f"dataset version {d.get('version')!r}, expected {VERSION}")
        try:
            channels = ChannelSet(d["channels"])
            if len(channels) != d["depth"] or d["label_len"] != LABEL_LEN:
                raise InvariantViolation(
                    f"header declares {d['depth']} channels but lists {len(channels)}")
            fiber = FiberSpec.from_dict(d["fiber"])
            ppr = int(round(1.0 / d["grid"]["pitch_over_a"]))
            grid = RenderGrid(core_radius=fiber.core_radius, pixels_per_radius=ppr)
            hdr = cls(n=int(d["n"]), channels=channels, seed=int(d["seed"]), fiber=fiber,
                      grid=grid)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvariantViolation):
                raise
            raise InvariantViolation(f"malformed header: {exc!r}")
        if (hdr.height, hdr.width, grid.n_pixels) != (d["height"], d["width"],
                                                      d["grid"]["pixels"]):
            raise InvariantViolation("header geometry is inconsistent")
        if d.get("handedness") != HANDEDNESS:
            raise InvariantViolation(f"unsupported handedness {d.get('handedness')!r}")
        return hdr


@dataclass
class Dataset:
    header: DatasetHeader
    images: np.ndarray   # (N, H, W, C) float32
    labels: np.ndarray   # (N, 7) float32

    def __len__(self):
        return self.images.shape[0]

    @property
    def channels(self) -> ChannelSet:
        return self.header.channels

    @property
    def sample_ids(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)


def render_sample(header: DatasetHeader, index: int, basis=None):
    """(stack, label) of sample ``index``; label is stored-precision float32."""
    basis = basis or solve_lp11(header.fiber, header.grid)
    coeffs = sample_coefficients(sample_rng(header.seed, index))
    # round the label first so that the stored stack is exactly the render of it
    label = encode_labels(coeffs).astype(np.float32)
    stack = render_half(basis, decode_labels(label), header.channels, header.grid,
                        dtype=np.float32)
    return stack, label


def _render_range(header, basis, start, stop):
    images = np.empty((stop - start,) + header.image_shape, dtype=np.float32)
    labels = np.empty((stop - start, LABEL_LEN), dtype=np.float32)
    for k, i in enumerate(range(start, stop)):
        images[k], labels[k] = render_sample(header, i, basis)
    return images, labels


def _chunks(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def generate_dataset(n: int, seed: int, channels, spec: FiberSpec = FiberSpec(),
                     threads: int | None = None, chunk: int = 256) -> Dataset:
    if n <= 0:
        raise DataError("dataset size must be positive")
    header = DatasetHeader(n=n, channels=ChannelSet(channels), seed=seed, fiber=spec)
    images = np.empty((n,) + header.image_shape, dtype=np.float32)
    labels = np.empty((n, LABEL_LEN), dtype=np.float32)
    for (a, b), (im, lb) in _iter_chunks(header, threads, chunk):
        images[a:b], labels[a:b] = im, lb
    return Dataset(header, images, labels)


def _iter_chunks(header, threads, chunk):
    basis = solve_lp11(header.fiber, header.grid)
    spans = _chunks(header.n, chunk)
    threads = threads or threads_from_env()
    if threads == 1:
        for a, b in spans:
            yield (a, b), _render_range(header, basis, a, b)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_render_range, header, basis, a, b) for a, b in spans]
        for span, fut in zip(spans, futures):
            yield span, fut.result()


def write_dataset(path, n: int, seed: int, channels, spec: FiberSpec = FiberSpec(),
                  threads: int | None = None, chunk: int = 256) -> DatasetHeader:
    """Generate straight to disk without holding all images in memory."""
    if n <= 0:
        raise DataError("dataset size must be positive")
    header = DatasetHeader(n=n, channels=ChannelSet(channels), seed=seed, fiber=spec)
    labels = np.empty((n, LABEL_LEN), dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(header.to_json().encode("utf-8") + b"\n")
        for (a, b), (im, lb) in _iter_chunks(header, threads, chunk):
            fh.write(im.astype(_FLOAT, copy=False).tobytes())
            labels[a:b] = lb
        fh.write(labels.astype(_FLOAT, copy=False).tobytes())
    return header


def save_dataset(ds: Dataset, path) -> None:
    h = ds.header
    if ds.images.shape != (h.n,) + h.image_shape or ds.labels.shape != (h.n, LABEL_LEN):
        raise InvariantViolation("dataset arrays do not match their header")
    with open(path, "wb") as fh:
        fh.write(h.to_json().encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(ds.images, dtype=_FLOAT).tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype=_FLOAT).tobytes())


def read_header(path) -> tuple:
    """(header, byte offset of the image block)."""
    with open(path, "rb") as fh:
        line = fh.readline(1 << 20)
    if not line.startswith(b"{"):
        raise BadMagic(f"{path}: not an MDLP11 dataset")
    if not line.endswith(b"\n"):
        raise TruncatedFile(f"{path}: header line is incomplete")
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError:
        raise BadMagic(f"{path}: header is not UTF-8")
    return DatasetHeader.from_json(text), len(line)


def load_dataset(path, mmap: bool = False, validate: bool = True) -> Dataset:
    """Read a dataset file.

    With ``mmap=True`` the image block is memory-mapped read-only, which keeps
    large training sets out of RAM.
    """
    header, offset = read_header(path)
    n_img = header.n * int(np.prod(header.image_shape))
    expected = offset + _FLOAT.itemsize * (n_img + header.n * LABEL_LEN)
    size = os.path.getsize(path)
    if size < expected:
        raise TruncatedFile(f"{path}: {size} bytes, header implies {expected}")
    if size > expected:
        raise InvariantViolation(f"{path}: {size - expected} trailing bytes")
    shape = (header.n,) + header.image_shape
    if mmap:
        images = np.memmap(path, dtype=_FLOAT, mode="r", offset=offset, shape=shape)
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            images = np.frombuffer(fh.read(_FLOAT.itemsize * n_img), dtype=_FLOAT).reshape(shape)
    with open(path, "rb") as fh:
        fh.seek(offset + _FLOAT.itemsize * n_img)
        labels = np.frombuffer(fh.read(), dtype=_FLOAT).reshape(header.n, LABEL_LEN)
    if validate:
        for z in labels:
            check_label(z)
    return Dataset(header, images, labels)
