"""Convolutional regressor from polarizer-channel stacks to the 7 label values.

Architecture (defaults)::

    [conv3x3 -> ReLU -> maxpool2x2] x 3 -> conv3x3 -> ReLU -> flatten -> dropout
    -> dense 256 -> ReLU -> dropout -> dense 64 -> ReLU -> dropout -> dense 7 -> tanh

Checkpoint layout: one line of UTF-8 JSON (config, fingerprint, parameter
table) followed by every parameter as little-endian float32 in table order.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import (BadShape, FingerprintMismatch, LengthMismatch, NonFiniteGradient,
                      ShapeMismatch, TruncatedFile, DataError)
from .layers import Conv3x3, Dense, Dropout, Flatten, MaxPool2x2, ReLU, Tanh

CHECKPOINT_FORMAT = "MDCNN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CnnConfig:
    input_shape: tuple = (121, 61, 4)
    conv_widths: tuple = (16, 32, 64, 64)
    dense_widths: tuple = (256, 64)
    n_outputs: int = 7
    dropout: float = 0.05
    l2: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_widths", tuple(int(v) for v in self.conv_widths))
        object.__setattr__(self, "dense_widths", tuple(int(v) for v in self.dense_widths))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise BadShape(f"input shape must be (H, W, C) with positive sizes: "
                           f"{self.input_shape}")
        if not self.conv_widths or min(self.conv_widths) < 1:
            raise BadShape("need at least one conv block with positive width")
        if any(w < 1 for w in self.dense_widths) or self.n_outputs < 1:
            raise BadShape("dense widths must be positive")
        if not 0 <= self.dropout < 1:
            raise BadShape(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2 < 0:
            raise BadShape("l2 must be non-negative")
        h, w = self.feature_hw
        if h < 1 or w < 1:
            raise BadShape(f"input {self.input_shape[:2]} collapses under "
                           f"{self.n_pools} poolings")

    @classmethod
    def for_channels(cls, n_channels: int, **kw) -> "CnnConfig":
        return cls(input_shape=(121, 61, n_channels), **kw)

    @property
    def n_pools(self) -> int:
        # a pool follows every conv block but the last
        return len(self.conv_widths) - 1

    @property
    def feature_hw(self) -> tuple:
        h, w = self.input_shape[:2]
        for _ in range(self.n_pools):
            h, w = h // 2, w // 2
        return h, w

    @property
    def flat_width(self) -> int:
        h, w = self.feature_hw
        return h * w * self.conv_widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CnnConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class CnnModel:
    def __init__(self, config: CnnConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.layers = self._build_layers()

    def _build_layers(self):
        cfg = self.config
        layers = []
        cin = cfg.input_shape[2]
        for k, width in enumerate(cfg.conv_widths):
            layers.append(Conv3x3(cin, width, name=f"conv{k + 1}", input_grad=k > 0))
            layers.append(ReLU(name=f"relu_c{k + 1}"))
            if k < cfg.n_pools:
                layers.append(MaxPool2x2(name=f"pool{k + 1}"))
            cin = width
        layers.append(Flatten())
        layers.append(Dropout(cfg.dropout, name="dropout1"))
        nin = cfg.flat_width
        for k, width in enumerate(cfg.dense_widths):
            layers.append(Dense(nin, width, name=f"dense{k + 1}"))
            layers.append(ReLU(name=f"relu_d{k + 1}"))
            layers.append(Dropout(cfg.dropout, name=f"dropout{k + 2}"))
            nin = width
        layers.append(Dense(nin, cfg.n_outputs, name="head"))
        layers.append(Tanh())
        for layer in layers:
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(self.dtype)
        return layers

    # -- parameters ----------------------------------------------------------

    def named_params(self):
        """[(name, layer, key)] in the fixed checkpoint order."""
        return [(f"{layer.name}.{key}", layer, key)
                for layer in self.layers for key in layer.params]

    @property
    def params(self) -> list:
        return [layer.params[key] for _, layer, key in self.named_params()]

    def get_state(self) -> list:
        return [p.copy() for p in self.params]

    def set_state(self, state) -> None:
        for (name, layer, key), value in zip(self.named_params(), state, strict=True):
            if value.shape != layer.params[key].shape:
                raise ShapeMismatch(f"{name}: {value.shape} vs {layer.params[key].shape}")
            layer.params[key] = np.array(value, dtype=self.dtype)

    def astype(self, dtype) -> "CnnModel":
        other = CnnModel(self.config, dtype)
        other.set_state(self.get_state())
        return other

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params)

    # -- passes --------------------------------------------------------------

    def check_input(self, x) -> None:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeMismatch(f"input batch {tuple(x.shape)} does not match model input "
                                f"{self.config.input_shape}")

    def forward(self, x, train=False, rng=None):
        """Predict labels for a batch (N, H, W, C); a single stack is also accepted."""
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        self.check_input(x)
        if train and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        out = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
        return out[0] if single else out

    def predict(self, images, batch: int = 256) -> np.ndarray:
        out = np.empty((len(images), self.config.n_outputs), dtype=self.dtype)
        for a in range(0, len(images), batch):
            out[a:a + batch] = self.forward(np.asarray(images[a:a + batch]))
        return out

    def backward(self, dout) -> None:
        """Back-propagate d(loss)/d(output) and add the L2 penalty gradient."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        l2 = self.config.l2
        for layer in self.layers:
            for key, g in layer.grads.items():
                if l2 and key == "W":
                    g += (2 * l2) * layer.params[key]
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradient(f"{layer.name}.{key}")

    @property
    def grads(self) -> list:
        return [layer.grads[key] for _, layer, key in self.named_params()]

    def l2_penalty(self) -> float:
        return self.config.l2 * sum(float(np.sum(layer.params["W"].astype(np.float64) ** 2))
                                    for layer in self.layers if "W" in layer.params)

    def loss(self, x, z, train=False, rng=None) -> float:
        """MSE data loss plus L2 penalty (forward only)."""
        return loss_mse(z, self.forward(x, train=train, rng=rng)) + self.l2_penalty()

    def loss_and_grad(self, x, z, rng=None, train=True) -> float:
        pred = self.forward(x, train=train, rng=rng)
        z = np.asarray(z, dtype=self.dtype)
        diff = pred - z
        self.backward((2.0 / diff.size) * diff)
        return float(np.mean(diff.astype(np.float64) ** 2))


def build_model(config: CnnConfig, init_seed: int = 0, dtype=np.float32) -> CnnModel:
    """He-uniform kernels and weights, zero biases."""
    model = CnnModel(config, dtype)
    rng = np.random.default_rng(init_seed)
    for name, layer, key in model.named_params():
        p = layer.params[key]
        if key == "W":
            fan_in = int(np.prod(p.shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            layer.params[key] = rng.uniform(-limit, limit, size=p.shape).astype(model.dtype)
        else:
            layer.params[key] = np.zeros_like(p)
    return model


def loss_mse(z_actual, z_pred) -> float:
    a = np.asarray(z_actual, dtype=np.float64)
    p = np.asarray(z_pred, dtype=np.float64)
    if a.shape != p.shape:
        raise LengthMismatch(f"label shapes differ: {a.shape} vs {p.shape}")
    return float(np.mean((a - p) ** 2))


def label_rms(z_actual, z_pred) -> float:
    return float(np.sqrt(loss_mse(z_actual, z_pred)))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(model: CnnModel, grads, state: AdamState) -> None:
    """In-place Adam update with bias correction."""
    params = model.params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr * np.sqrt(1 - b2 ** state.t) / (1 - b1 ** state.t)
    eps_hat = state.eps * np.sqrt(1 - b2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v, strict=True):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        # equals lr * mhat / (sqrt(vhat) + eps) with the bias corrections folded in
        p -= (step * m / (np.sqrt(v) + eps_hat)).astype(p.dtype, copy=False)


# -- checkpoints -------------------------------------------------------------------

def save_model(model: CnnModel, path, extra: dict | None = None) -> None:
    table = [{"name": name, "shape": list(layer.params[key].shape)}
             for name, layer, key in model.named_params()]
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "fingerprint": model.config.fingerprint(),
        "params": table,
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path, dtype=np.float32) -> CnnModel:
    with open(path, "rb") as fh:
        line = fh.readline(1 << 20)
        blob = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not a model checkpoint ({exc})")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a model checkpoint")
    config = CnnConfig.from_dict(header["config"])
    if config.fingerprint() != header.get("fingerprint"):
        raise FingerprintMismatch(f"{path}: configuration does not match its fingerprint")
    model = CnnModel(config, dtype)
    expected = sum(p.size for p in model.params) * 4
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: parameter blob has {len(blob)} bytes, need {expected}")
    if len(blob) > expected:
        raise DataError(f"{path}: {len(blob) - expected} trailing bytes")
    state, offset = [], 0
    for (name, layer, key), entry in zip(model.named_params(), header["params"], strict=True):
        shape = layer.params[key].shape
        if entry["name"] != name or tuple(entry["shape"]) != shape:
            raise FingerprintMismatch(f"{path}: parameter table disagrees at {name}")
        count = int(np.prod(shape))
        state.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape))
        offset += 4 * count
    model.set_state(state)
    return model
