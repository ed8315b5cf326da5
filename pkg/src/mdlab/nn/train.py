"""Mini-batch Adam training with per-epoch validation and best-checkpoint retention."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ShapeMismatch
from .model import AdamState, CnnModel, adam_step, label_rms

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch size must be >= 1")
        if self.lr < 0:
            raise DataError("learning rate must be non-negative")


@dataclass
class TrainHistory:
    train_rms: list = field(default_factory=list)
    val_rms: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_rms)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_rms,val_rms\n")
            for k, (t, v) in enumerate(zip(self.train_rms, self.val_rms)):
                val = "" if v is None else repr(v)
                fh.write(f"{k + 1},{t!r},{val}\n")


def _arrays(ds):
    if hasattr(ds, "images"):
        return ds.images, ds.labels
    return ds


def check_compatible(model: CnnModel, *datasets) -> None:
    for ds in datasets:
        if ds is None:
            continue
        images, labels = _arrays(ds)
        if tuple(images.shape[1:]) != model.config.input_shape:
            raise ShapeMismatch(f"dataset stacks {tuple(images.shape[1:])} do not fit model "
                                f"input {model.config.input_shape}")
        if labels.shape[1:] != (model.config.n_outputs,):
            raise ShapeMismatch(f"labels {labels.shape[1:]} vs {model.config.n_outputs} outputs")


def evaluate_rms(model: CnnModel, ds, batch: int = 256) -> float:
    images, labels = _arrays(ds)
    pred = model.predict(images, batch=batch)
    return label_rms(labels, pred)


def train(model: CnnModel, train_set, config: TrainConfig = TrainConfig(), val_set=None,
          callback=None):
    """Train in place; returns (model, history).

    ``train_set`` / ``val_set`` are Datasets or (images, labels) pairs; images
    may be memory-mapped.  Each epoch visits a fresh seeded permutation.  The
    reported training RMS is the running label RMS over the epoch's batches
    (dropout active).  With ``restore_best`` the parameters of the epoch with
    the lowest validation RMS are restored at the end.  A ``callback`` is
    called as ``callback(epoch, history)`` after every epoch; returning True
    stops training early.
    """
    check_compatible(model, train_set, val_set)
    images, labels = _arrays(train_set)
    n = len(images)
    root = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = (np.random.Generator(np.random.PCG64(s)) for s in root.spawn(2))
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    history = TrainHistory()
    best, best_state = np.inf, None
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        sq_sum = 0.0
        for a in range(0, n, config.batch_size):
            idx = np.sort(order[a:a + config.batch_size])
            x = np.asarray(images[idx])
            z = np.asarray(labels[idx])
            mse = model.loss_and_grad(x, z, rng=dropout_rng)
            adam_step(model, model.grads, state)
            sq_sum += mse * len(idx)
        history.train_rms.append(float(np.sqrt(sq_sum / n)))
        val = evaluate_rms(model, val_set) if val_set is not None else None
        history.val_rms.append(val)
        history.seconds.append(time.perf_counter() - t0)
        score = val if val is not None else history.train_rms[-1]
        if score < best:
            best, best_state, history.best_epoch = score, model.get_state(), epoch
        log.info("epoch %d/%d train_rms=%.5f val_rms=%s (%.1fs)", epoch + 1, config.epochs,
                 history.train_rms[-1], "-" if val is None else f"{val:.5f}",
                 history.seconds[-1])
        if callback is not None and callback(epoch, history):
            break
    if config.restore_best and best_state is not None:
        model.set_state(best_state)
    return model, history
