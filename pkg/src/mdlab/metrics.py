"""Evaluation metrics for predicted label vectors.

Errors are computed on raw predicted labels (no gauge re-fixing); the seven
canonical channel images are re-rendered full-frame for both the actual and
predicted coefficients and compared by normalized intensity correlation.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import decode_many
from .errors import AllZeroImage, LengthMismatch, TooFewSamples
from .fiber_modes import FiberSpec, mode_fields, solve_lp11
from .grid import RenderGrid
from .polarimetry import CANONICAL, analyzer_amplitudes

TABLE_COLUMNS = ("label_mae", "label_rms", "rho_mae", "rho_rms", "phase_mae_over_2pi",
                 "corr_full", "corr_mean")
PER_SAMPLE_COLUMNS = ("sample_id", "label_mae", "label_rms", "rho_rms", "phase_mae",
                      "corr_full", "corr_mean")
#: coefficients smaller than this carry no meaningful phase
PHASE_MIN_MAGNITUDE = 1e-3


@dataclass
class MetricsReport:
    label_mae: float
    label_rms: float
    rho_mae: float
    rho_rms: float
    phase_mae_over_2pi: float
    corr_full: float
    corr_mean: float
    channel_corr: dict
    n_samples: int
    per_sample: dict = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in TABLE_COLUMNS}

    def write_csv(self, path, extra: dict | None = None) -> None:
        row = self.row()
        row.update(extra or {})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            w.writeheader()
            w.writerow({k: f"{v:.6g}" if isinstance(v, float) else v for k, v in row.items()})

    def write_per_sample_csv(self, path, sample_ids=None) -> None:
        ps = self.per_sample
        ids = np.arange(self.n_samples) if sample_ids is None else sample_ids
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PER_SAMPLE_COLUMNS)
            for k in range(self.n_samples):
                w.writerow([int(ids[k])] + [f"{ps[c][k]:.6g}" for c in PER_SAMPLE_COLUMNS[1:]])


def label_errors(z_a, z_p):
    """(MAE, RMS) of the label difference over all entries (and samples)."""
    a = np.asarray(z_a, dtype=np.float64)
    p = np.asarray(z_p, dtype=np.float64)
    if a.shape != p.shape or a.shape[-1] != 7:
        raise LengthMismatch(f"label shapes {a.shape} and {p.shape} must agree with 7 entries")
    d = a - p
    return float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d)))


def _phase_diffs(c_a, c_p):
    """|arg(C_a / C_p)| for modes 2-4, NaN where either magnitude is too small."""
    a, p = c_a[..., 1:], c_p[..., 1:]
    valid = (np.abs(a) >= PHASE_MIN_MAGNITUDE) & (np.abs(p) >= PHASE_MIN_MAGNITUDE)
    with np.errstate(invalid="ignore", divide="ignore"):
        dphi = np.abs(np.angle(a * np.conj(p)))   # in [0, pi]
    return np.where(valid, dphi, np.nan)


def rho_phi_errors(c_a, c_p):
    """(rho MAE, rho RMS, phase MAE / 2pi) between complex coefficient sets."""
    c_a = np.asarray(getattr(c_a, "c", c_a), dtype=np.complex128)
    c_p = np.asarray(getattr(c_p, "c", c_p), dtype=np.complex128)
    drho = np.abs(c_a) - np.abs(c_p)
    dphi = _phase_diffs(c_a, c_p)
    phase = float(np.nanmean(dphi)) / (2 * np.pi) if np.any(~np.isnan(dphi)) else 0.0
    return float(np.mean(np.abs(drho))), float(np.sqrt(np.mean(drho ** 2))), phase


def field_correlation(i_a, i_p) -> float:
    """Normalized inner product of two non-negative intensity images."""
    a = np.asarray(i_a, dtype=np.float64)
    p = np.asarray(i_p, dtype=np.float64)
    if a.shape != p.shape:
        raise LengthMismatch(f"image shapes differ: {a.shape} vs {p.shape}")
    na, np_ = np.sum(a * a), np.sum(p * p)
    if na == 0 and np_ == 0:
        raise AllZeroImage("both images are zero")
    if na == 0 or np_ == 0:
        return 0.0
    return float(np.clip(np.sum(a * p) / math.sqrt(na * np_), 0.0, 1.0))


def _batch_correlations(ia, ip):
    """Per (sample, channel) correlations of (N, 7, P) stacks; both-zero counts as 1."""
    num = np.einsum("nkp,nkp->nk", ia, ip)
    na = np.einsum("nkp,nkp->nk", ia, ia)
    npp = np.einsum("nkp,nkp->nk", ip, ip)
    den = np.sqrt(na * npp)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(den > 0, num / den, 0.0)
    corr = np.where((na == 0) & (npp == 0), 1.0, corr)
    return np.clip(corr, 0.0, 1.0)


class CanonicalRenderer:
    """Vectorized full-frame render of the seven canonical channels."""

    def __init__(self, spec: FiberSpec = FiberSpec()):
        grid = RenderGrid(core_radius=spec.core_radius)
        self.modes = mode_fields(solve_lp11(spec, grid), grid).reshape(4, 2, -1)

    def __call__(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=np.complex128)
        e = (np.tensordot(c.real, self.modes, axes=(1, 0))
             + 1j * np.tensordot(c.imag, self.modes, axes=(1, 0)))
        out = np.empty((c.shape[0], len(CANONICAL), e.shape[-1]))
        for k, ch in enumerate(CANONICAL):
            amps = analyzer_amplitudes(ch, e[:, 0], e[:, 1])
            out[:, k] = sum(a.real ** 2 + a.imag ** 2 for a in amps)
        return out


def per_sample_metrics(z_a, z_p, spec: FiberSpec = FiberSpec(), chunk: int = 128) -> dict:
    z_a = np.asarray(z_a, dtype=np.float64)
    z_p = np.asarray(z_p, dtype=np.float64)
    if z_a.shape != z_p.shape or z_a.ndim != 2 or z_a.shape[1] != 7:
        raise LengthMismatch(f"label arrays {z_a.shape} / {z_p.shape} must be (N, 7)")
    d = z_a - z_p
    c_a, c_p = decode_many(z_a), decode_many(z_p)
    drho = np.abs(c_a) - np.abs(c_p)
    dphi = _phase_diffs(c_a, c_p)
    render = CanonicalRenderer(spec)
    corr = np.empty((len(z_a), len(CANONICAL)))
    for s in range(0, len(z_a), chunk):
        corr[s:s + chunk] = _batch_correlations(render(c_a[s:s + chunk]),
                                                render(c_p[s:s + chunk]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)   # rows with no valid phase
        phase = np.nanmean(dphi, axis=1)
    return {
        "label_abs": np.abs(d),
        "label_sq": d * d,
        "rho_abs": np.abs(drho),
        "rho_sq": drho * drho,
        "phase_abs": dphi,
        "corr": corr,
        "label_mae": np.mean(np.abs(d), axis=1),
        "label_rms": np.sqrt(np.mean(d * d, axis=1)),
        "rho_rms": np.sqrt(np.mean(drho * drho, axis=1)),
        "phase_mae": np.nan_to_num(phase, nan=0.0) / (2 * np.pi),
        "corr_full": corr[:, 0],
        "corr_mean": corr.mean(axis=1),
    }


def report_from_predictions(z_a, z_p, spec: FiberSpec = FiberSpec()) -> MetricsReport:
    ps = per_sample_metrics(z_a, z_p, spec)
    phase = ps["phase_abs"]
    phase_mean = float(np.nanmean(phase)) if np.any(~np.isnan(phase)) else 0.0
    corr = ps["corr"]
    return MetricsReport(
        label_mae=float(np.mean(ps["label_abs"])),
        label_rms=float(np.sqrt(np.mean(ps["label_sq"]))),
        rho_mae=float(np.mean(ps["rho_abs"])),
        rho_rms=float(np.sqrt(np.mean(ps["rho_sq"]))),
        phase_mae_over_2pi=phase_mean / (2 * np.pi),
        corr_full=float(np.mean(corr[:, 0])),
        corr_mean=float(np.mean(corr)),
        channel_corr={ch.value: float(np.mean(corr[:, k])) for k, ch in enumerate(CANONICAL)},
        n_samples=len(corr),
        per_sample=ps,
    )


def evaluate(predictor, test_set, spec: FiberSpec | None = None) -> MetricsReport:
    """Run ``predictor`` (a CnnModel, or a callable mapping an (N, H, W, C)
    image batch to (N, 7) labels) over ``test_set`` and score it."""
    spec = spec or test_set.header.fiber
    if hasattr(predictor, "predict"):
        z_p = predictor.predict(test_set.images)
    else:
        z_p = predictor(test_set.images)
    return report_from_predictions(test_set.labels, z_p, spec)


def quartile_examples(losses):
    """Indices of the samples at ranks ceil(N/4), ceil(N/2), ceil(3N/4) of the
    ascending per-sample loss (1-based ranks, ties by sample index)."""
    losses = np.asarray(losses)
    n = len(losses)
    if n < 4:
        raise TooFewSamples(f"need at least 4 samples, got {n}")
    order = np.argsort(losses, kind="stable")
    ranks = [math.ceil(n / 4), math.ceil(n / 2), math.ceil(3 * n / 4)]
    return [int(order[r - 1]) for r in ranks]


def improvement_percent(worse: dict, better: dict) -> dict:
    """Relative loss reduction (worse - better) / better in percent, with
    correlations converted to the loss 1 - corr."""
    out = {}
    for k in TABLE_COLUMNS:
        lw, lb = worse[k], better[k]
        if k.startswith("corr"):
            lw, lb = 1 - lw, 1 - lb
        out[k] = 100.0 * (lw - lb) / lb if lb else float("inf")
    return out


def read_report_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise LengthMismatch(f"{path}: expected exactly one report row, got {len(rows)}")
    return {k: float(rows[0][k]) for k in TABLE_COLUMNS}


def write_table(path, rows: dict, compare: tuple | None = None) -> None:
    """Table of reports keyed by case name, optionally with an improvement row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("case",) + TABLE_COLUMNS)
        for name, row in rows.items():
            w.writerow([name] + [f"{row[k]:.4f}" for k in TABLE_COLUMNS])
        if compare:
            worse, better = compare
            imp = improvement_percent(rows[worse], rows[better])
            w.writerow([f"{worse} vs {better} (%)"] + [f"{imp[k]:.2f}" for k in TABLE_COLUMNS])
