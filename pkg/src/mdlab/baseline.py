"""Learning-free decomposition by multi-start Levenberg-Marquardt.

Every channel intensity is a quadratic form in the 7 label values: each
analyzer passes an amplitude ``sum_j z_j A_j`` that is linear in ``z``.  The
solver fits the normalized half-image stack in label space, re-normalizing
the labels after every accepted step, and reports every distinct
zero-residual solution it finds.  With linear analyzers only, the
conjugated labels always fit as well as the originals, so each solution's
conjugate is polished as an extra candidate.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dataset import LABEL_LEN, conjugate_labels, decode_labels, decode_many, encode_labels
from .errors import NoConvergence, ShapeMismatch
from .fiber_modes import FiberSpec, ModeCoefficients, mode_fields, solve_lp11
from .grid import RenderGrid
from .imaging import render_half
from .polarimetry import ChannelSet, analyzer_amplitudes


@dataclass(frozen=True)
class LsqConfig:
    starts: int = 32
    max_iter: int = 200
    residual_tol: float = 1e-12
    step_tol: float = 1e-12
    damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.3
    seed: int = 0
    #: a solution counts as an exact fit (and as an alternate) below this residual
    alternate_tol: float = 1e-9
    #: label distance separating two alternates
    distinct_tol: float = 1e-6

    def __post_init__(self):
        if self.starts < 1 or self.max_iter < 1:
            raise ValueError("starts and max_iter must be >= 1")
        if min(self.residual_tol, self.step_tol, self.damping, self.alternate_tol) <= 0:
            raise ValueError("tolerances and damping must be positive")


@dataclass
class DecompositionResult:
    label: np.ndarray
    residual: float
    converged: bool
    alternates: list = field(default_factory=list)
    alternate_residuals: list = field(default_factory=list)
    iterations: int = 0

    @property
    def coefficients(self) -> ModeCoefficients:
        return decode_labels(self.label)

    @property
    def ambiguity_count(self) -> int:
        return max(len(self.alternates) - 1, 0)


def gauge_labels(z) -> np.ndarray:
    """Scale to max |z| = 1 and flip the global sign so that x1 >= 0."""
    z = np.asarray(z, dtype=np.float64)
    z = z / np.max(np.abs(z))
    if z[0] < 0:
        z = -z
    return z + 0.0  # no negative zeros


def canonical_label(z, tol: float = 1e-9) -> np.ndarray:
    """Fix the global phase of a label whose C1 vanishes.

    The gauge leaves the phase free when |C1| <= tol; the first larger
    coefficient is then rotated to the positive real axis.
    """
    z = gauge_labels(z)
    c = decode_many(z)
    big = np.flatnonzero(np.abs(c) > tol)
    if abs(c[0]) > tol or len(big) == 0:
        return z
    c = c * (abs(c[big[0]]) / c[big[0]])
    c[0] = 0.0
    return gauge_labels(encode_labels(c))


def field_distance(za, zb) -> float:
    """Distance between two labels as physical fields: unit-norm coefficient
    vectors compared up to a global phase (0 for the same field)."""
    ca, cb = decode_many(za), decode_many(zb)
    ca, cb = ca / np.linalg.norm(ca), cb / np.linalg.norm(cb)
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * abs(np.vdot(ca, cb)))))


class StackModel:
    """Linear analyzer maps of one channel set on the half-image grid."""

    def __init__(self, channels, spec: FiberSpec = FiberSpec(), grid: RenderGrid | None = None):
        self.channels = ChannelSet(channels)
        self.spec = spec
        self.grid = grid or RenderGrid(core_radius=spec.core_radius)
        self.basis = solve_lp11(spec, self.grid)
        n = self.grid.n_pixels
        self.shape = (n, n // 2 + 1, len(self.channels))
        half = mode_fields(self.basis, self.grid)[:, :, :, n // 2:]
        # field of each unit label, (7, 2, H, W) complex
        unit = decode_many(np.eye(LABEL_LEN))
        fields = np.tensordot(unit, half, axes=(1, 0))
        amps, owner = [], []
        for k, ch in enumerate(self.channels):
            for a in analyzer_amplitudes(ch, fields[:, 0], fields[:, 1]):
                amps.append(a.reshape(LABEL_LEN, -1))
                owner.append(k)
        a = np.stack(amps, axis=1)            # (7, L, P)
        self._n_pix = a.shape[-1]
        self._ar = np.ascontiguousarray(a.real).reshape(LABEL_LEN, -1)
        self._ai = np.ascontiguousarray(a.imag).reshape(LABEL_LEN, -1)
        # (K, L) 0/1 matrix summing analyzer terms into channels
        self._sum = np.zeros((len(self.channels), len(owner)))
        self._sum[owner, np.arange(len(owner))] = 1.0
        # I = phi.T @ (z_a z_b for a <= b): every pixel is a quadratic form in z
        pa, pb = np.triu_indices(LABEL_LEN)
        self._pairs = (pa, pb)
        ar = self._ar.reshape(LABEL_LEN, -1, self._n_pix)
        ai = self._ai.reshape(LABEL_LEN, -1, self._n_pix)
        phi = np.empty((len(pa), len(self.channels) * self._n_pix))
        for k, (a, b) in enumerate(zip(pa, pb)):
            q = self._sum @ (ar[a] * ar[b] + ai[a] * ai[b])
            phi[k] = (1.0 if a == b else 2.0) * q.reshape(-1)
        self._phi = phi
        self._gram = phi @ phi.T

    # Internally stacks are (K, P) and Jacobians (7, K*P); the public methods
    # return the channel-last layout of the image stacks.

    def _channel_major(self, stack):
        return np.moveaxis(np.asarray(stack, dtype=np.float64), -1, 0).reshape(-1)

    def _fields(self, z):
        return z @ self._ar, z @ self._ai

    def _intensity(self, fr, fi):
        return (self._sum @ (fr * fr + fi * fi).reshape(-1, self._n_pix)).reshape(-1)

    def _raw_jac(self, fr, fi):
        d = 2.0 * (self._ar * fr + self._ai * fi)
        return np.matmul(self._sum, d.reshape(LABEL_LEN, -1, self._n_pix)).reshape(LABEL_LEN, -1)

    def _normalized(self, z):
        fr, fi = self._fields(z)
        i = self._intensity(fr, fi)
        return i / np.max(i), fr, fi, i

    def _normalized_jac(self, fr, fi, i):
        dj = self._raw_jac(fr, fi)
        peak = int(np.argmax(i))
        m = i[peak]
        return dj / m - np.outer(dj[:, peak] / (m * m), i)

    def _quad(self, z):
        pa, pb = self._pairs
        return z[pa] * z[pb]

    def _quad_jac(self, z):
        """d(z_a z_b)/dz, shape (28, 7)."""
        pa, pb = self._pairs
        d = np.zeros((len(pa), LABEL_LEN))
        rows = np.arange(len(pa))
        d[rows, pa] += z[pb]
        d[rows, pb] += z[pa]
        return d

    def _to_image(self, flat):
        k = len(self.channels)
        return np.moveaxis(flat.reshape((-1, k) + self.shape[:2]), 1, -1).reshape(
            flat.shape[:-1] + self.shape)

    def intensities(self, z) -> np.ndarray:
        fr, fi = self._fields(np.asarray(z, dtype=np.float64))
        return self._to_image(self._intensity(fr, fi))

    def render(self, z) -> np.ndarray:
        i = self.intensities(z)
        return i / np.max(i)

    def jacobian(self, z, normalized: bool = True):
        """d(stack)/d(z), shape (H, W, K, 7).

        For the normalized stack the peak pixel is frozen at its current
        position (quotient rule with a fixed argmax).
        """
        z = np.asarray(z, dtype=np.float64)
        fr, fi = self._fields(z)
        if normalized:
            jac = self._normalized_jac(fr, fi, self._intensity(fr, fi))
        else:
            jac = self._raw_jac(fr, fi)
        return np.moveaxis(self._to_image(jac), 0, -1)


@lru_cache(maxsize=8)
def stack_model(channels, spec: FiberSpec = FiberSpec()) -> StackModel:
    return StackModel(channels, spec)


def _labels_of(coeffs) -> np.ndarray:
    if isinstance(coeffs, ModeCoefficients):
        return encode_labels(coeffs)
    z = np.asarray(coeffs)
    if z.shape == (4,):
        return encode_labels(ModeCoefficients(z))
    return np.asarray(z, dtype=np.float64)


def residual(coeffs, observed, channels, spec: FiberSpec = FiberSpec()) -> float:
    """Sum of squared pixel differences between the render of ``coeffs`` and
    ``observed`` (a normalized half-image stack).  ``coeffs`` may be
    ModeCoefficients, 4 complex values or a 7-label vector."""
    channels = ChannelSet(channels)
    c = decode_labels(_labels_of(coeffs))
    grid = RenderGrid(core_radius=spec.core_radius)
    rendered = render_half(solve_lp11(spec, grid), c, channels, grid)
    observed = np.asarray(observed, dtype=np.float64)
    if rendered.shape != observed.shape:
        raise ShapeMismatch(f"observed stack {observed.shape} vs rendered {rendered.shape}")
    return float(np.sum((rendered - observed) ** 2))


def jacobian(coeffs, channels, spec: FiberSpec = FiberSpec(), normalized: bool = False):
    """d(pixels)/d(7 labels) at ``coeffs``; shape (H, W, K, 7)."""
    return stack_model(ChannelSet(channels), spec).jacobian(_labels_of(coeffs), normalized)


#: below this sum of squares the residual is pure float64 round-off
_COST_FLOOR = 1e-30


def _levenberg_marquardt(model: StackModel, obs, z0, cfg: LsqConfig):
    """One damped Gauss-Newton run; ``obs`` is in the model's channel-major layout.

    Works on the pair-product form I = phi.T q(z): the normalized Jacobian is
    phi.T E with a 28x7 matrix E, so J^T J = E^T (phi phi^T) E needs no pass
    over the pixels.
    """
    phi, gram = model._phi, model._gram

    def evaluate(z):
        q = model._quad(z)
        i = q @ phi
        peak = int(np.argmax(i))
        m = i[peak]
        r = i / m - obs
        return r, float(r @ r), q, m, peak

    z = gauge_labels(z0)
    r, cost, q, m, peak = evaluate(z)
    lam = cfg.damping
    it = 0
    # reaching residual_tol marks convergence; iteration then continues while
    # the cost still drops so that equal solutions coincide to high precision
    for it in range(1, cfg.max_iter + 1):
        if cost < _COST_FLOOR:
            break
        dq = model._quad_jac(z)
        e = dq / m - np.outer(q, phi[:, peak] @ dq) / (m * m)
        g = e.T @ (phi @ r)
        h = e.T @ gram @ e
        diag = np.diag(h).copy()
        diag[diag <= 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(h + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                trial = z + step
                if np.max(np.abs(trial)) > 0:
                    z_new = gauge_labels(trial)
                    new = evaluate(z_new)
                    if new[1] < cost:
                        break
            lam *= cfg.damping_up
            if lam > 1e20:
                return z, cost, cost < cfg.residual_tol, it
        moved = np.linalg.norm(z_new - z)
        z = z_new
        r, cost, q, m, peak = new
        lam = max(lam * cfg.damping_down, 1e-15)
        if moved < cfg.step_tol * (np.linalg.norm(z) + cfg.step_tol):
            return z, cost, True, it
    return z, cost, cost < cfg.residual_tol, it


def _random_starts(cfg: LsqConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    z = rng.uniform(-1.0, 1.0, size=(cfg.starts, LABEL_LEN))
    z[:, 0] = np.abs(z[:, 0])
    return z


def decompose(observed, channels, config: LsqConfig = LsqConfig(),
              spec: FiberSpec = FiberSpec(), strict: bool = False) -> DecompositionResult:
    """Recover the gauge-fixed label vector from a normalized half-image stack.

    Starts are processed in index order and ties are broken by (residual,
    start index), so the result is deterministic for a given seed.  With
    ``strict=True`` a run in which no start met a tolerance raises
    :class:`NoConvergence` (carrying the best-effort result).
    """
    channels = ChannelSet(channels)
    model = stack_model(channels, spec)
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != model.shape:
        raise ShapeMismatch(f"observed stack {observed.shape} vs expected {model.shape}")
    obs = model._channel_major(observed)

    found = []        # (cost, order, z, converged, iterations)
    for s, z0 in enumerate(_random_starts(config)):
        z, cost, conv, it = _levenberg_marquardt(model, obs, z0, config)
        found.append((cost, s, z, conv, it))

    found.sort(key=lambda t: (t[0], t[1]))

    def distinct(z, pool):
        return all(field_distance(z, p) > config.distinct_tol for p in pool)

    # polish the conjugate of every distinct exact fit as an extra candidate
    exact = []
    for cost, _, z, _, _ in found:
        if cost <= config.alternate_tol and distinct(z, exact):
            exact.append(z)
    tried = list(exact)
    for z in list(exact):
        zc = conjugate_labels(z)
        if not distinct(zc, tried):
            continue
        tried.append(zc)
        zp, cc, conv, it = _levenberg_marquardt(model, obs, zc, config)
        found.append((cc, len(found), zp, conv, it))
    found.sort(key=lambda t: (t[0], t[1]))

    best_cost, _, best_z, _, _ = found[0]
    alternates, alt_res = [], []
    for cost, _, z, _, _ in found:
        if cost > config.alternate_tol:
            break
        if distinct(z, alternates):
            alternates.append(canonical_label(z))
            alt_res.append(cost)
    result = DecompositionResult(
        label=canonical_label(best_z),
        residual=best_cost,
        converged=any(f[3] for f in found),
        alternates=alternates,
        alternate_residuals=alt_res,
        iterations=sum(f[4] for f in found),
    )
    if strict and not result.converged:
        raise NoConvergence(result)
    return result
