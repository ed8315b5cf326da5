"""LP11 mode group of a weakly guiding step-index fiber.

The scalar LP11 radial profile is J1 in the core and K1 in the cladding,
matched at the core boundary.  The four vector eigenmodes of the group share
that profile and differ only in their transverse polarization pattern:

    TE01   B(r) (-sin t, +cos t)
    TM01   B(r) (+cos t, +sin t)
    HE21o  B(r) (-sin t, -cos t)
    HE21e  B(r) (-cos t, +sin t)

All lengths are in micrometres.
"""

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import AllZeroCoefficients, DataError, ModeNotGuided, NoRootFound
from .grid import RenderGrid

#: first zero of J0 (LP11 cutoff) and of J1 (upper end of the LP11 branch)
J0_ZERO = 2.404825557695773
J1_ZERO = 3.8317059702075125


@dataclass(frozen=True)
class FiberSpec:
    core_radius: float = 12.5
    numerical_aperture: float = 0.1
    wavelength: float = 1.064

    def __post_init__(self):
        for name in ("core_radius", "numerical_aperture", "wavelength"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DataError(f"{name} must be positive and finite, got {value!r}")

    @property
    def v(self) -> float:
        return v_number(self)

    def to_dict(self) -> dict:
        return {"a_um": self.core_radius, "na": self.numerical_aperture,
                "lambda_um": self.wavelength}

    @classmethod
    def from_dict(cls, d: dict) -> "FiberSpec":
        return cls(float(d["a_um"]), float(d["na"]), float(d["lambda_um"]))


class ModeIndex(IntEnum):
    TE01 = 1
    TM01 = 2
    HE21o = 3
    HE21e = 4


@dataclass(frozen=True)
class Lp11Basis:
    u: float
    w: float
    v: float
    norm: float = 1.0


class ModeCoefficients:
    """Four complex modal amplitudes C1..C4 with the global phase fixed.

    The gauge makes C1 real and non-negative, so ``y[0] == 0`` always.
    """

    __slots__ = ("c",)

    def __init__(self, c):
        c = np.asarray(c, dtype=np.complex128).reshape(-1)
        if c.shape != (4,):
            raise DataError(f"expected 4 coefficients, got {c.shape[0]}")
        if c[0].imag != 0.0 or c[0].real < 0.0:
            raise DataError(f"gauge violated: C1 = {c[0]!r} must be real and >= 0")
        if not np.any(c):
            raise AllZeroCoefficients("all four coefficients are zero")
        c.setflags(write=False)
        self.c = c

    @classmethod
    def gauge_fixed(cls, c) -> "ModeCoefficients":
        """Remove the global phase so that C1 becomes real and non-negative."""
        c = np.asarray(c, dtype=np.complex128).reshape(-1)
        if abs(c[0]) > 0:
            c = c * (abs(c[0]) / c[0])
            c[0] = c[0].real
        return cls(c)

    @property
    def x(self) -> np.ndarray:
        return self.c.real

    @property
    def y(self) -> np.ndarray:
        return self.c.imag

    @property
    def rho(self) -> np.ndarray:
        return np.abs(self.c)

    @property
    def phi(self) -> np.ndarray:
        return np.angle(self.c)

    def conj(self) -> "ModeCoefficients":
        return ModeCoefficients(self.c.conj())

    def __mul__(self, alpha):
        return ModeCoefficients(self.c * alpha)

    __rmul__ = __mul__

    def __add__(self, other):
        return ModeCoefficients(self.c + other.c)

    def __eq__(self, other):
        return isinstance(other, ModeCoefficients) and np.array_equal(self.c, other.c)

    def __hash__(self):
        return hash(self.c.tobytes())

    def __repr__(self):
        return f"ModeCoefficients({self.c.tolist()!r})"


@dataclass(frozen=True)
class FieldMap:
    ex: np.ndarray
    ey: np.ndarray
    grid: RenderGrid

    def __post_init__(self):
        n = self.grid.n_pixels
        if self.ex.shape != self.ey.shape or self.ex.shape[:2] != (n, n):
            raise DataError(f"field arrays {self.ex.shape}/{self.ey.shape} do not match "
                            f"a {n}x{n} grid")

    def conj(self) -> "FieldMap":
        return FieldMap(self.ex.conj(), self.ey.conj(), self.grid)


def v_number(spec: FiberSpec) -> float:
    return 2.0 * np.pi * spec.core_radius * spec.numerical_aperture / spec.wavelength


def dispersion(u, v):
    """LP11 characteristic function u J0(u)/J1(u) + w K0(w)/K1(w), w = sqrt(v^2-u^2)."""
    w = np.sqrt(v * v - u * u)
    return u * special.j0(u) / special.j1(u) + w * special.k0(w) / special.k1(w)


def _bisect(f, lo, hi, xtol):
    flo, fhi = f(lo), f(hi)
    if not (np.sign(flo) * np.sign(fhi) < 0):
        raise NoRootFound(f"no sign change on [{lo!r}, {hi!r}]: f = {flo!r}, {fhi!r}")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_lp11(spec: FiberSpec, grid: RenderGrid | None = None, *, xtol: float = 1e-12,
               eps: float = 1e-9) -> Lp11Basis:
    """Solve the LP11 eigenvalue equation by bisection and normalize on ``grid``.

    The grid defaults to the standard render grid for ``spec.core_radius``.
    The returned ``norm`` scales the profile to unit power on that grid.
    """
    v = v_number(spec)
    if v <= J0_ZERO:
        raise ModeNotGuided(f"V = {v:.4f} is below the LP11 cutoff {J0_ZERO:.4f}")
    lo = J0_ZERO + eps
    hi = min(v, J1_ZERO) - eps
    if hi <= lo:
        raise NoRootFound(f"empty bracket for V = {v!r}")
    u = _bisect(lambda t: dispersion(t, v), lo, hi, xtol)
    w = float(np.sqrt(v * v - u * u))
    basis = Lp11Basis(u=float(u), w=w, v=float(v))
    if grid is None:
        grid = RenderGrid(core_radius=spec.core_radius)
    rho, _ = grid.polar
    power = np.sum(radial_profile(basis, rho) ** 2) * grid.pixel_area
    return Lp11Basis(u=basis.u, w=w, v=basis.v, norm=float(1.0 / np.sqrt(power)))


def radial_profile(basis: Lp11Basis, r_over_a):
    r = np.asarray(r_over_a, dtype=np.float64)
    if np.any(r < 0):
        raise DataError("radius must be non-negative")
    inside = r <= 1.0
    core = special.j1(basis.u * np.where(inside, r, 0.0)) / special.j1(basis.u)
    # K1 diverges at 0, so feed the cladding branch radii >= 1 only
    clad = special.k1(basis.w * np.where(inside, 1.0, r)) / special.k1(basis.w)
    return basis.norm * np.where(inside, core, clad)


def mode_field(basis: Lp11Basis, mode: ModeIndex, r_over_a, theta):
    """(ex, ey) of one normalized eigenmode; both outputs are real-valued complex."""
    b = radial_profile(basis, r_over_a)
    s, c = np.sin(theta), np.cos(theta)
    mode = ModeIndex(mode)
    if mode is ModeIndex.TE01:
        ex, ey = -s, c
    elif mode is ModeIndex.TM01:
        ex, ey = c, s
    elif mode is ModeIndex.HE21o:
        ex, ey = -s, -c
    else:
        ex, ey = -c, s
    return (b * ex).astype(np.complex128), (b * ey).astype(np.complex128)


@lru_cache(maxsize=16)
def mode_fields(basis: Lp11Basis, grid: RenderGrid) -> np.ndarray:
    """All four eigenmodes on ``grid`` as a read-only real array (4, 2, n, n)."""
    rho, theta = grid.polar
    out = np.empty((4, 2, grid.n_pixels, grid.n_pixels))
    for k, mode in enumerate(ModeIndex):
        ex, ey = mode_field(basis, mode, rho, theta)
        out[k, 0] = ex.real
        out[k, 1] = ey.real
    out.setflags(write=False)
    return out


def superpose(basis: Lp11Basis, coeffs, grid: RenderGrid) -> FieldMap:
    if isinstance(coeffs, ModeCoefficients):
        c = coeffs.c
    else:
        c = np.asarray(coeffs, dtype=np.complex128)
    if not np.any(c):
        raise AllZeroCoefficients("cannot superpose with all-zero coefficients")
    modes = mode_fields(basis, grid)
    # real and imaginary parts separately: keeps conj(C) -> conj(E) exact
    e = np.tensordot(c.real, modes, axes=(0, 0)) + 1j * np.tensordot(c.imag, modes, axes=(0, 0))
    return FieldMap(e[0], e[1], grid)


def gram_matrix(basis: Lp11Basis, grid: RenderGrid) -> np.ndarray:
    """Grid inner products sum(E_m . conj(E_n)) dA of the four eigenmodes."""
    m = mode_fields(basis, grid).reshape(4, -1)
    return (m @ m.T) * grid.pixel_area
