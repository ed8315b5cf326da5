"""Polarizer channels and Stokes parameters of a transverse field.

Handedness convention: the RHCP analyzer passes (ex - i ey)/sqrt(2) and the
LHCP analyzer passes (ex + i ey)/sqrt(2), so s3 = RHCP - LHCP.  Swapping the
convention only swaps the two CP channel names.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, EmptyChannelSet, DataError
from .fiber_modes import FieldMap

HANDEDNESS = "RHCP=|(ex-i*ey)/sqrt2|^2"

_SQRT_HALF = np.sqrt(0.5)


class PolarizerChannel(Enum):
    Full = "Full"
    LP0 = "LP0"
    LP45 = "LP45"
    LP90 = "LP90"
    LP135 = "LP135"
    RHCP = "RHCP"
    LHCP = "LHCP"

    @property
    def angle(self):
        """Analyzer angle in degrees for the linear channels, else None."""
        if self.name.startswith("LP"):
            return int(self.name[2:])
        return None


CANONICAL = tuple(PolarizerChannel)


class ChannelSet(tuple):
    """Ordered, duplicate-free selection of polarizer channels."""

    def __new__(cls, channels):
        chans = tuple(PolarizerChannel(c) if not isinstance(c, PolarizerChannel) else c
                      for c in channels)
        if len(set(chans)) != len(chans):
            raise DataError(f"duplicate channels in {[c.value for c in chans]}")
        return super().__new__(cls, chans)

    @classmethod
    def preset(cls, name: str) -> "ChannelSet":
        try:
            return PRESETS[name]
        except KeyError:
            raise DataError(f"unknown channel preset {name!r}; use one of {sorted(PRESETS)}")

    @property
    def names(self) -> list:
        return [c.value for c in self]

    def __repr__(self):
        return f"ChannelSet({self.names})"


PRESETS = {
    "n3": ChannelSet(["LP0", "LP45", "LP90"]),
    "n4": ChannelSet(["LP0", "LP45", "LP90", "RHCP"]),
    "n7": ChannelSet(CANONICAL),
}


@dataclass(frozen=True)
class StokesMap:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray

    def degree_of_polarization(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            dop = np.sqrt(self.s1**2 + self.s2**2 + self.s3**2) / self.s0
        return np.where(self.s0 > 0, dop, 0.0)


def analyzer_amplitudes(channel: PolarizerChannel, ex, ey) -> list:
    """Complex amplitudes whose squared moduli sum to the channel intensity.

    Linear and circular analyzers transmit a single amplitude; the unfiltered
    channel is the sum of two.
    """
    channel = PolarizerChannel(channel)
    if channel is PolarizerChannel.Full:
        return [ex, ey]
    if channel is PolarizerChannel.RHCP:
        return [(ex - 1j * ey) * _SQRT_HALF]
    if channel is PolarizerChannel.LHCP:
        return [(ex + 1j * ey) * _SQRT_HALF]
    return [linear_analyzer(channel.angle, ex, ey)]


def linear_analyzer(angle_deg, ex, ey):
    # exact 0/1/sqrt(1/2) weights for the four standard angles
    exact = {0: (1.0, 0.0), 45: (_SQRT_HALF, _SQRT_HALF), 90: (0.0, 1.0),
             135: (-_SQRT_HALF, _SQRT_HALF)}
    if angle_deg in exact:
        c, s = exact[angle_deg]
    else:
        a = np.deg2rad(angle_deg)
        c, s = np.cos(a), np.sin(a)
    return ex * c + ey * s


def _abs2(z):
    return z.real * z.real + z.imag * z.imag


def project(channel: PolarizerChannel, field: FieldMap) -> np.ndarray:
    amps = analyzer_amplitudes(channel, field.ex, field.ey)
    out = _abs2(amps[0])
    for a in amps[1:]:
        out = out + _abs2(a)
    return out


def project_stack(channels, field: FieldMap) -> list:
    if len(channels) == 0:
        raise EmptyChannelSet("channel set is empty")
    return [project(c, field) for c in channels]


def stokes_from_channels(images) -> StokesMap:
    """Stokes maps from the seven images in canonical channel order."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if len(images) != len(CANONICAL):
        raise DimensionMismatch(f"expected {len(CANONICAL)} images, got {len(images)}")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise DimensionMismatch(f"images are not co-registered: {[im.shape for im in images]}")
    _, lp0, lp45, lp90, lp135, rhcp, lhcp = images
    return StokesMap(lp0 + lp90, lp0 - lp90, lp45 - lp135, rhcp - lhcp)


def stokes_from_field(field: FieldMap) -> StokesMap:
    return stokes_from_channels(project_stack(CANONICAL, field))
