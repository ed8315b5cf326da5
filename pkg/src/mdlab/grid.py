"""Square sampling grid over the fiber cross-section."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class RenderGrid:
    """Pixel grid centred on the fiber axis.

    ``pixels_per_radius`` samples span one core radius, so the default of 50
    puts 100 pixels across the core diameter.  ``margin`` is the extra span on
    each side as a fraction of the core diameter (10 %), giving 121 pixels per
    axis with the centre pixel exactly on the axis.

    Rows index y and columns index x, both increasing with the array index.
    """

    core_radius: float = 12.5
    pixels_per_radius: int = 50
    margin: float = 0.1

    @property
    def half_count(self) -> int:
        return int(round((1.0 + 2.0 * self.margin) * self.pixels_per_radius))

    @property
    def n_pixels(self) -> int:
        return 2 * self.half_count + 1

    @property
    def pitch(self) -> float:
        return self.core_radius / self.pixels_per_radius

    @property
    def pixel_area(self) -> float:
        return self.pitch * self.pitch

    @property
    def center(self) -> int:
        return self.half_count

    @cached_property
    def axis(self) -> np.ndarray:
        # integer offsets keep the grid exactly symmetric about 0
        return (np.arange(self.n_pixels) - self.half_count) * self.pitch

    @cached_property
    def polar(self):
        """(r/a, theta) arrays of shape (n, n), indexed [row=y, col=x]."""
        x = self.axis[None, :]
        y = self.axis[:, None]
        rho = np.hypot(x, y) / self.core_radius
        theta = np.arctan2(y, x)
        return rho, theta

    def to_dict(self) -> dict:
        return {"pixels": self.n_pixels, "pitch_over_a": 1.0 / self.pixels_per_radius}
