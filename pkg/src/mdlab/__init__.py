"""Polarization-resolved modal decomposition of the LP11 vector-mode group."""

from .errors import DataError, MdlabError, NumericError
from .fiber_modes import FiberSpec, ModeCoefficients, ModeIndex, solve_lp11, superpose
from .grid import RenderGrid
from .polarimetry import ChannelSet, PolarizerChannel

__version__ = "0.1.0"

__all__ = ["ChannelSet", "DataError", "FiberSpec", "MdlabError", "ModeCoefficients",
           "ModeIndex", "NumericError", "PolarizerChannel", "RenderGrid", "solve_lp11",
           "superpose", "__version__"]
