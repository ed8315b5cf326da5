"""Exception hierarchy shared across the package.

The CLI maps the three base classes onto process exit codes, so every
concrete error derives from exactly one of them.
"""


class MdlabError(Exception):
    """Base class for all package errors."""


class DataError(MdlabError, ValueError):
    """Bad input data, file format or shape (CLI exit code 3)."""


class NumericError(MdlabError, ArithmeticError):
    """A numerical procedure failed (CLI exit code 4)."""


# -- physics / fields -------------------------------------------------------

class ModeNotGuided(DataError):
    pass


class NoRootFound(NumericError):
    pass


class AllZeroCoefficients(DataError):
    pass


# -- polarimetry / imaging --------------------------------------------------

class EmptyChannelSet(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class WrongWidth(DataError):
    pass


class AllZeroStack(DataError):
    pass


class AllZeroImage(DataError):
    pass


# -- file formats ------------------------------------------------------------

class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class InvariantViolation(DataError):
    pass


class FingerprintMismatch(DataError):
    pass


# -- learning / solvers --------------------------------------------------------

class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class BadShape(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NonFiniteGradient(NumericError):
    def __init__(self, layer):
        super().__init__(f"non-finite gradient in layer {layer!r}")
        self.layer = layer


class NoConvergence(NumericError):
    def __init__(self, result):
        super().__init__(f"no start converged (best residual {result.residual:.3e})")
        self.result = result


class PhysicsAssertion(NumericError):
    """A physical identity that must hold numerically did not."""
