"""Exception hierarchy for lochrig."""


class LochrigError(Exception):
    """Base class for all lochrig errors."""


class ConfigError(LochrigError):
    """Invalid or inconsistent run configuration."""


class NonTimelikeU(LochrigError):
    """A vector that must be timelike future-directed is not."""


class NonTimelikeInput(LochrigError):
    """Input vector fails the required timelike condition."""


class NonTimelikeResult(LochrigError):
    """A quadrature produced a non-timelike mean tangent (under-resolved section)."""


class DegenerateDirection(LochrigError):
    """g(u, zeta(n)) <= 0: the null direction degenerates for this u."""


class InvalidInterval(LochrigError):
    """Affine parameter interval is invalid."""


class MarginViolation(LochrigError):
    """Grid node too close to the boundary for the configured stencil."""


class CFLViolation(LochrigError):
    """Time step violates the advective stability bound."""


class BlowUp(LochrigError):
    """Field left the configured stability corridor during evolution."""


class GridTooCoarse(LochrigError):
    """Frequency-grid derivative error estimate exceeds the configured budget."""
