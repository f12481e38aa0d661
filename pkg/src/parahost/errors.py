"""Exception types raised across the package."""


class ParahostError(Exception):
    """Base class for all package errors."""


class InvalidParameter(ParahostError, ValueError):
    """A model parameter violates its invariant."""


class DegenerateMutation(ParahostError):
    """delta2 == 0: eigenvector slopes and the limiting ratio are undefined."""


class ReducibleGenerator(ParahostError):
    """The K-type generator is not irreducible."""


class InvalidInit(ParahostError, ValueError):
    """Simulation started from an invalid initial state."""


class AllExtinct(ParahostError):
    """No replicate survived to the horizon."""


class NotSupercritical(ParahostError, ValueError):
    """Operation requires a supercritical process."""


class MaxTimeExceeded(ParahostError):
    """A Monte Carlo path did not finish before the configured horizon."""


class NeverSubcritical(ParahostError):
    """The lethality ladder never becomes subcritical before the level cap."""


class AlreadySubcritical(ParahostError):
    """k* == 0: the initial level is already subcritical (no epidemic)."""
