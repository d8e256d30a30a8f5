"""Exception classes shared across the package.

Every error raised on purpose derives from :class:`LilypadError`, so the
command line front end can report a single machine-parseable class name.
"""


class LilypadError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(LilypadError, ValueError):
    """A parameter violates a documented precondition."""


class WindowError(LilypadError, ValueError):
    """A query reaches outside the sampled lattice window."""


class InfeasibleScenario(LilypadError, ValueError):
    """A scenario specification cannot be realised; the message names the inequality."""


class UnsettledSite(LilypadError, KeyError):
    """A path or value was requested for a site the solver never reached."""


class SnapshotError(LilypadError, KeyError):
    """A time is not among the recorded snapshot or grid times."""


class EnvironmentMismatch(LilypadError, ValueError):
    """Two objects that must share an environment do not."""


class StiffnessError(LilypadError, ArithmeticError):
    """The adaptive integrator could not make progress (step underflow or NaN)."""


class FormatError(LilypadError, ValueError):
    """A text artifact could not be parsed."""
