"""Exception types shared across the package.

Exit-code mapping for the CLI lives in cli.py; here we only distinguish
configuration problems from physics preconditions and runtime failures.
"""


class TrapLoadError(Exception):
    """Base class for all package errors."""

    category = "runtime"


class ConfigError(TrapLoadError):
    """Malformed or inconsistent configuration / layout input."""

    category = "config"


class CoreRegion(TrapLoadError):
    """Field requested inside (or too close to) a conductor core."""

    category = "physics"


class UntrappableState(TrapLoadError):
    """Spin state with mF*gF <= 0 cannot be held in a field minimum."""

    category = "physics"


class NoConvergence(TrapLoadError):
    """Iterative search exhausted its budget without meeting tolerance."""

    category = "physics"


class SaddleDetected(TrapLoadError):
    """Stationary point found but the Hessian has a negative eigenvalue."""

    category = "physics"


class NotAMinimum(TrapLoadError):
    """Frequencies requested at a point whose Hessian is not positive definite."""

    category = "physics"


class Unbounded(TrapLoadError):
    """No escape saddle below the search-box boundary energy."""

    category = "physics"


class NoBarrier(TrapLoadError):
    """Path potential decreases monotonically into the trap: no entrance crest."""

    category = "physics"


class NoTrap(TrapLoadError):
    """Configured currents do not produce a bound minimum."""

    category = "physics"


class CellOverflow(TrapLoadError):
    """A collision cell exceeded its particle cap (grid misconfiguration)."""

    category = "runtime"


class Underpopulated(TrapLoadError):
    """Too few particles in the peak cell for a reliable density estimate."""

    category = "runtime"


class InconsistentSpec(TrapLoadError):
    """Beam schedule parameters exceed configured hardware limits."""

    category = "config"


class ObjectiveFailure(TrapLoadError):
    """An optimizer objective evaluation raised; candidate scored -inf."""

    category = "runtime"
