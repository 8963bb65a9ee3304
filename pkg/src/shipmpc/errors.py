"""Exception hierarchy shared by the solver, dispatch and simulation layers."""


class ShipMpcError(Exception):
    """Base class for all package errors."""


class QpError(ShipMpcError):
    """Malformed or unsupported quadratic program."""


class QpDimensionError(QpError, ValueError):
    """Array shapes of a QP are mutually inconsistent."""


class QpNotConvexError(QpError, ValueError):
    """Cost matrix is asymmetric or has a negative eigenvalue beyond tolerance."""


class QpUnboundedError(QpError):
    """The objective decreases without bound along a feasible ray."""


class ConfigError(ShipMpcError, ValueError):
    """Invalid configuration value or structure.

    ``key`` is the dotted path of the offending entry and ``line`` the
    1-based line in the source text, when known.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InfeasibleDispatchError(ShipMpcError):
    """The dispatch QP has no feasible point.

    ``violation`` is the minimum total constraint violation found by the
    feasibility phase (scaled units); ``step`` is the receding-horizon step
    at which it happened, if any.
    """

    def __init__(self, message, violation, step=None):
        self.violation = violation
        self.step = step
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(f"{message}; minimum violation {violation:.3e}")


class PlantCollapseError(ShipMpcError):
    """Bus voltage fell below the constant-power-load guard."""

    def __init__(self, message, time=None, step=None):
        self.time = time
        self.step = step
        super().__init__(message)
