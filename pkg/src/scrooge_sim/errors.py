"""Exception hierarchy shared by all simulator modules."""


class ScroogeSimError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigurationError(ScroogeSimError, ValueError):
    """Unknown level, governor, regime or malformed configuration."""


class CalibrationError(ScroogeSimError, ValueError):
    """Missing or inconsistent calibration data."""


class ProfileValidationError(CalibrationError):
    """A device profile violates one or more invariants.

    ``problems`` holds one message per violated invariant, each naming the
    table coordinates involved.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TraceRangeError(ScroogeSimError, ValueError):
    """Integration window lies outside the trace span."""


class TraceFormatError(ScroogeSimError, ValueError):
    """Power trace CSV does not follow the expected layout."""


class UndefinedMetricError(ScroogeSimError, ZeroDivisionError):
    """ETR requested for zero operations."""


class PairingError(ScroogeSimError, KeyError):
    """An undervolted run has no matching nominal baseline."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class LifecycleError(ScroogeSimError, RuntimeError):
    """Operation not allowed in the instance's current lifecycle phase."""


class InstanceUnavailableError(LifecycleError):
    """The instance crashed and cannot answer queries."""


class SchemaError(ScroogeSimError, ValueError):
    """Scenario document does not match the schema.

    ``path`` is the dotted field path of the offending entry.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
