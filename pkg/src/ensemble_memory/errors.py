"""Exception hierarchy shared by every simulator layer."""


class SimulationError(Exception):
    """Base class for all simulator errors.

    ``stage`` is filled in by the protocol driver so that a failure deep in the
    Fock algebra can be reported against the protocol stage that caused it.
    """

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class TruncationError(SimulationError):
    """A mode occupancy would exceed the configured truncation bound."""


class UnknownModeError(SimulationError):
    """A state occupies a mode that a linear map would overwrite."""


class ZeroStateError(SimulationError):
    """Normalization of the null vector was requested."""


class UnnormalizedStateError(SimulationError):
    pass


class UnitarityError(SimulationError):
    """Coefficient rows of a linear mode map are not orthonormal."""


class DuplicateModeError(SimulationError):
    pass


class OccupiedTargetError(SimulationError):
    """Retrieval target photon mode is already occupied."""


class UnsupportedModeError(SimulationError):
    pass


class RejectClassError(SimulationError):
    """A Pauli correction was requested for a rejected pattern."""


class MaxAttemptsExceeded(SimulationError):
    pass


class ConfigError(Exception):
    """Configuration text could not be parsed."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
