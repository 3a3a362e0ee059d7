"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI:
    ValidationError      -> 1
    AuditError / ContractViolation -> 3
    everything else      -> 2
"""


class HairMotionError(Exception):
    """Base class for all package errors."""


class ValidationError(HairMotionError):
    """Bad user input: shapes, counts, missing files, config mistakes."""


class SimulationDivergedError(HairMotionError):
    """Non-finite particle positions; message names the offending frame."""

    def __init__(self, frame: int):
        super().__init__(f"simulation diverged at frame {frame}: non-finite positions")
        self.frame = frame


class AuditError(HairMotionError):
    """A frozen parameter group changed, or group membership is inconsistent."""


class ContractViolation(HairMotionError):
    """A protocol rule was broken, e.g. sampling with the domain adapter loaded."""
