"""Exception taxonomy shared across the library and the CLI.

The CLI maps these onto process exit codes: configuration problems
(ConfigError, ArgumentError) exit 2, data problems (IoError, FormatError)
exit 3, and anything else that escapes exits 4.
"""


class NoisescopeError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(NoisescopeError):
    """A function was called with out-of-contract arguments."""


class ConfigError(NoisescopeError):
    """A config file or CLI flag combination is invalid."""


class IoError(NoisescopeError):
    """An input file is missing or unreadable."""


class FormatError(NoisescopeError):
    """An input file exists but its contents violate the format."""


class AnnotationError(NoisescopeError):
    """Annotation acquisition failed (e.g. endpoint unreachable)."""


class TrainingDiverged(NoisescopeError):
    """Training produced non-finite loss or parameters."""


class NoNeighborEvidence(NoisescopeError):
    """A node has no annotated neighbors to compute agreement over."""
