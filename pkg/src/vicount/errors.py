"""Exception taxonomy shared by all modules, with process exit codes for the CLI."""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4


class VicError(Exception):
    """Base class for package errors."""

    exit_code = EXIT_VALIDATION


class ParseError(VicError):
    """Malformed input record; message names the offending line."""


class ValidationError(VicError):
    """Data violates a structural invariant."""


class ConfigError(VicError):
    """Configuration value out of its allowed range or shape."""


class LabelingError(VicError):
    """Identity labels required for the requested operation are missing."""


class CapacityError(VicError):
    """Frame population exceeds a configured bound; message names the knob."""


class CheckpointError(VicError):
    """Checkpoint file is incompatible with the requested configuration."""


class DivergenceError(VicError):
    """Training produced a non-finite loss; carries the last good parameters."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, message, last_good_state=None, history=None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.history = history or []
