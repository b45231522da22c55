"""Error taxonomy shared across the package.

The CLI maps each class to a machine-parsable category on exit.
"""


class PagnetError(Exception):
    category = "error"


class ConfigurationError(PagnetError):
    """Invalid configuration: bad env parameters, odd encoding dims, etc."""

    category = "config"


class UsageError(PagnetError):
    """API misuse: acting after done, unavailable action, all-masked action set."""

    category = "usage"


class InputError(PagnetError):
    """Malformed runtime inputs: shape mismatch, non-finite values."""

    category = "input"


class CheckpointError(PagnetError):
    """Checkpoint load/validation failure; message names the failing field."""

    category = "checkpoint"


class TrainingFault(PagnetError):
    """Non-finite loss or other irrecoverable optimization failure."""

    category = "training"
