"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` and a short ``code`` so the command line front end can map
failures to process exit statuses without inspecting messages.
"""


class CondenseError(Exception):
    exit_code = 1
    code = "error"


class UsageError(CondenseError):
    exit_code = 2
    code = "usage"


class DataError(CondenseError):
    exit_code = 3
    code = "data"


class ShapeError(CondenseError, ValueError):
    """Operand shapes do not agree."""

    exit_code = 4
    code = "shape"


class ModelError(CondenseError):
    exit_code = 4
    code = "model"


class FormatError(ModelError):
    """Base for model file decoding failures; ``code`` is a stable identifier."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class TruncatedPayloadError(FormatError):
    code = "truncated_payload"


class InconsistentLayersError(FormatError):
    code = "inconsistent_layers"


class NumericError(CondenseError, FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""

    exit_code = 5
    code = "numeric"

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
