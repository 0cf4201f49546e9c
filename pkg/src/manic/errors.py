"""Exception types shared across the package.

The CLI maps these onto exit codes: precondition/usage failures exit with 2,
runtime failures (divergence, corrupt files) with 3.
"""


class ManicError(Exception):
    """Base class for all package-specific errors."""


class TopologyError(ManicError, ValueError):
    """Network layer sizes are structurally invalid."""


class ShapeError(ManicError, ValueError):
    """A vector or matrix does not have the required dimensions."""


class NumericError(ManicError, ValueError):
    """An input contains non-finite values."""


class DivergedError(ManicError, RuntimeError):
    """Training produced a non-finite loss; parameters were left untouched."""


class PreconditionError(ManicError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class EncoderAbsentError(ManicError, RuntimeError):
    """encode() was called on a learning system built without an encoder."""


class StaleScoresError(ManicError, RuntimeError):
    """A plan pool was read before (re-)evaluation made its scores valid."""


class FormatError(ManicError, ValueError):
    """A binary artifact file is malformed or has the wrong magic/version."""


class StoreError(ManicError, ValueError):
    """A candidate-store operation referenced unknown or non-pending items."""
